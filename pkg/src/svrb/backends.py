"""Posterior backends: the contract "given theta, return (eta, grad eta)".

Three production implementations (high-fidelity, fixed reduced basis,
adaptive reduced basis -- the last two share :class:`RBBackend`, the
adaptive driver mutates the model between sweeps) plus an analytic
Gaussian backend for sampler tests.
"""

import time

import numpy as np

from . import hifi


class HiFiBackend:
    """Full finite-element evaluations; one factorization per parameter."""

    descriptor = "hifi"

    def __init__(self, problem):
        self.problem = problem
        self.timers = {"hifi_solve": 0.0}
        self.n_evaluations = 0

    def evaluate(self, theta):
        t0 = time.perf_counter()
        ev = hifi.evaluate(self.problem, theta)
        self.timers["hifi_solve"] += time.perf_counter() - t0
        self.n_evaluations += 1
        return ev.eta, ev.grad_eta

    def potential(self, theta):
        t0 = time.perf_counter()
        eta, _ = hifi.potential(self.problem, theta)
        self.timers["hifi_solve"] += time.perf_counter() - t0
        self.n_evaluations += 1
        return eta


class RBBackend:
    """Reduced-basis evaluations of the corrected potential and gradient.

    With ``corrected=False`` the plain reduced quantities are returned
    instead.  The same instance serves both the fixed and the adaptive
    pipeline; the adaptive driver enriches ``self.model`` between sweeps.

    Line-search trials (``potential``) are guarded against loss of
    coercivity: the surrogate extrapolates smoothly into regions where the
    full operator is not even well posed, so without a guard a trial step
    can report an arbitrarily attractive fake merit.  A conservative O(J)
    field bound keeps the typical cost mesh-independent; only when that
    bound is inconclusive does the exact per-quadrature-point check run.
    """

    def __init__(self, problem, model, corrected=True, adaptive=False):
        self.problem = problem
        self.model = model
        self.corrected = corrected
        self.descriptor = "rb-adaptive" if adaptive else "rb-fixed"
        self.timers = {"rb_online": 0.0}
        self.n_evaluations = 0

    def evaluate(self, theta):
        t0 = time.perf_counter()
        ev = self.model.evaluate(self.problem, theta)
        self.timers["rb_online"] += time.perf_counter() - t0
        self.n_evaluations += 1
        if self.corrected:
            return ev.eta_delta, ev.grad_eta_delta
        return ev.eta_r, ev.grad_eta_r

    def potential(self, theta):
        if self.problem.conservative_field_min(theta) <= self.problem.coercivity_floor:
            # cheap bound inconclusive: let the exact check decide (rare)
            self.problem.check_coercive(theta)
        t0 = time.perf_counter()
        eta_r, eta_delta, _, _ = self.model.potential(self.problem, theta)
        self.timers["rb_online"] += time.perf_counter() - t0
        self.n_evaluations += 1
        return eta_delta if self.corrected else eta_r


class GaussianBackend:
    """Analytic Gaussian potential ``0.5 * ||theta - mean||^2`` for tests."""

    descriptor = "gaussian-toy"

    def __init__(self, mean):
        self.mean = np.asarray(mean, dtype=float)
        self.timers = {}

    def evaluate(self, theta):
        diff = np.asarray(theta, dtype=float) - self.mean
        return 0.5 * float(diff @ diff), diff

    def potential(self, theta):
        return self.evaluate(theta)[0]
