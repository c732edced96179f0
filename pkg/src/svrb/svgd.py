"""Stein variational gradient descent over a pluggable posterior backend.

Particles carry an RBF-kernel interacting system: each update moves every
particle along a sample-averaged direction combining score-weighted
attraction and kernel-gradient repulsion.  The kernel bandwidth follows
the median heuristic, the step size comes from a backtracking line search
on the sample-average potential, and the iteration stops when the largest
particle update drops below a tolerance.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .fem import CoercivityLost, SolveFailed
from .reduced import RBSolveFailed
from .runlog import IterationRecord, RunLog

_TRIAL_FAILURES = (CoercivityLost, SolveFailed, RBSolveFailed, FloatingPointError)


@dataclass
class SVGDConfig:
    n_particles: int = 64
    max_steps: int = 100
    tol: float = 1e-3
    alpha_init: float = 1.0
    max_backtracks: int = 20
    seed: int = 0


@dataclass
class ParticleEnsemble:
    particles: np.ndarray = field(repr=False)  # (M, d)
    iteration: int = 0
    eta: np.ndarray = field(default=None, repr=False)
    grad_eta: np.ndarray = field(default=None, repr=False)
    seed: int = 0

    @property
    def n_particles(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]


def prior_score(prior, thetas):
    """Gradient of the log prior density, zero for flat/uniform priors."""
    thetas = np.atleast_2d(thetas)
    if prior is None:
        return np.zeros_like(thetas)
    return prior.score(thetas)


def prior_neglog(prior, thetas):
    """Negative log prior density up to a constant (zero for flat priors)."""
    thetas = np.atleast_2d(thetas)
    if prior is None:
        return np.zeros(thetas.shape[0])
    return prior.neglog(thetas)


def median_bandwidth(particles):
    """Median heuristic ``h = med^2 / ln(M)`` with a fallback of 1.

    ``med`` is the median of all pairwise Euclidean distances; degenerate
    ensembles (single particle, coincident particles) fall back to 1.
    """
    m = particles.shape[0]
    if m < 2:
        return 1.0
    diff = particles[:, None, :] - particles[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(m, k=1)
    med = float(np.median(dist[iu]))
    logm = np.log(m)
    if med == 0.0 or logm == 0.0:
        return 1.0
    return med**2 / logm


def kernel_and_grad(theta, theta_other, h):
    """RBF kernel value and its gradient with respect to the first argument."""
    theta = np.asarray(theta, dtype=float)
    diff = theta - np.asarray(theta_other, dtype=float)
    k = np.exp(-np.sum(diff**2) / h)
    return k, -(2.0 / h) * diff * k


def svgd_direction(particles, scores, h):
    """Sample-average Stein direction at every particle.

    ``scores`` holds the log-posterior gradients at the particles; the
    returned array has one update direction per particle (row).
    """
    m = particles.shape[0]
    diff = particles[:, None, :] - particles[None, :, :]  # theta_m - theta_n
    sq = np.sum(diff**2, axis=-1)
    K = np.exp(-sq / h)  # K[m, n] = k(theta_m, theta_n)
    attract = K.T @ scores
    # gradient of k(theta_m, theta_n) w.r.t. theta_m, summed over m
    repulse = (2.0 / h) * (particles * K.sum(axis=0)[:, None] - K.T @ particles)
    return (attract + repulse) / m


def stopping_indicator(direction):
    """Largest particle-update norm."""
    if direction.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(direction, axis=1)))


def line_search(particles, direction, potential_fn, prior, alpha_init=1.0,
                max_backtracks=20):
    """Backtracking step-size search on the sample-average potential.

    The merit is the mean of (potential - log prior) over the shifted
    particles; a trial step is accepted once it strictly decreases the
    merit.  Backend failures at trial points count as infinite merit.
    Returns ``(alpha, exhausted, n_evaluations)``.
    """
    if not np.any(direction):
        return alpha_init, False, 0

    def merit(thetas):
        etas = np.array([potential_fn(t) for t in thetas])
        return float(np.mean(etas + prior_neglog(prior, thetas)))

    n_evals = 0
    try:
        base = merit(particles)
    except _TRIAL_FAILURES as exc:
        raise RuntimeError(
            f"line-search reference merit failed at the current particles: {exc}"
        ) from exc
    n_evals += len(particles)
    alpha = alpha_init
    for _ in range(max_backtracks):
        try:
            trial = merit(particles + alpha * direction)
            n_evals += len(particles)
        except _TRIAL_FAILURES:
            trial = np.inf
        if np.isfinite(trial) and trial < base:
            return alpha, False, n_evals
        alpha *= 0.5
    return alpha, True, n_evals


def draw_prior(prior, m, seed):
    rng = np.random.default_rng(seed)
    return prior.sample(rng, m)


def svgd_run(backend, prior, config, hook=None, initial_particles=None,
             alpha_schedule=None, log_meta=None):
    """Run the sampler; returns ``(ensemble, runlog)``.

    ``hook(l, ensemble, latest_t, runlog)`` is invoked at the start of every
    iteration (used by the adaptive driver to refresh its surrogate).  When
    ``alpha_schedule`` is given, the line search is skipped, the recorded
    step sizes are replayed, and exactly ``len(alpha_schedule)`` iterations
    run -- this pins matched trajectories for discrepancy studies.
    """
    if initial_particles is not None:
        particles = np.array(initial_particles, dtype=float)
    else:
        if prior is None:
            raise ValueError("a flat prior cannot be sampled; pass initial_particles")
        particles = draw_prior(prior, config.n_particles, config.seed)
    ensemble = ParticleEnsemble(particles=particles, seed=config.seed)
    log = RunLog(meta={"backend": backend.descriptor, "seed": config.seed,
                       **(log_meta or {})})

    replay = alpha_schedule is not None
    max_steps = len(alpha_schedule) if replay else config.max_steps
    t = 2.0 * config.tol
    l = 0
    while l < max_steps and (replay or t > config.tol):
        extra = {}
        if hook is not None:
            extra = hook(l, ensemble, None if l == 0 else t, log) or {}

        t0 = time.perf_counter()
        etas = np.empty(ensemble.n_particles)
        grads = np.empty_like(ensemble.particles)
        for m, theta in enumerate(ensemble.particles):
            try:
                etas[m], grads[m] = backend.evaluate(theta)
            except _TRIAL_FAILURES as exc:
                raise RuntimeError(
                    f"backend {backend.descriptor} failed at particle {m} "
                    f"of iteration {l}: {exc}"
                ) from exc
        if not (np.isfinite(etas).all() and np.isfinite(grads).all()):
            bad = int(np.argmax(~(np.isfinite(etas) & np.isfinite(grads).all(axis=1))))
            raise RuntimeError(
                f"backend {backend.descriptor} returned non-finite values at "
                f"particle {bad} of iteration {l}"
            )
        ensemble.eta, ensemble.grad_eta = etas, grads
        log.snapshot(l, ensemble.particles, etas)

        scores = prior_score(prior, ensemble.particles) - grads
        h = median_bandwidth(ensemble.particles)
        direction = svgd_direction(ensemble.particles, scores, h)
        t = stopping_indicator(direction)

        flags = []
        if replay:
            alpha = float(alpha_schedule[l])
        else:
            alpha, exhausted, _ = line_search(
                ensemble.particles, direction, backend.potential, prior,
                config.alpha_init, config.max_backtracks,
            )
            if exhausted:
                flags.append("line_search_exhausted")

        updated = ensemble.particles + alpha * direction
        n_clamped = 0
        if prior is not None:
            updated, n_clamped = prior.clamp(updated)
        ensemble.particles = updated
        ensemble.iteration = l + 1

        record = IterationRecord(
            l=l, t=t, alpha=alpha, backend=backend.descriptor,
            clamped=n_clamped, flags=flags + extra.pop("flags", []),
            timers=dict(getattr(backend, "timers", {})) | {
                "svgd_overhead": time.perf_counter() - t0},
        )
        for key, value in extra.items():
            setattr(record, key, value)
        log.add(record)
        l += 1

    log.snapshot(l, ensemble.particles)  # final (or prior-only) state
    return ensemble, log
