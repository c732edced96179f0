"""High-fidelity state/adjoint solves, potential, gradient, sensitivities.

One sparse factorization per parameter value serves the state solve, the
adjoint solve, and all ``2d`` parameter-sensitivity solves.  The operator
here is symmetric, but adjoint solves are routed through a transpose-solve
entry point so a non-symmetric extension stays correct.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .fem import SolveFailed

RESIDUAL_RTOL = 1e-10


class Factorization:
    """Assembled operator at one parameter with a reusable factorization."""

    def __init__(self, problem, theta):
        self.theta = np.asarray(theta, dtype=float)
        self.A, self.f = problem.operator(theta)
        t0 = time.perf_counter()
        if problem.solver == "cg":
            self._lu = None
            self._diag = self.A.diagonal()
        else:
            self._lu = spla.splu(self.A.tocsc())
        self.factor_seconds = time.perf_counter() - t0
        self.n_solves = 0

    def _check(self, x, b, transpose):
        op = self.A.T if transpose else self.A
        r = np.linalg.norm(op @ x - b)
        scale = np.linalg.norm(b)
        if r > RESIDUAL_RTOL * (scale if scale > 0 else 1.0):
            raise SolveFailed(
                f"linear solve residual {r:.3e} exceeds {RESIDUAL_RTOL:.1e} * {scale:.3e}"
            )

    def solve(self, b, transpose=False):
        if self._lu is not None:
            x = self._lu.solve(b, trans="T" if transpose else "N")
        else:
            M = spla.LinearOperator(self.A.shape, matvec=lambda v: v / self._diag)
            x, info = spla.cg(self.A.T if transpose else self.A, b, rtol=1e-12, atol=0.0, M=M)
            if info != 0:
                raise SolveFailed(f"conjugate gradient did not converge (info={info})")
        self._check(x, b, transpose)
        self.n_solves += 1
        return x


@dataclass
class HiFiEvaluation:
    """State, adjoint, potential, and gradient at one parameter."""

    theta: np.ndarray
    u: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    eta: float = 0.0
    grad_eta: np.ndarray = None
    factorization_reused: bool = False
    solve_seconds: float = 0.0


def solve_state(problem, theta, op=None):
    """Solve the forward problem at ``theta``."""
    op = op or Factorization(problem, theta)
    return op.solve(op.f)


def adjoint_rhs(problem, u):
    """Right-hand side of the adjoint problem: the misfit functional."""
    residual = problem.y - problem.observe(u)
    return problem.obs_matrix @ problem.misfit_weighted(residual)


def solve_adjoint(problem, theta, u, op=None):
    """Solve the adjoint problem given the state at the same ``theta``."""
    op = op or Factorization(problem, theta)
    return op.solve(adjoint_rhs(problem, u), transpose=True)


def potential_of_state(problem, u):
    """Noise-weighted half squared misfit of a state vector."""
    residual = problem.y - problem.observe(u)
    return 0.5 * float(residual @ problem.misfit_weighted(residual))


def potential(problem, theta, op=None):
    """Potential (negative log-likelihood) at ``theta``; returns ``(eta, u)``."""
    op = op or Factorization(problem, theta)
    u = op.solve(op.f)
    return potential_of_state(problem, u), u


def gradient_from_solutions(problem, theta, u, psi):
    """Parameter gradient of the potential by the adjoint formula.

    Component ``j`` is ``psi^T (d_j A) u - psi^T (d_j f)`` expanded through
    the affine coefficient gradients.
    """
    _, _, dcA, dcF = problem.eval_coefficients(theta)
    a_terms = np.array([psi @ (blk @ u) for blk in problem.A_blocks])
    f_terms = np.array([psi @ vec for vec in problem.f_blocks])
    return dcA.T @ a_terms - dcF.T @ f_terms


def grad_potential(problem, theta, op=None):
    """Potential gradient at ``theta``; returns ``(grad, u, psi)``."""
    op = op or Factorization(problem, theta)
    u = op.solve(op.f)
    psi = op.solve(adjoint_rhs(problem, u), transpose=True)
    return gradient_from_solutions(problem, theta, u, psi), u, psi


def solve_sensitivities(problem, theta, u, psi, op=None):
    """Parameter sensitivities of the state and adjoint.

    ``du[j]`` solves ``A du_j = d_j f - (d_j A) u`` and ``dpsi[j]`` solves
    ``A^T dpsi_j = -(d_j A)^T psi - O P O^T du_j`` with ``P`` the noise
    precision; the factorization is reused across all ``2d`` solves.
    """
    op = op or Factorization(problem, theta)
    _, _, dcA, dcF = problem.eval_coefficients(theta)
    d = problem.dim
    du = np.empty((d, problem.n_dofs))
    dpsi = np.empty((d, problem.n_dofs))
    Au = [blk @ u for blk in problem.A_blocks]
    for j in range(d):
        rhs_u = -sum(dcA[k, j] * Au[k] for k in range(len(Au)))
        for k, vec in enumerate(problem.f_blocks):
            rhs_u = rhs_u + dcF[k, j] * vec
        du[j] = op.solve(rhs_u)
        rhs_psi = -sum(
            dcA[k, j] * (blk.T @ psi) for k, blk in enumerate(problem.A_blocks)
        ) - problem.obs_matrix @ problem.misfit_weighted(problem.observe(du[j]))
        dpsi[j] = op.solve(rhs_psi, transpose=True)
    return du, dpsi


def evaluate(problem, theta, op=None):
    """Full evaluation (state, adjoint, potential, gradient) at ``theta``."""
    t0 = time.perf_counter()
    reused = op is not None
    op = op or Factorization(problem, theta)
    u = op.solve(op.f)
    psi = op.solve(adjoint_rhs(problem, u), transpose=True)
    eta = potential_of_state(problem, u)
    grad = gradient_from_solutions(problem, theta, u, psi)
    return HiFiEvaluation(
        theta=np.asarray(theta, dtype=float),
        u=u,
        psi=psi,
        eta=eta,
        grad_eta=grad,
        factorization_reused=reused,
        solve_seconds=time.perf_counter() - t0,
    )
