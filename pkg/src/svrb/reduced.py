"""Reduced-basis surrogate with dual-weighted-residual correction.

Two reduced spaces are maintained: one for the state and one for the
adjoint, each spanned by orthonormalized high-fidelity snapshots (in the
H^1 inner product).  All parameter-independent projections of the affine
blocks are kept up to date incrementally on enrichment, so every online
evaluation -- reduced state, reduced adjoint, the dual-weighted residual,
the corrected potential, incremental solves, and both gradients -- costs
work independent of the high-fidelity dimension.

Conventions: reduced matrices follow the Galerkin layout ``B[m, n] =
A(basis_n, basis_m)``; the cross block maps state coefficients to adjoint
test functions, ``C[m, n] = A(state_n, adjoint_m)``.
"""

import json
from dataclasses import dataclass, field

import numpy as np


class RBSolveFailed(RuntimeError):
    """The reduced dense system is singular or empty."""


@dataclass
class RBEvaluation:
    """All online quantities at one parameter."""

    theta: np.ndarray
    u_r: np.ndarray = field(repr=False)
    psi_r: np.ndarray = field(repr=False)
    u_hat: np.ndarray = field(repr=False)
    psi_hat: np.ndarray = field(repr=False)
    eta_r: float = 0.0
    delta: float = 0.0
    eta_delta: float = 0.0
    grad_eta_r: np.ndarray = None
    grad_eta_delta: np.ndarray = None


class ReducedModel:
    """Orthonormal state/adjoint bases plus all reduced affine blocks."""

    def __init__(self, basis_u, basis_psi, Au, Ap, Aup, fu, fp, Ou, Op,
                 provenance, deflation_tol=1e-10):
        self.basis_u = basis_u      # (N_h, N_u)
        self.basis_psi = basis_psi  # (N_h, N_p)
        self.Au = Au                # (J_A, N_u, N_u)
        self.Ap = Ap                # (J_A, N_p, N_p)
        self.Aup = Aup              # (J_A, N_p, N_u)
        self.fu = fu                # (J_F, N_u)
        self.fp = fp                # (J_F, N_p)
        self.Ou = Ou                # (N_u, s)
        self.Op = Op                # (N_p, s)
        self.provenance = provenance
        self.deflation_tol = deflation_tol
        self.deflated = []          # (which, theta) for skipped snapshots

    # -- construction ----------------------------------------------------

    @classmethod
    def empty(cls, problem, deflation_tol=1e-10):
        """Model with zero-size bases, ready for enrichment."""
        n, ja, jf, s = problem.n_dofs, problem.n_diffusion_terms, problem.n_load_terms, problem.n_obs
        return cls(
            basis_u=np.zeros((n, 0)),
            basis_psi=np.zeros((n, 0)),
            Au=np.zeros((ja, 0, 0)),
            Ap=np.zeros((ja, 0, 0)),
            Aup=np.zeros((ja, 0, 0)),
            fu=np.zeros((jf, 0)),
            fp=np.zeros((jf, 0)),
            Ou=np.zeros((0, s)),
            Op=np.zeros((0, s)),
            provenance=[],
            deflation_tol=deflation_tol,
        )

    @property
    def n_state(self):
        return self.basis_u.shape[1]

    @property
    def n_adjoint(self):
        return self.basis_psi.shape[1]

    def _orthogonalize(self, problem, snapshot, basis):
        """Modified Gram-Schmidt in the H^1 inner product, one re-pass.

        Returns the normalized remainder, or None if the snapshot is
        (numerically) already in the span.
        """
        ref = problem.v_norm(snapshot)
        v = snapshot.astype(float, copy=True)
        for _ in range(2):
            if basis.shape[1]:
                v = v - basis @ (basis.T @ (problem.gram @ v))
        nrm = problem.v_norm(v)
        if nrm <= self.deflation_tol * ref or nrm == 0.0:
            return None
        return v / nrm

    def enrich(self, problem, u_h, psi_h, theta):
        """Add a state and an adjoint snapshot taken at ``theta``.

        Each snapshot is orthogonalized against its basis and appended only
        if the remainder is not negligible; all reduced blocks grow by one
        row/column without any full recomputation.  Returns
        ``(state_added, adjoint_added)``.
        """
        added_u = added_p = False
        v = self._orthogonalize(problem, u_h, self.basis_u)
        if v is not None:
            self._append_state(problem, v)
            added_u = True
        else:
            self.deflated.append(("state", np.asarray(theta, dtype=float)))
        w = self._orthogonalize(problem, psi_h, self.basis_psi)
        if w is not None:
            self._append_adjoint(problem, w)
            added_p = True
        else:
            self.deflated.append(("adjoint", np.asarray(theta, dtype=float)))
        self.provenance.append(np.asarray(theta, dtype=float).copy())
        return added_u, added_p

    def _append_state(self, problem, v):
        old = self.basis_u
        nu = old.shape[1]
        Av = [blk @ v for blk in problem.A_blocks]
        Atv = [blk.T @ v for blk in problem.A_blocks]
        Au_new = np.zeros((len(Av), nu + 1, nu + 1))
        Aup_new = np.zeros((len(Av), self.n_adjoint, nu + 1))
        for j in range(len(Av)):
            Au_new[j, :nu, :nu] = self.Au[j]
            Au_new[j, :nu, nu] = old.T @ Av[j]       # column: A(v, old_m)
            Au_new[j, nu, :nu] = old.T @ Atv[j]      # row: A(old_n, v)
            Au_new[j, nu, nu] = v @ Av[j]
            Aup_new[j, :, :nu] = self.Aup[j]
            Aup_new[j, :, nu] = self.basis_psi.T @ Av[j]
        self.Au, self.Aup = Au_new, Aup_new
        self.fu = np.column_stack([self.fu, [vec @ v for vec in problem.f_blocks]])
        self.Ou = np.vstack([self.Ou, problem.obs_matrix.T @ v])
        self.basis_u = np.column_stack([old, v])

    def _append_adjoint(self, problem, w):
        old = self.basis_psi
        np_ = old.shape[1]
        Aw = [blk @ w for blk in problem.A_blocks]
        Atw = [blk.T @ w for blk in problem.A_blocks]
        Ap_new = np.zeros((len(Aw), np_ + 1, np_ + 1))
        Aup_new = np.zeros((len(Aw), np_ + 1, self.n_state))
        for j in range(len(Aw)):
            Ap_new[j, :np_, :np_] = self.Ap[j]
            Ap_new[j, :np_, np_] = old.T @ Aw[j]
            Ap_new[j, np_, :np_] = old.T @ Atw[j]
            Ap_new[j, np_, np_] = w @ Aw[j]
            Aup_new[j, :np_, :] = self.Aup[j]
            Aup_new[j, np_, :] = self.basis_u.T @ Atw[j]  # A(state_n, w)
        self.Ap, self.Aup = Ap_new, Aup_new
        self.fp = np.column_stack([self.fp, [vec @ w for vec in problem.f_blocks]])
        self.Op = np.vstack([self.Op, problem.obs_matrix.T @ w])
        self.basis_psi = np.column_stack([old, w])

    # -- online assembly ---------------------------------------------------

    def _online_operators(self, problem, theta):
        cA, cF, _, _ = problem.eval_coefficients(theta)
        Au = np.tensordot(cA, self.Au, axes=1)
        Ap = np.tensordot(cA, self.Ap, axes=1)
        Aup = np.tensordot(cA, self.Aup, axes=1)
        fu = cF @ self.fu
        fp = cF @ self.fp
        return Au, Ap, Aup, fu, fp

    @staticmethod
    def _dense_solve(A, b, what):
        if A.shape[0] == 0:
            raise RBSolveFailed(f"{what}: reduced basis is empty")
        try:
            return np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise RBSolveFailed(f"{what}: singular reduced system ({exc})") from exc

    def solve_state(self, problem, theta, operators=None):
        """Reduced state coefficients at ``theta``."""
        Au, _, _, fu, _ = operators or self._online_operators(problem, theta)
        return self._dense_solve(Au, fu, "state")

    def solve_adjoint(self, problem, theta, u_r, operators=None):
        """Reduced adjoint coefficients given the reduced state."""
        _, Ap, _, _, _ = operators or self._online_operators(problem, theta)
        residual = problem.y - self.Ou.T @ u_r
        b = self.Op @ problem.misfit_weighted(residual)
        return self._dense_solve(Ap.T, b, "adjoint")

    def dwr(self, problem, theta, u_r, psi_r, operators=None):
        """Dual-weighted residual: state residual tested with the adjoint."""
        _, _, Aup, _, fp = operators or self._online_operators(problem, theta)
        return float(psi_r @ (Aup @ u_r) - psi_r @ fp)

    def potential(self, problem, theta, operators=None):
        """Plain and corrected reduced potentials.

        Returns ``(eta_r, eta_delta, u_r, psi_r)``.
        """
        ops = operators or self._online_operators(problem, theta)
        u_r = self.solve_state(problem, theta, ops)
        psi_r = self.solve_adjoint(problem, theta, u_r, ops)
        residual = problem.y - self.Ou.T @ u_r
        eta_r = 0.5 * float(residual @ problem.misfit_weighted(residual))
        delta = self.dwr(problem, theta, u_r, psi_r, ops)
        return eta_r, eta_r + delta, u_r, psi_r

    def incrementals(self, problem, theta, u_r, psi_r, operators=None):
        """Incremental adjoint and state solves for the corrected gradient.

        Returns ``(psi_hat, u_hat)``.  The incremental adjoint carries the
        state residual; the incremental state collects the adjoint residual,
        the misfit functional, and the observation coupling of the
        incremental adjoint.
        """
        Au, Ap, Aup, fu, fp = operators or self._online_operators(problem, theta)
        psi_hat = self._dense_solve(Ap, fp - Aup @ u_r, "incremental adjoint")
        residual = problem.y - self.Ou.T @ u_r
        rhs = (
            -(Aup.T @ psi_r)
            + self.Ou @ problem.misfit_weighted(residual)
            - self.Ou @ problem.misfit_weighted(self.Op.T @ psi_hat)
        )
        u_hat = self._dense_solve(Au.T, rhs, "incremental state")
        return psi_hat, u_hat

    def grad_potential(self, problem, theta, u_r, psi_r, psi_hat=None, u_hat=None):
        """Gradients of the plain and corrected reduced potentials.

        Returns ``(grad_eta_r, grad_eta_delta)``; the incremental solutions
        are computed on demand when not supplied.
        """
        cA, cF, dcA, dcF = problem.eval_coefficients(theta)
        if psi_hat is None or u_hat is None:
            psi_hat, u_hat = self.incrementals(problem, theta, u_r, psi_r)
        cross = np.array([psi_r @ (self.Aup[j] @ u_r) for j in range(len(cA))])
        load_p = np.array([psi_r @ self.fp[k] for k in range(len(cF))])
        grad_r = dcA.T @ cross - dcF.T @ load_p
        corr_state = np.array([u_hat @ (self.Au[j] @ u_r) for j in range(len(cA))])
        corr_load = np.array([u_hat @ self.fu[k] for k in range(len(cF))])
        corr_adj = np.array([psi_r @ (self.Ap[j] @ psi_hat) for j in range(len(cA))])
        grad_delta = grad_r + dcA.T @ (corr_state + corr_adj) - dcF.T @ corr_load
        return grad_r, grad_delta

    def evaluate(self, problem, theta):
        """All online quantities at ``theta`` in one pass."""
        theta = np.asarray(theta, dtype=float)
        ops = self._online_operators(problem, theta)
        u_r = self.solve_state(problem, theta, ops)
        psi_r = self.solve_adjoint(problem, theta, u_r, ops)
        residual = problem.y - self.Ou.T @ u_r
        eta_r = 0.5 * float(residual @ problem.misfit_weighted(residual))
        delta = self.dwr(problem, theta, u_r, psi_r, ops)
        psi_hat, u_hat = self.incrementals(problem, theta, u_r, psi_r, ops)
        grad_r, grad_delta = self.grad_potential(problem, theta, u_r, psi_r, psi_hat, u_hat)
        return RBEvaluation(
            theta=theta,
            u_r=u_r,
            psi_r=psi_r,
            u_hat=u_hat,
            psi_hat=psi_hat,
            eta_r=eta_r,
            delta=delta,
            eta_delta=eta_r + delta,
            grad_eta_r=grad_r,
            grad_eta_delta=grad_delta,
        )

    def reconstruct(self, coeffs, which="state"):
        """Lift reduced coefficients back to the high-fidelity space."""
        basis = self.basis_u if which == "state" else self.basis_psi
        return basis @ coeffs

    # -- diagnostics -------------------------------------------------------

    def orthonormality_error(self, problem):
        """Largest deviation of either basis Gramian from the identity."""
        err = 0.0
        for basis in (self.basis_u, self.basis_psi):
            if basis.shape[1]:
                g = basis.T @ (problem.gram @ basis)
                err = max(err, float(np.abs(g - np.eye(basis.shape[1])).max()))
        return err

    def verify_blocks(self, problem):
        """Largest deviation of any stored block from a direct projection."""
        err = 0.0
        for j, blk in enumerate(problem.A_blocks):
            err = max(err, np.abs(self.Au[j] - self.basis_u.T @ (blk @ self.basis_u)).max(initial=0.0))
            err = max(err, np.abs(self.Ap[j] - self.basis_psi.T @ (blk @ self.basis_psi)).max(initial=0.0))
            err = max(err, np.abs(self.Aup[j] - self.basis_psi.T @ (blk @ self.basis_u)).max(initial=0.0))
        for k, vec in enumerate(problem.f_blocks):
            err = max(err, np.abs(self.fu[k] - self.basis_u.T @ vec).max(initial=0.0))
            err = max(err, np.abs(self.fp[k] - self.basis_psi.T @ vec).max(initial=0.0))
        err = max(err, np.abs(self.Ou - (problem.obs_matrix.T @ self.basis_u).T).max(initial=0.0))
        err = max(err, np.abs(self.Op - (problem.obs_matrix.T @ self.basis_psi).T).max(initial=0.0))
        return err

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        """Write bases, blocks, and provenance to a ``.npz`` artifact."""
        meta = {"deflation_tol": self.deflation_tol}
        np.savez_compressed(
            path,
            basis_u=self.basis_u,
            basis_psi=self.basis_psi,
            Au=self.Au,
            Ap=self.Ap,
            Aup=self.Aup,
            fu=self.fu,
            fp=self.fp,
            Ou=self.Ou,
            Op=self.Op,
            provenance=np.array(self.provenance) if self.provenance else np.zeros((0, 0)),
            meta=json.dumps(meta),
        )

    @classmethod
    def load(cls, path):
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        prov = [row.copy() for row in data["provenance"]] if data["provenance"].size else []
        return cls(
            basis_u=data["basis_u"],
            basis_psi=data["basis_psi"],
            Au=data["Au"],
            Ap=data["Ap"],
            Aup=data["Aup"],
            fu=data["fu"],
            fp=data["fp"],
            Ou=data["Ou"],
            Op=data["Op"],
            provenance=prov,
            deflation_tol=meta["deflation_tol"],
        )
