"""P1 finite elements on the unit square for affine-parametric diffusion.

The mesh is a uniform criss-cross triangulation of (0, 1)^2 with
homogeneous Dirichlet conditions on the bottom and top edges and natural
(do-nothing) conditions on the left and right edges.  Constrained degrees
of freedom are eliminated, so every assembled object lives on the free
nodes only.

The parametric operator is affine in the parameter: the stiffness matrix
is a linear combination ``sum_j cA_j(theta) * A_j`` of parameter-independent
sparse blocks, and likewise for the load vector.  Assembling the blocks,
the observation matrix, and the H^1 Gram matrix happens once; evaluating
the operator at a parameter is a cheap weighted sum.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class CoercivityLost(RuntimeError):
    """The diffusion field is not strictly positive at some quadrature point."""

    def __init__(self, theta, min_value, floor):
        self.theta = np.asarray(theta, dtype=float)
        self.min_value = float(min_value)
        self.floor = float(floor)
        super().__init__(
            f"diffusion field min {min_value:.3e} <= floor {floor:.1e} "
            f"at theta={np.array2string(self.theta, precision=4)}"
        )


class SolveFailed(RuntimeError):
    """A linear solve did not meet the residual tolerance."""


class ConfigurationError(ValueError):
    """Invalid problem setup (bad observation point, singular Gram, ...)."""


# Quadrature on the reference triangle: barycentric coordinates and weights
# summing to one.  The 3-point rule is exact for quadratics; the centroid
# rule is what piecewise-constant coefficient fields need (one interior
# sample per triangle, never on a subdomain interface).
_QUAD_RULES = {
    "gauss3": (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.array([1 / 3, 1 / 3, 1 / 3]),
    ),
    "centroid": (
        np.array([[1 / 3, 1 / 3, 1 / 3]]),
        np.array([1.0]),
    ),
}


@dataclass(eq=False)
class MeshGrid:
    """Uniform criss-cross triangulation of the unit square.

    ``n`` subdivisions per side give ``(n+1)**2`` nodes (row-major, i.e.
    node ``j*(n+1)+i`` sits at ``(i/n, j/n)``) and ``2*n**2`` triangles,
    all positively oriented.
    """

    n: int
    nodes: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary: dict = field(repr=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


def build_mesh(n):
    """Build the uniform criss-cross mesh with ``n`` cells per side."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side)  # row-major: y varies along axis 0
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    ii, jj = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (jj * (n + 1) + ii).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.vstack([lower, upper])

    idx = np.arange((n + 1) ** 2)
    iy, ix = np.divmod(idx, n + 1)
    boundary = {
        "bottom": idx[iy == 0],
        "top": idx[iy == n],
        "left": idx[ix == 0],
        "right": idx[ix == n],
    }
    return MeshGrid(n=n, nodes=nodes, triangles=triangles, boundary=boundary)


def _tri_geometry(mesh):
    """Per-triangle areas and constant P1 basis gradients.

    Returns ``(areas, grads)`` with ``grads[t, i]`` the gradient of the
    barycentric basis function attached to local vertex ``i``.
    """
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    areas = 0.5 * (e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0]))
    if np.any(areas <= 0):
        raise ConfigurationError("mesh contains non-positively oriented triangles")
    rot = lambda e: np.column_stack([-e[:, 1], e[:, 0]])
    grads = np.stack([rot(e0), rot(e1), rot(e2)], axis=1) / (2.0 * areas)[:, None, None]
    return areas, grads


def quadrature_points(mesh, rule):
    """Physical quadrature points and weights for all triangles.

    Returns ``(points, weights)`` of shapes ``(T*Q, 2)`` and ``(T*Q,)``;
    weights include the triangle areas, so sums approximate integrals.
    """
    bary, w = _QUAD_RULES[rule]
    p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    pts = np.einsum("qi,tij->tqj", bary, p)  # (T, Q, 2)
    areas, _ = _tri_geometry(mesh)
    weights = areas[:, None] * w[None, :]
    return pts.reshape(-1, 2), weights.reshape(-1)


def _assemble_weighted_stiffness(mesh, tri_integrals):
    """Full stiffness matrix for a scalar coefficient with per-triangle
    integrals ``tri_integrals[t] = integral of the coefficient over t``."""
    _, grads = _tri_geometry(mesh)
    gg = np.einsum("tid,tjd->tij", grads, grads)  # (T, 3, 3)
    vals = tri_integrals[:, None, None] * gg
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    nn = mesh.n_nodes
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(nn, nn)).tocsr()


def _assemble_mass(mesh):
    """Full P1 mass matrix (exact)."""
    areas, _ = _tri_geometry(mesh)
    local = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]], dtype=float) / 12.0
    vals = areas[:, None, None] * local
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    nn = mesh.n_nodes
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(nn, nn)).tocsr()


def _assemble_load(mesh, rule, f_at_quad):
    """Full load vector for a source term sampled at the quadrature points."""
    bary, w = _QUAD_RULES[rule]
    areas, _ = _tri_geometry(mesh)
    fq = f_at_quad.reshape(mesh.n_triangles, len(w))
    # integral of f * lambda_i over each triangle
    contrib = np.einsum("tq,q,qi->ti", fq, w, bary) * areas[:, None]
    vec = np.zeros(mesh.n_nodes)
    np.add.at(vec, mesh.triangles.ravel(), contrib.ravel())
    return vec


def point_eval_weights(mesh, points):
    """Barycentric interpolation weights for point evaluation functionals.

    Returns a sparse ``(n_nodes, s)`` matrix whose column ``i`` applied to a
    nodal vector evaluates the P1 field at ``points[i]``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = mesh.n
    rows, cols, vals = [], [], []
    for i, (x, y) in enumerate(points):
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ConfigurationError(f"observation point ({x}, {y}) outside the unit square")
        ix = min(int(x * n), n - 1)
        iy = min(int(y * n), n - 1)
        xi = x * n - ix
        eta = y * n - iy
        v00 = iy * (n + 1) + ix
        v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
        if xi >= eta:  # lower triangle (v00, v10, v11)
            lam = (1.0 - xi, xi - eta, eta)
            verts = (v00, v10, v11)
        else:  # upper triangle (v00, v11, v01)
            lam = (1.0 - eta, xi, eta - xi)
            verts = (v00, v11, v01)
        for v, l in zip(verts, lam):
            rows.append(v)
            cols.append(i)
            vals.append(l)
    return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, len(points))).tocsr()


@dataclass(eq=False)
class AffineParametricProblem:
    """All parameter-independent objects of one inverse problem instance.

    Immutable after construction; the Gram factorization is created lazily
    on first use and shared read-only afterwards.
    """

    name: str
    mesh: MeshGrid
    free_dofs: np.ndarray = field(repr=False)
    dirichlet_dofs: np.ndarray = field(repr=False)
    A_blocks: list = field(repr=False)
    diffusion_c: list = field(repr=False)
    diffusion_dc: list = field(repr=False)
    f_blocks: list = field(repr=False)
    load_c: list = field(repr=False)
    load_dc: list = field(repr=False)
    obs_matrix: sp.csr_matrix = field(repr=False)
    obs_points: np.ndarray = field(repr=False)
    gram: sp.csr_matrix = field(repr=False)
    y: np.ndarray = field(repr=False)
    noise_precision: np.ndarray = field(repr=False)
    sigma: float
    prior: object
    dim: int
    quad_points: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)
    coeff_at_quad: np.ndarray = field(repr=False)
    coercivity_floor: float
    theta_ref: np.ndarray = field(repr=False)
    theta_data: np.ndarray = field(repr=False)
    noise_seed: int
    solver: str = "direct"

    def __post_init__(self):
        self._gram_lu = None
        # per-term field extrema over quadrature points; these give an O(J)
        # lower bound on the diffusion field used by online-only evaluations
        self._coeff_lo = self.coeff_at_quad.min(axis=0)
        self._coeff_hi = self.coeff_at_quad.max(axis=0)
        aq = self.coeff_at_quad
        self._one_hot_fields = bool(
            np.all((aq == 0.0) | (aq == 1.0)) and np.allclose(aq.sum(axis=1), 1.0)
        )
        # all stiffness blocks come from one stencil; when they share the
        # sparsity structure the parametric operator is a weighted sum of
        # stacked data arrays instead of repeated sparse additions
        first = self.A_blocks[0]
        if all(
            np.array_equal(blk.indptr, first.indptr)
            and np.array_equal(blk.indices, first.indices)
            for blk in self.A_blocks[1:]
        ):
            self._block_data = np.stack([blk.data for blk in self.A_blocks])
            self._block_structure = (first.indices, first.indptr)
        else:  # pragma: no cover - custom assembly paths
            self._block_data = None
            self._block_structure = None

    # -- sizes ---------------------------------------------------------

    @property
    def n_dofs(self):
        """Constrained (free) degrees of freedom."""
        return len(self.free_dofs)

    @property
    def n_dofs_raw(self):
        """All grid nodes, counting the eliminated Dirichlet ones."""
        return self.mesh.n_nodes

    @property
    def n_diffusion_terms(self):
        return len(self.A_blocks)

    @property
    def n_load_terms(self):
        return len(self.f_blocks)

    @property
    def n_obs(self):
        return self.y.shape[0]

    # -- affine coefficients -------------------------------------------

    def eval_coefficients(self, theta):
        """Affine coefficient values and their exact parameter gradients.

        Returns ``(cA, cF, dcA, dcF)`` with shapes ``(J_A,)``, ``(J_F,)``,
        ``(J_A, d)``, ``(J_F, d)``.
        """
        theta = np.asarray(theta, dtype=float)
        cA = np.array([c(theta) for c in self.diffusion_c])
        cF = np.array([c(theta) for c in self.load_c])
        dcA = np.array([dc(theta) for dc in self.diffusion_dc]).reshape(len(cA), self.dim)
        dcF = np.array([dc(theta) for dc in self.load_dc]).reshape(len(cF), self.dim)
        return cA, cF, dcA, dcF

    def field_range(self, theta):
        """Min and max of the diffusion field over all quadrature points."""
        cA, _, _, _ = self.eval_coefficients(theta)
        with np.errstate(invalid="ignore"):  # inf coefficients on zero fields
            values = self.coeff_at_quad @ cA
        return values.min(), values.max()

    def check_coercive(self, theta):
        """Raise :class:`CoercivityLost` if the field dips below the floor."""
        lo, _ = self.field_range(theta)
        if not np.isfinite(lo) or lo <= self.coercivity_floor:
            raise CoercivityLost(theta, lo, self.coercivity_floor)

    def conservative_field_min(self, theta):
        """Rigorous lower bound on the field minimum, online cost O(J).

        Underestimates ``field_range(theta)[0]``; useful where the exact
        per-quadrature-point check would break mesh-independent cost.
        Overflowing coefficients count as lost coercivity.
        """
        cA, _, _, _ = self.eval_coefficients(theta)
        if not np.all(np.isfinite(cA)):
            return -np.inf
        if self._one_hot_fields:  # cellwise partition: the field IS some cA_j
            return float(cA.min())
        return float(np.minimum(cA * self._coeff_lo, cA * self._coeff_hi).sum())

    def operator(self, theta, check=True):
        """Assembled operator and load at ``theta``: ``(A(theta), f(theta))``."""
        if check:
            self.check_coercive(theta)
        cA, cF, _, _ = self.eval_coefficients(theta)
        if self._block_data is not None:
            indices, indptr = self._block_structure
            A = sp.csr_matrix((cA @ self._block_data, indices, indptr),
                              shape=self.A_blocks[0].shape)
        else:  # pragma: no cover - custom assembly paths
            A = cA[0] * self.A_blocks[0]
            for c, blk in zip(cA[1:], self.A_blocks[1:]):
                if c != 0.0:
                    A = A + c * blk
            A = A.tocsr()
        f = np.zeros(self.n_dofs)
        for c, vec in zip(cF, self.f_blocks):
            f += c * vec
        return A, f

    # -- norms -----------------------------------------------------------

    def v_inner(self, v, w):
        """H^1 inner product on the constrained space."""
        return float(v @ (self.gram @ w))

    def v_norm(self, v):
        return np.sqrt(max(self.v_inner(v, v), 0.0))

    def gram_solve(self, g):
        """Riesz representative of a functional coefficient vector."""
        if self._gram_lu is None:
            try:
                self._gram_lu = spla.splu(self.gram.tocsc())
            except RuntimeError as exc:  # pragma: no cover - fatal setup error
                raise ConfigurationError(f"Gram factorization failed: {exc}") from exc
        return self._gram_lu.solve(g)

    def dual_norm(self, g):
        """Dual norm ``sqrt(g^T X^-1 g)`` of a functional vector."""
        z = self.gram_solve(g)
        return np.sqrt(max(float(g @ z), 0.0))

    def obs_dual_norms(self):
        """Dual norms of the observation functionals (computed once)."""
        if getattr(self, "_obs_dual", None) is None:
            self._obs_dual = np.array([
                self.dual_norm(self.obs_matrix[:, i].toarray().ravel())
                for i in range(self.n_obs)
            ])
        return self._obs_dual

    # -- constrained/full vector transfer --------------------------------

    def embed(self, v_free):
        """Zero-extend a constrained vector to all grid nodes."""
        full = np.zeros(self.n_dofs_raw)
        full[self.free_dofs] = v_free
        return full

    def restrict(self, v_full):
        return np.asarray(v_full)[self.free_dofs]

    # -- observation ------------------------------------------------------

    def observe(self, u):
        """Apply the observation functionals to a constrained state vector."""
        return self.obs_matrix.T @ u

    def misfit_weighted(self, residual):
        """Apply the noise precision (diagonal) to an observation residual."""
        return self.noise_precision * residual
