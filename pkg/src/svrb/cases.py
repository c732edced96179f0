"""Benchmark problem definitions and assembly into parametric problems.

Two built-in cases:

* ``uniform4`` -- four i.i.d. uniform parameters on ``[-sqrt(3), sqrt(3)]``
  weighting cosine modes on top of a constant background diffusivity 5.
* ``gaussian9`` -- nine i.i.d. standard Gaussian parameters; the diffusivity
  is ``exp(theta_j / 2)`` on the j-th cell of a 3x3 partition of the square.

Synthetic data is generated from a reference parameter: the noise level is
a fixed fraction of the largest observed value there, and the observations
are the reference outputs plus one draw of that noise (seeded).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import fem
from .fem import ConfigurationError


class UnsupportedCoefficient(ValueError):
    """A custom coefficient that does not admit an affine decomposition."""


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class UniformBox:
    """Independent uniform components on a box; score is zero inside.

    Outside-the-box behaviour is handled by the sampler (clamping), so both
    the score and the negative log-density are treated as flat everywhere.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if not np.all(self.lo < self.hi):
            raise ConfigurationError("UniformBox requires lo < hi componentwise")

    @property
    def dim(self):
        return self.lo.shape[0]

    def sample(self, rng, m):
        return rng.uniform(self.lo, self.hi, size=(m, self.dim))

    def score(self, thetas):
        return np.zeros_like(np.atleast_2d(thetas))

    def neglog(self, thetas):
        thetas = np.atleast_2d(thetas)
        return np.zeros(thetas.shape[0])

    def clamp(self, thetas):
        clipped = np.clip(thetas, self.lo, self.hi)
        n_clamped = int(np.sum(np.any(clipped != thetas, axis=-1)))
        return clipped, n_clamped


@dataclass(frozen=True)
class StandardGaussian:
    """Independent standard normal components."""

    dim: int

    def sample(self, rng, m):
        return rng.standard_normal((m, self.dim))

    def score(self, thetas):
        return -np.atleast_2d(thetas)

    def neglog(self, thetas):
        thetas = np.atleast_2d(thetas)
        return 0.5 * np.sum(thetas**2, axis=-1)

    def clamp(self, thetas):
        return thetas, 0


# ---------------------------------------------------------------------------
# case configuration


@dataclass
class AffineTerm:
    """One affine term: a spatial field with its parameter coefficient.

    ``field`` maps points ``(m, 2) -> (m,)``; ``c`` maps theta to a scalar
    and ``dc`` to its gradient.  ``c=None`` marks a non-affine coefficient,
    which is rejected at assembly.
    """

    field: object
    c: object
    dc: object


def _const_field(value):
    return lambda x: np.full(x.shape[0], float(value))


def _const_coeff(value, d):
    return (lambda theta: float(value)), (lambda theta: np.zeros(d))


@dataclass
class CaseConfig:
    name: str
    n: int
    prior: object
    diffusion: list
    load: list
    quad_rule: str = "gauss3"
    obs_grid: int = 7
    noise_scale: float = 0.01
    noise_sigma: float = None  # explicit override of the sigma rule
    theta_ref: np.ndarray = None
    theta_data: np.ndarray = None
    noise_seed: int = 20314
    data_noise: bool = True
    coercivity_floor: float = 1e-8
    solver: str = "direct"


def uniform4_case(n, **overrides):
    """Four cosine modes over a constant background diffusivity of 5."""
    d = 4
    modes = [(1, 1), (1, 2), (2, 1), (2, 2)]
    terms = [AffineTerm(_const_field(5.0), *_const_coeff(1.0, d))]
    for j, (j1, j2) in enumerate(modes):
        fld = (lambda j1, j2: lambda x: np.cos(j1 * np.pi * x[:, 0]) * np.cos(j2 * np.pi * x[:, 1]))(j1, j2)
        cj = (lambda j: lambda theta: float(theta[j]))(j)
        dcj = (lambda j: lambda theta: np.eye(d)[j])(j)
        terms.append(AffineTerm(fld, cj, dcj))
    load = [AffineTerm(_const_field(1.0), *_const_coeff(1.0, d))]
    r3 = np.sqrt(3.0)
    cfg = CaseConfig(
        name="uniform4",
        n=n,
        prior=UniformBox(-r3 * np.ones(d), r3 * np.ones(d)),
        diffusion=terms,
        load=load,
        quad_rule="gauss3",
        theta_ref=np.ones(d),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def _cell_indicator(bx, by):
    def field(x):
        cx = np.floor(np.clip(x[:, 0], 0, 1 - 1e-12) * 3).astype(int)
        cy = np.floor(np.clip(x[:, 1], 0, 1 - 1e-12) * 3).astype(int)
        return ((cx == bx) & (cy == by)).astype(float)

    return field


def _exp_half(j, d):
    # overflow at extreme trial parameters maps to inf, which downstream
    # coercivity checks treat as lost well-posedness
    def c(theta):
        with np.errstate(over="ignore"):
            return float(np.exp(theta[j] / 2.0))

    def dc(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(theta[j] / 2.0) / 2.0 * np.eye(d)[j]

    return c, dc


def gaussian9_case(n, **overrides):
    """Log-normal cellwise diffusivity on a 3x3 partition of the square."""
    d = 9
    if n % 3 != 0:
        raise ConfigurationError(
            "gaussian9 requires the mesh subdivision n to be a multiple of 3 "
            "so triangles do not straddle subdomain interfaces"
        )
    terms = []
    for j in range(d):
        bx, by = j % 3, j // 3  # cells ordered left-to-right, bottom-to-top
        terms.append(AffineTerm(_cell_indicator(bx, by), *_exp_half(j, d)))
    load = [AffineTerm(_const_field(1.0), *_const_coeff(1.0, d))]
    cfg = CaseConfig(
        name="gaussian9",
        n=n,
        prior=StandardGaussian(d),
        diffusion=terms,
        load=load,
        quad_rule="centroid",
        theta_ref=np.ones(d),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def custom_case(n, diffusion, load, prior, dim, **overrides):
    """Assemble a user-supplied affine case.

    ``diffusion`` and ``load`` are lists of :class:`AffineTerm`.  Constant
    fields and loads may be given as floats.
    """
    diffusion = [
        t if isinstance(t, AffineTerm) else AffineTerm(_const_field(t), *_const_coeff(1.0, dim))
        for t in diffusion
    ]
    load = [
        t if isinstance(t, AffineTerm) else AffineTerm(_const_field(t), *_const_coeff(1.0, dim))
        for t in load
    ]
    cfg = CaseConfig(
        name="custom",
        n=n,
        prior=prior,
        diffusion=diffusion,
        load=load,
        theta_ref=overrides.pop("theta_ref", np.zeros(dim)),
    )
    cfg._dim = dim
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def _case_dim(case):
    if hasattr(case, "_dim"):
        return case._dim
    return case.prior.dim


# ---------------------------------------------------------------------------
# assembly


def obs_grid_points(k):
    """Interior k-by-k observation grid at ``(i/(k+1), j/(k+1))``."""
    ticks = np.arange(1, k + 1) / (k + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    return np.column_stack([xx.ravel(), yy.ravel()])


def assemble_problem(case):
    """Assemble all parameter-independent objects for a case.

    Builds the mesh, the affine stiffness and load blocks, the observation
    matrix, the H^1 Gram matrix, and the synthetic data.  Dirichlet rows and
    columns (bottom and top edges) are eliminated from every object.
    """
    d = _case_dim(case)
    for term in case.diffusion + case.load:
        if term.c is None or term.dc is None:
            raise UnsupportedCoefficient(
                "coefficient without an affine decomposition; supply c(theta) "
                "and its gradient or use an empirical-interpolation preprocessor"
            )

    mesh = fem.build_mesh(case.n)
    qpts, qw = fem.quadrature_points(mesh, case.quad_rule)
    n_q_loc = fem._QUAD_RULES[case.quad_rule][1].shape[0]

    dirichlet = np.union1d(mesh.boundary["bottom"], mesh.boundary["top"])
    free = np.setdiff1d(np.arange(mesh.n_nodes), dirichlet)

    def constrain(mat):
        return mat[free][:, free].tocsr()

    coeff_at_quad = np.column_stack([t.field(qpts) for t in case.diffusion])
    A_blocks = []
    for j in range(len(case.diffusion)):
        tri_int = (coeff_at_quad[:, j] * qw).reshape(mesh.n_triangles, n_q_loc).sum(axis=1)
        A_blocks.append(constrain(fem._assemble_weighted_stiffness(mesh, tri_int)))

    f_blocks = [fem._assemble_load(mesh, case.quad_rule, t.field(qpts))[free] for t in case.load]

    obs_points = obs_grid_points(case.obs_grid)
    obs_full = fem.point_eval_weights(mesh, obs_points)
    obs_matrix = obs_full[free]

    gram = constrain(
        fem._assemble_weighted_stiffness(mesh, _tri_areas(mesh)) + fem._assemble_mass(mesh)
    )

    theta_ref = np.asarray(
        case.theta_ref if case.theta_ref is not None else np.ones(d), dtype=float
    )
    theta_data = np.asarray(
        case.theta_data if case.theta_data is not None else theta_ref, dtype=float
    )

    problem = fem.AffineParametricProblem(
        name=case.name,
        mesh=mesh,
        free_dofs=free,
        dirichlet_dofs=dirichlet,
        A_blocks=A_blocks,
        diffusion_c=[t.c for t in case.diffusion],
        diffusion_dc=[t.dc for t in case.diffusion],
        f_blocks=f_blocks,
        load_c=[t.c for t in case.load],
        load_dc=[t.dc for t in case.load],
        obs_matrix=obs_matrix,
        obs_points=obs_points,
        gram=gram,
        y=np.zeros(len(obs_points)),  # filled below
        noise_precision=np.ones(len(obs_points)),
        sigma=1.0,
        prior=case.prior,
        dim=d,
        quad_points=qpts,
        quad_weights=qw,
        coeff_at_quad=coeff_at_quad,
        coercivity_floor=case.coercivity_floor,
        theta_ref=theta_ref,
        theta_data=theta_data,
        noise_seed=case.noise_seed,
        solver=case.solver,
    )

    # Synthetic data: noise level from the reference solve, observations from
    # the data-generating parameter plus one seeded noise draw.
    u_ref = _direct_solve(problem, theta_ref)
    obs_ref = problem.observe(u_ref)
    if case.noise_sigma is not None:
        sigma = float(case.noise_sigma)
    else:
        sigma = case.noise_scale * float(np.max(obs_ref))
    if sigma <= 0:
        raise ConfigurationError("noise rule produced a non-positive sigma")
    if np.array_equal(theta_data, theta_ref):
        obs_data = obs_ref
    else:
        obs_data = problem.observe(_direct_solve(problem, theta_data))
    xi = np.zeros_like(obs_data)
    if case.data_noise:
        xi = sigma * np.random.default_rng(case.noise_seed).standard_normal(obs_data.shape)
    problem.y = obs_data + xi
    problem.sigma = sigma
    problem.noise_precision = np.full(len(obs_points), 1.0 / sigma**2)
    return problem


def _tri_areas(mesh):
    areas, _ = fem._tri_geometry(mesh)
    return areas


def _direct_solve(problem, theta):
    A, f = problem.operator(theta)
    return spla.splu(A.tocsc()).solve(f)
