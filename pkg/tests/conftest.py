import numpy as np
import pytest

from svrb import adaptive, hifi
from svrb.cases import (
    AffineTerm,
    UniformBox,
    assemble_problem,
    custom_case,
    gaussian9_case,
    uniform4_case,
)
from svrb.fem import CoercivityLost


def draw_coercive(problem, rng, count):
    out = []
    while len(out) < count:
        theta = problem.prior.sample(rng, 1)[0]
        try:
            problem.check_coercive(theta)
        except CoercivityLost:
            continue
        out.append(theta)
    return np.array(out)


def small_rb(problem, rng, n_snapshots=5):
    thetas = draw_coercive(problem, rng, n_snapshots)
    rm = adaptive.initialize(problem, thetas[0])
    for theta in thetas[1:]:
        ev = hifi.evaluate(problem, theta)
        rm.enrich(problem, ev.u, ev.psi, theta)
    return rm


@pytest.fixture(scope="session")
def uniform4_8():
    return assemble_problem(uniform4_case(8))


@pytest.fixture(scope="session")
def uniform4_16():
    return assemble_problem(uniform4_case(16))


@pytest.fixture(scope="session")
def gaussian9_9():
    return assemble_problem(gaussian9_case(9))


@pytest.fixture(scope="session")
def constant_problem():
    """Parameter-independent unit-diffusivity problem on a coarse mesh."""
    case = custom_case(
        8,
        diffusion=[1.0],
        load=[1.0],
        prior=UniformBox([-1.0], [1.0]),
        dim=1,
    )
    return assemble_problem(case)


@pytest.fixture(scope="session")
def rb_uniform4_16(uniform4_16):
    return small_rb(uniform4_16, np.random.default_rng(11), 5)


def manufactured_case(n):
    """Unit diffusivity with the source term matching u = sin(pi * x2)."""
    return custom_case(
        n,
        diffusion=[1.0],
        load=[AffineTerm(
            lambda x: np.pi**2 * np.sin(np.pi * x[:, 1]),
            lambda theta: 1.0,
            lambda theta: np.zeros(1),
        )],
        prior=UniformBox([-1.0], [1.0]),
        dim=1,
    )
