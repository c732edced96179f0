import numpy as np
import pytest

from svrb import fem, hifi
from svrb.cases import (
    AffineTerm,
    UniformBox,
    UnsupportedCoefficient,
    assemble_problem,
    custom_case,
    gaussian9_case,
    obs_grid_points,
    uniform4_case,
)
from svrb.fem import CoercivityLost, ConfigurationError

from conftest import manufactured_case


class TestMesh:
    def test_reference_mesh_counts(self):
        mesh = fem.build_mesh(128)
        assert mesh.n_nodes == 16641
        assert mesh.n_triangles == 32768

    def test_smallest_mesh(self):
        mesh = fem.build_mesh(1)
        assert mesh.n_nodes == 4
        assert mesh.n_triangles == 2

    def test_count_formulas(self):
        mesh = fem.build_mesh(4)
        assert mesh.n_nodes == 25
        assert mesh.n_triangles == 32

    def test_positive_orientation(self):
        mesh = fem.build_mesh(5)
        p = mesh.nodes[mesh.triangles]
        areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                       - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        assert np.all(areas > 0)

    def test_boundary_tags(self):
        mesh = fem.build_mesh(3)
        assert np.array_equal(mesh.boundary["bottom"], [0, 1, 2, 3])
        assert np.array_equal(mesh.boundary["top"], [12, 13, 14, 15])
        assert np.array_equal(mesh.boundary["left"], [0, 4, 8, 12])
        assert np.array_equal(mesh.boundary["right"], [3, 7, 11, 15])

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            fem.build_mesh(0)


class TestAssembly:
    def test_uniform4_shapes(self, uniform4_8):
        p = uniform4_8
        assert p.n_diffusion_terms == 5
        assert p.n_load_terms == 1
        assert p.n_obs == 49
        assert p.dim == 4
        assert p.n_dofs_raw == 81
        assert p.n_dofs == 81 - 2 * 9

    def test_gaussian9_shapes(self, gaussian9_9):
        p = gaussian9_9
        assert p.n_diffusion_terms == 9
        assert p.dim == 9

    def test_gaussian9_requires_multiple_of_three(self):
        with pytest.raises(ConfigurationError):
            gaussian9_case(10)

    def test_observation_point_outside_domain(self):
        mesh = fem.build_mesh(4)
        with pytest.raises(ConfigurationError):
            fem.point_eval_weights(mesh, [[1.2, 0.5]])

    def test_non_affine_coefficient_rejected(self):
        case = custom_case(
            4,
            diffusion=[AffineTerm(lambda x: np.ones(len(x)), None, None)],
            load=[1.0],
            prior=UniformBox([-1.0], [1.0]),
            dim=1,
        )
        with pytest.raises(UnsupportedCoefficient):
            assemble_problem(case)

    def test_blocks_symmetric(self, uniform4_8):
        for blk in uniform4_8.A_blocks + [uniform4_8.gram]:
            gap = abs(blk - blk.T).max()
            assert gap <= 1e-12 * abs(blk).max()

    def test_gram_spd_dense(self):
        p = assemble_problem(uniform4_case(16))
        eigs = np.linalg.eigvalsh(p.gram.toarray())
        assert eigs.min() > 0

    def test_theta_independent_custom_case(self, constant_problem):
        p = constant_problem
        A1, f1 = p.operator(np.array([0.3]))
        A2, f2 = p.operator(np.array([-0.9]))
        assert abs(A1 - A2).max() == 0
        assert np.array_equal(f1, f2)


class TestCoefficients:
    def test_uniform4_values(self, uniform4_8):
        cA, cF, dcA, dcF = uniform4_8.eval_coefficients(np.array([1.0, 0, 0, 0]))
        assert np.allclose(cA, [1, 1, 0, 0, 0])
        assert np.allclose(cF, [1])
        assert np.allclose(dcA[0], 0)
        assert np.allclose(dcA[1], [1, 0, 0, 0])

    def test_gaussian9_values(self, gaussian9_9):
        cA, _, dcA, _ = gaussian9_9.eval_coefficients(np.zeros(9))
        assert np.allclose(cA, 1.0)
        assert np.allclose(dcA, np.eye(9) / 2)

    def test_load_theta_independent(self, uniform4_8):
        rng = np.random.default_rng(0)
        for _ in range(3):
            _, cF, _, dcF = uniform4_8.eval_coefficients(rng.normal(size=4))
            assert np.allclose(cF, [1.0])
            assert np.allclose(dcF, 0.0)


class TestOperator:
    def test_constant_field_matches_unit_stiffness(self, constant_problem):
        A, _ = constant_problem.operator(np.zeros(1))
        mesh = constant_problem.mesh
        areas, _ = fem._tri_geometry(mesh)
        K = fem._assemble_weighted_stiffness(mesh, areas)
        free = constant_problem.free_dofs
        assert abs(A - K[free][:, free]).max() < 1e-14

    def test_uniform4_origin_is_five_times_unit_stiffness(self, uniform4_8):
        A, _ = uniform4_8.operator(np.zeros(4))
        mesh = uniform4_8.mesh
        areas, _ = fem._tri_geometry(mesh)
        K = fem._assemble_weighted_stiffness(mesh, areas)
        free = uniform4_8.free_dofs
        assert abs(A - 5.0 * K[free][:, free]).max() < 1e-12

    def test_extreme_corner_loses_coercivity(self, uniform4_8):
        # at the all-negative extreme, the field at (0, 0) is 5 - 4*sqrt(3) < 0
        theta = -np.sqrt(3.0) * np.ones(4)
        with pytest.raises(CoercivityLost):
            uniform4_8.operator(theta)

    def test_conservative_bound_underestimates(self, uniform4_8):
        rng = np.random.default_rng(1)
        for _ in range(20):
            theta = uniform4_8.prior.sample(rng, 1)[0]
            assert uniform4_8.conservative_field_min(theta) <= uniform4_8.field_range(theta)[0] + 1e-12


class TestNorms:
    def test_zero_vectors(self, uniform4_8):
        z = np.zeros(uniform4_8.n_dofs)
        assert uniform4_8.v_norm(z) == 0.0
        assert uniform4_8.dual_norm(z) == 0.0

    def test_inner_product_symmetry_and_consistency(self, uniform4_8):
        rng = np.random.default_rng(2)
        for _ in range(5):
            v = rng.normal(size=uniform4_8.n_dofs)
            w = rng.normal(size=uniform4_8.n_dofs)
            assert uniform4_8.v_inner(v, w) == pytest.approx(uniform4_8.v_inner(w, v))
            assert uniform4_8.v_norm(v) ** 2 == pytest.approx(uniform4_8.v_inner(v, v))

    def test_riesz_isometry(self, uniform4_8):
        rng = np.random.default_rng(3)
        v = rng.normal(size=uniform4_8.n_dofs)
        g = uniform4_8.gram @ v
        assert uniform4_8.dual_norm(g) == pytest.approx(uniform4_8.v_norm(v), rel=1e-10)

    def test_dual_norm_dense_oracle(self):
        p = assemble_problem(uniform4_case(5))
        rng = np.random.default_rng(4)
        X = p.gram.toarray()
        for _ in range(3):
            g = rng.normal(size=p.n_dofs)
            z = np.linalg.solve(X, g)
            assert p.dual_norm(g) == pytest.approx(np.sqrt(g @ z), rel=1e-10)


class TestInvariants:
    def test_patch_zero_load(self):
        case = custom_case(6, diffusion=[1.0], load=[0.0],
                           prior=UniformBox([-1.0], [1.0]), dim=1, noise_sigma=1.0)
        p = assemble_problem(case)
        u = hifi.solve_state(p, np.zeros(1))
        assert np.allclose(u, 0.0)

    def test_manufactured_solution_rate(self):
        errors = []
        for n in (8, 16, 32):
            p = assemble_problem(manufactured_case(n))
            u = hifi.solve_state(p, np.zeros(1))
            E = fem.point_eval_weights(p.mesh, p.quad_points)
            uq = E.T @ p.embed(u)
            exact = np.sin(np.pi * p.quad_points[:, 1])
            errors.append(np.sqrt(np.sum(p.quad_weights * (uq - exact) ** 2)))
        ratios = [errors[i] / errors[i + 1] for i in range(2)]
        assert all(r > 3.5 for r in ratios), ratios

    def test_observation_consistency(self, uniform4_8):
        p = uniform4_8
        u = hifi.solve_state(p, p.theta_ref)
        observed = p.observe(u)
        full = p.embed(u)
        pts = obs_grid_points(7)
        n = p.mesh.n
        for i, (x, y) in enumerate(pts):
            # bilinear cell coordinates, then the criss-cross split
            ix, iy = min(int(x * n), n - 1), min(int(y * n), n - 1)
            xi, eta = x * n - ix, y * n - iy
            v00 = iy * (n + 1) + ix
            if xi >= eta:
                val = (1 - xi) * full[v00] + (xi - eta) * full[v00 + 1] + eta * full[v00 + n + 2]
            else:
                val = (1 - eta) * full[v00] + xi * full[v00 + n + 2] + (eta - xi) * full[v00 + n + 1]
            assert observed[i] == pytest.approx(val, rel=1e-12, abs=1e-15)

    def test_quadrature_weights_sum_to_area(self, uniform4_8, gaussian9_9):
        for p in (uniform4_8, gaussian9_9):
            assert p.quad_weights.sum() == pytest.approx(1.0, rel=1e-12)


class TestDataRule:
    def test_sigma_fraction_of_peak_observation(self, uniform4_8):
        p = uniform4_8
        u_ref = hifi.solve_state(p, p.theta_ref)
        assert p.sigma == pytest.approx(0.01 * p.observe(u_ref).max(), rel=1e-12)

    def test_noiseless_data_reproduces_reference(self):
        p = assemble_problem(uniform4_case(8, data_noise=False))
        u_ref = hifi.solve_state(p, p.theta_ref)
        assert np.allclose(p.y, p.observe(u_ref))

    def test_noise_draw_is_seeded(self):
        p1 = assemble_problem(uniform4_case(8))
        p2 = assemble_problem(uniform4_case(8))
        assert np.array_equal(p1.y, p2.y)
