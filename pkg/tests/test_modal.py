import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from softgait.errors import EigenSolveError
from softgait.mesh import basis_gradients, build_operators, flatten_positions
from softgait.modal import (build_lbs_jacobian, compute_actuation_modes, compute_skinning_weights,
                            elastic_hessian, scalar_laplacian)
from softgait.reference import elastic_energy

from conftest import jittered_box, two_tet_mesh


@pytest.fixture(scope="module")
def mesh50():
    # 3x3x3 grid = 48 vertices plus a little jitter
    return jittered_box((3, 3, 2), seed=11, random_materials=True)


class TestScalarLaplacian:
    def test_single_tet_rows_sum_to_zero(self, unit_tet):
        L = scalar_laplacian(unit_tet).toarray()
        assert L.shape == (4, 4)
        np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(L, L.T, atol=1e-12)

    def test_constants_in_null_space(self, mesh50):
        L = scalar_laplacian(mesh50)
        assert np.linalg.norm(L @ np.ones(mesh50.n_vertices)) < 1e-10 * abs(L).max()

    def test_two_tet_hand_assembly(self):
        mesh = two_tet_mesh(mu=np.array([1e4, 3e4]))
        grads = basis_gradients(mesh)
        vol = mesh.volumes()
        expected = np.zeros((5, 5))
        for e, tet in enumerate(mesh.tets):
            for a in range(4):
                for b in range(4):
                    expected[tet[a], tet[b]] += mesh.mu[e] * vol[e] * grads[e, a] @ grads[e, b]
        np.testing.assert_allclose(scalar_laplacian(mesh).toarray(), expected, rtol=1e-13)

    def test_positive_semidefinite(self, mesh50):
        lam = np.linalg.eigvalsh(scalar_laplacian(mesh50).toarray())
        assert lam.min() > -1e-9 * lam.max()


class TestSkinningWeights:
    def test_single_weight_is_constant(self, mesh50):
        ops = build_operators(mesh50)
        L = scalar_laplacian(mesh50)
        sw = compute_skinning_weights(L, ops.mass, 1)
        assert np.ptp(sw.W[:, 0]) == 0.0
        assert abs(sw.eigenvalues[0]) < 1e-10 * sp.linalg.norm(L)

    def test_residual_and_orthonormality(self, mesh50):
        ops = build_operators(mesh50)
        L = scalar_laplacian(mesh50)
        sw = compute_skinning_weights(L, ops.mass, 6)
        resid = L @ sw.W - ops.mass[:, None] * sw.W * sw.eigenvalues
        assert np.linalg.norm(resid) < 1e-8 * sp.linalg.norm(L)
        gram = sw.W.T @ (ops.mass[:, None] * sw.W)
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-8)
        assert np.all(np.diff(sw.eigenvalues) >= 0)

    def test_sign_convention(self, mesh50):
        ops = build_operators(mesh50)
        W = compute_skinning_weights(scalar_laplacian(mesh50), ops.mass, 5).W
        idx = np.argmax(np.abs(W), axis=0)
        assert np.all(W[idx, np.arange(5)] > 0)

    def test_full_spectrum_trace(self):
        mesh = jittered_box((2, 1, 1), seed=4)
        ops = build_operators(mesh)
        L = scalar_laplacian(mesh)
        n = mesh.n_vertices
        sw = compute_skinning_weights(L, ops.mass, n)
        expected = np.sum(L.diagonal() / ops.mass)
        assert sw.eigenvalues.sum() == pytest.approx(expected, rel=1e-8)

    def test_too_many_weights(self, unit_tet):
        ops = build_operators(unit_tet)
        with pytest.raises(EigenSolveError):
            compute_skinning_weights(scalar_laplacian(unit_tet), ops.mass, 5)

    def test_deterministic(self, mesh50):
        ops = build_operators(mesh50)
        L = scalar_laplacian(mesh50)
        a = compute_skinning_weights(L, ops.mass, 4).W
        b = compute_skinning_weights(L, ops.mass, 4).W
        np.testing.assert_array_equal(a, b)


class TestLbsJacobian:
    def test_identity_and_translation(self, mesh50):
        ops = build_operators(mesh50)
        sw = compute_skinning_weights(scalar_laplacian(mesh50), ops.mass, 1)
        basis = build_lbs_jacobian(sw.W, ops.X)
        assert basis.r == 12
        x0 = flatten_positions(ops.X)
        np.testing.assert_allclose(basis.positions(basis.rest_z()), x0, atol=1e-12)
        handles = np.zeros((1, 3, 4))
        handles[0, :, :3] = np.eye(3)
        handles[0, :, 3] = [0.3, -0.2, 0.7]
        z = basis.z_from_handles(handles / sw.W[0, 0])
        moved = basis.positions(z) - x0
        np.testing.assert_allclose(moved.reshape(3, -1),
                                   np.repeat([[0.3], [-0.2], [0.7]], mesh50.n_vertices, 1),
                                   atol=1e-12)

    def test_matches_brute_force_lbs(self, mesh50, rng):
        ops = build_operators(mesh50)
        W = rng.uniform(-1, 1, (mesh50.n_vertices, 3))
        basis = build_lbs_jacobian(W, ops.X)
        handles = rng.normal(size=(3, 3, 4))
        z = basis.z_from_handles(handles)
        expected = np.zeros((mesh50.n_vertices, 3))
        for i, X in enumerate(ops.X):
            for k in range(3):
                expected[i] += W[i, k] * (handles[k, :, :3] @ X + handles[k, :, 3])
        np.testing.assert_allclose(basis.positions(z), flatten_positions(expected), atol=1e-12)

    def test_full_column_rank(self, mesh50):
        ops = build_operators(mesh50)
        sw = compute_skinning_weights(scalar_laplacian(mesh50), ops.mass, 3)
        B = build_lbs_jacobian(sw.W, ops.X).B
        assert B.shape == (3 * mesh50.n_vertices, 36)
        assert np.linalg.matrix_rank(B) == 36

    def test_complete_basis_is_pruned_to_full_rank(self):
        mesh = two_tet_mesh()
        ops = build_operators(mesh)
        sw = compute_skinning_weights(scalar_laplacian(mesh), ops.mass, 2)
        basis = build_lbs_jacobian(sw.W, ops.X)
        assert basis.r == 15
        assert np.linalg.matrix_rank(basis.B) == 15

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), w=st.integers(1, 4))
    def test_affine_reproduction(self, seed, w):
        rng = np.random.default_rng(seed)
        mesh = jittered_box((2, 2, 1), seed=seed)
        ops = build_operators(mesh)
        sw = compute_skinning_weights(scalar_laplacian(mesh), ops.mass, w)
        basis = build_lbs_jacobian(sw.W, ops.X)
        A, b = rng.normal(size=(3, 3)), rng.normal(size=3)
        x = flatten_positions(ops.X @ A.T + b)
        resid = basis.positions(basis.fit(x)) - x
        assert np.linalg.norm(resid) < 1e-8 * np.linalg.norm(x)


class TestElasticHessian:
    def test_translation_null_space(self, mesh50, rng):
        H = elastic_hessian(mesh50)
        t = np.repeat(rng.normal(size=3), mesh50.n_vertices)
        assert np.linalg.norm(H @ t) < 1e-9 * abs(H).max()

    def test_energy_oracle(self, mesh50, rng):
        ops = build_operators(mesh50)
        H = elastic_hessian(mesh50, ops)
        delta = rng.normal(size=3 * mesh50.n_vertices)
        G = ops.deformation_gradients(delta)
        sym = 0.5 * (G + np.transpose(G, (0, 2, 1)))
        expected = np.sum(mesh50.mu * ops.volumes * np.sum(sym**2, axis=(1, 2)))
        assert delta @ H @ delta == pytest.approx(expected, rel=1e-12)

    def test_second_derivative_of_arap_energy(self, rng):
        # the Hessian is the curvature of 1/2 sum mu V |F - R(F)|^2 at rest
        mesh = jittered_box((1, 1, 1), seed=2)
        ops = build_operators(mesh)
        H = elastic_hessian(mesh, ops)
        x0 = flatten_positions(ops.X)
        d = rng.normal(size=x0.size)
        eps = 1e-4
        curvature = (elastic_energy(x0 + eps * d, mesh, ops) + elastic_energy(x0 - eps * d, mesh, ops)
                     - 2 * elastic_energy(x0, mesh, ops)) / eps**2
        assert curvature == pytest.approx(d @ H @ d, rel=1e-5)

    def test_linear_in_mu(self, mesh50):
        H1 = elastic_hessian(mesh50)
        H2 = elastic_hessian(mesh50.with_materials(mu=2 * mesh50.mu))
        assert abs(H2 - 2 * H1).max() < 1e-12 * abs(H1).max()


class TestActuationModes:
    def test_six_rigid_modes_and_residuals(self, mesh50):
        ops = build_operators(mesh50)
        H = elastic_hessian(mesh50, ops)
        x0 = flatten_positions(ops.X)
        modes = compute_actuation_modes(H, ops.M, 5, x0)
        assert modes.n_rigid == 6
        D, lam = modes.D, modes.eigenvalues
        mass = ops.mass_vector
        resid = H @ D - mass[:, None] * D * lam
        assert np.linalg.norm(resid) < 1e-8 * sp.linalg.norm(H)
        np.testing.assert_allclose(D.T @ (mass[:, None] * D), np.eye(5), atol=1e-8)
        assert np.all(np.diff(lam) >= 0)

    def test_rest_column(self, mesh50):
        ops = build_operators(mesh50)
        x0 = flatten_positions(ops.X)
        modes = compute_actuation_modes(elastic_hessian(mesh50, ops), ops.M, 2, x0)
        np.testing.assert_array_equal(modes.Dbar @ np.array([0.0, 0.0, 1.0]), x0)

    def test_modes_are_not_rigid(self, mesh50):
        ops = build_operators(mesh50)
        x0 = flatten_positions(ops.X)
        D = compute_actuation_modes(elastic_hessian(mesh50, ops), ops.M, 3, x0).D
        n = mesh50.n_vertices
        # net momentum of each mode along every axis is zero
        for a in range(3):
            assert abs(ops.mass @ D[a * n:(a + 1) * n]).max() < 1e-8

    def test_too_many_modes(self, unit_tet):
        ops = build_operators(unit_tet)
        x0 = flatten_positions(ops.X)
        with pytest.raises(EigenSolveError):
            compute_actuation_modes(elastic_hessian(unit_tet, ops), ops.M, 7, x0)

    def test_all_non_rigid_modes_of_single_tet(self, unit_tet):
        ops = build_operators(unit_tet)
        x0 = flatten_positions(ops.X)
        modes = compute_actuation_modes(elastic_hessian(unit_tet, ops), ops.M, 6, x0)
        assert modes.n_rigid == 6 and modes.m == 6
