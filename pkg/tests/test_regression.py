import numpy as np
import pytest

from cpdegen import _kernels
from cpdegen.regression import (
    CpRidge,
    FitConfig,
    LeastSquares,
    RegressionDataset,
    TensorRidge,
    block_design,
    block_update,
    fit_multi_start,
    fit_single,
    initial_factors,
    loss_f,
    objective,
    parse_method,
)
from cpdegen.synth import SynthSpec, generate_case
from cpdegen.tensor import CpFactors, ShapeError, cp_reconstruct, frobenius_norm, khatri_rao, magnitude

from oracles import central_gradient, objective_loops

METHODS = [LeastSquares(), CpRidge(0.3), TensorRidge(0.2)]
KIND = {LeastSquares: "ls", CpRidge: "cp_ridge", TensorRidge: "tensor_ridge"}


def make_data(rng, n=6, dims=(2, 2, 2)):
    X = rng.uniform(0, 1, (n,) + dims)
    return RegressionDataset.from_tensors(list(X), rng.standard_normal(n)), X


def exact_data(rng, n, dims, rank):
    truth = CpFactors.random(dims, rank, rng)
    X = rng.uniform(0, 1, (n,) + dims)
    y = X.reshape(n, -1) @ cp_reconstruct(truth).data.ravel()
    return RegressionDataset(X.reshape(n, -1), y, dims), truth


class TestDataset:
    def test_shapes_checked(self):
        with pytest.raises(ShapeError):
            RegressionDataset(np.ones((3, 4)), np.ones(2), (2, 2))
        with pytest.raises(ShapeError):
            RegressionDataset(np.ones((3, 4)), np.ones(3), (2, 3))

    def test_unfolded_matches_covariates(self, rng):
        data, X = make_data(rng, 4, (2, 3, 4))
        U = data.unfolded(1)
        assert U.shape == (4, 3, 8)
        np.testing.assert_array_equal(U[2], np.moveaxis(X[2], 1, 0).reshape(3, -1))


class TestMethods:
    @pytest.mark.parametrize("text, expected", [
        ("LS", LeastSquares()), ("cp_ridge:0.1", CpRidge(0.1)), ("tensor_ridge=0.01", TensorRidge(0.01)),
        ("lambda:0.5", CpRidge(0.5)), ("alpha:2", TensorRidge(2.0)),
    ])
    def test_parse(self, text, expected):
        assert parse_method(text) == expected

    @pytest.mark.parametrize("bad", ["cp_ridge:0", "tensor_ridge:-1", "cp_ridge", "LS:1", "lasso:1"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            parse_method(bad)


class TestLoss:
    def test_zero_factors(self, rng):
        data, _ = make_data(rng)
        zero = CpFactors(tuple(np.zeros((2, 2)) for _ in range(3)))
        assert loss_f(zero, data) == pytest.approx(float(data.y @ data.y), rel=1e-15)

    def test_interpolating_truth(self, rng):
        data, truth = exact_data(rng, 30, (3, 3, 3), 2)
        assert loss_f(truth, data) <= 1e-18 * float(data.y @ data.y)

    def test_matches_loops(self, rng):
        data, X = make_data(rng)
        f = CpFactors.random((2, 2, 2), 2, rng)
        assert loss_f(f, data) == pytest.approx(objective_loops(f.factors, X, data.y, "ls", 0), rel=1e-10)

    def test_dims_checked(self, rng):
        data, _ = make_data(rng)
        with pytest.raises(ShapeError):
            loss_f(CpFactors.random((2, 2, 3), 2, rng), data)

    def test_objective_variants(self, rng):
        data, X = make_data(rng)
        f = CpFactors.random((2, 2, 2), 2, rng)
        assert objective(f, data, FitConfig(2)) == loss_f(f, data)
        zero = CpFactors(tuple(np.zeros((2, 2)) for _ in range(3)))
        assert objective(zero, data, CpRidge(0.5)) == pytest.approx(float(data.y @ data.y), rel=1e-15)
        expected = loss_f(f, data) + 0.1 * frobenius_norm(cp_reconstruct(f)) ** 2
        assert objective(f, data, TensorRidge(0.1)) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("method", METHODS, ids=lambda m: KIND[type(m)])
    def test_objective_matches_loops(self, rng, method):
        for _ in range(5):
            n = int(rng.integers(3, 20))
            dims = tuple(int(p) for p in rng.integers(1, 5, size=int(rng.integers(2, 4))))
            data, X = make_data(rng, n, dims)
            f = CpFactors.random(dims, int(rng.integers(1, 4)), rng)
            ref = objective_loops(f.factors, X, data.y, KIND[type(method)], method.weight)
            assert objective(f, data, method) == pytest.approx(ref, rel=1e-10)


class TestBlockDesign:
    def test_matrix_case_fd_jacobian(self, rng):
        data, X = make_data(rng, 5, (3, 4))
        f = CpFactors.random((3, 4), 2, rng)
        W, _ = block_design(0, f, data)
        # row i equals vec(X_i B_2) in row-major layout
        for i in range(5):
            np.testing.assert_allclose(W[i], (X[i] @ f[1]).ravel(), atol=1e-13)

        def pred(b):
            return data.Z @ cp_reconstruct(f.replace(0, b.reshape(3, 2))).data.ravel()

        b0 = f[0].ravel()
        J = np.column_stack([
            (pred(b0 + h) - pred(b0 - h)) / (2e-5) for h in np.eye(b0.size) * 1e-5
        ])
        np.testing.assert_allclose(J, W, rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("d", [0, 1, 2])
    def test_prediction_linear_in_block(self, rng, d):
        data, _ = make_data(rng, 7, (2, 3, 4))
        f = CpFactors.random((2, 3, 4), 3, rng)
        W, _ = block_design(d, f, data)
        np.testing.assert_allclose(W @ f[d].ravel(), data.Z @ cp_reconstruct(f).data.ravel(), rtol=1e-12)

    def test_basis_selection(self, rng):
        data, X = make_data(rng, 4, (3, 2, 2))
        f = CpFactors((rng.standard_normal((3, 1)), np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]])))
        W, _ = block_design(0, f, data)
        np.testing.assert_array_equal(W, X[:, :, 1, 0])

    def test_penalty_grams(self, rng):
        data, _ = make_data(rng, 4, (3, 3, 3))
        f = CpFactors.random((3, 3, 3), 2, rng)
        assert not block_design(0, f, data, LeastSquares())[1].any()
        np.testing.assert_array_equal(block_design(0, f, data, CpRidge(0.7))[1], 0.7 * np.eye(6))

    def test_tensor_ridge_gram_orthonormal(self, rng):
        data, _ = make_data(rng, 4, (3, 3, 3))
        Q1 = np.linalg.qr(rng.standard_normal((3, 2)))[0]
        f = CpFactors((rng.standard_normal((3, 2)), Q1, np.ones((3, 2)) / np.sqrt(3) * [[1, 1]]))
        # columns of K are kron(Q1[:, r], 1/sqrt3) -> orthonormal
        K = khatri_rao([f[1], f[2]])
        np.testing.assert_allclose(K.T @ K, np.eye(2), atol=1e-12)
        _, P = block_design(0, f, data, TensorRidge(0.4))
        np.testing.assert_allclose(P, 0.4 * np.eye(6), atol=1e-12)

    @pytest.mark.parametrize("d", [0, 1, 2])
    def test_tensor_ridge_gram_quadratic_form(self, rng, d):
        data, _ = make_data(rng, 4, (3, 2, 4))
        f = CpFactors.random((3, 2, 4), 3, rng)
        _, P = block_design(d, f, data, TensorRidge(0.25))
        for _ in range(5):
            Bd = rng.standard_normal(f[d].shape)
            direct = 0.25 * frobenius_norm(cp_reconstruct(f.replace(d, Bd))) ** 2
            assert Bd.ravel() @ P @ Bd.ravel() == pytest.approx(direct, rel=1e-10)


class TestBlockUpdate:
    @pytest.mark.parametrize("method", METHODS, ids=lambda m: KIND[type(m)])
    def test_fixed_point(self, rng, method):
        data, _ = make_data(rng, 20, (3, 2, 2))
        f = block_update(1, CpFactors.random((3, 2, 2), 2, rng), data, method)
        g = block_update(1, f, data, method)
        np.testing.assert_allclose(g[1], f[1], atol=1e-9)

    @pytest.mark.parametrize("method", METHODS, ids=lambda m: KIND[type(m)])
    def test_block_gradient_vanishes(self, rng, method):
        for _ in range(5):
            dims = (3, 2, 3)
            data, _ = make_data(rng, 15, dims)
            f = CpFactors.random(dims, 2, rng)
            for d in range(3):
                f = block_update(d, f, data, method)
                obj = objective(f, data, method)
                scale = max(1.0, float(np.abs(f[d]).max()))
                grad = central_gradient(
                    lambda b: objective(f.replace(d, b.reshape(f[d].shape)), data, method), f[d].ravel(), 1e-5 * scale)
                assert np.abs(grad).max() <= 1e-6 * (1 + abs(obj))

    def test_never_increases(self, rng):
        for trial in range(100):
            method = METHODS[trial % 3]
            dims = tuple(int(p) for p in rng.integers(2, 4, size=3))
            data, _ = make_data(rng, int(rng.integers(3, 25)), dims)
            f = CpFactors.random(dims, int(rng.integers(1, 4)), rng)
            before = objective(f, data, method)
            d = int(rng.integers(0, 3))
            after = objective(block_update(d, f, data, method), data, method)
            assert after <= before + 1e-12 * (1 + abs(before))

    def test_underdetermined_least_squares_uses_min_norm(self, rng):
        data, _ = make_data(rng, 3, (4, 2, 2))
        f = CpFactors.random((4, 2, 2), 2, rng)
        W, _ = block_design(0, f, data)
        g = block_update(0, f, data, LeastSquares())
        np.testing.assert_allclose(g[0].ravel(), np.linalg.pinv(W) @ data.y, rtol=1e-7, atol=1e-9)


class TestFit:
    @pytest.mark.parametrize("method", METHODS, ids=lambda m: KIND[type(m)])
    def test_kernel_matches_reference_sweeps(self, rng, method):
        data, _ = make_data(rng, 12, (3, 2, 3))
        init = CpFactors.random((3, 2, 3), 2, rng)
        trace = fit_single(data, FitConfig(2, method, max_iterations=4), init)
        f = init
        for t in range(4):
            for d in range(3):
                f = block_update(d, f, data, method)
            assert trace.objective[t] == pytest.approx(objective(f, data, method), rel=1e-9)
            assert trace.magnitude[t] == pytest.approx(magnitude(f), rel=1e-9)
        for a, b in zip(trace.final.factors, f.factors):
            np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10)

    def test_single_sweep_from_stationary_point(self, rng):
        data, truth = exact_data(rng, 40, (3, 3, 3), 1)
        trace = fit_single(data, FitConfig(1, max_iterations=1), truth)
        assert len(trace) == 1
        for a, b in zip(trace.final.factors, truth.factors):
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_noiseless_case_1b_recovered(self):
        data = generate_case(SynthSpec("1b", n=200, p0=5, seed=3)).dataset
        trace = fit_multi_start(data, FitConfig(3, max_iterations=3000, num_starts=5, seed=11))
        assert trace.final_objective <= 1e-8 * float(data.y @ data.y)

    @pytest.mark.parametrize("method", METHODS, ids=lambda m: KIND[type(m)])
    def test_trace_monotone(self, rng, method):
        for _ in range(3):
            data, _ = make_data(rng, 30, (3, 3, 3))
            trace = fit_single(data, FitConfig(2, method, max_iterations=300), CpFactors.random((3, 3, 3), 2, rng))
            obj = np.concatenate([[trace.initial_objective], trace.objective])
            assert np.all(np.diff(obj) <= 1e-9 * (1 + np.abs(obj[:-1])))

    def test_stride_and_snapshots(self, rng):
        data, _ = make_data(rng, 20, (2, 3, 2))
        cfg = FitConfig(2, max_iterations=50, trace_stride=10, snapshot_iterations=(0, 5, 50), num_starts=1)
        trace = fit_multi_start(data, cfg)
        np.testing.assert_array_equal(trace.iterations, [10, 20, 30, 40, 50])
        assert sorted(trace.snapshots) == [0, 5, 50]
        for a, b in zip(trace.snapshots[0].factors, trace.initial.factors):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(trace.snapshots[50].factors, trace.final.factors):
            np.testing.assert_array_equal(a, b)
        assert trace.magnitude[-1] == pytest.approx(magnitude(trace.final), rel=1e-12)

    def test_multi_start_one_equals_single(self, rng):
        data, _ = make_data(rng, 20, (2, 3, 2))
        cfg = FitConfig(2, max_iterations=40, num_starts=1, seed=9)
        a = fit_multi_start(data, cfg)
        b = fit_single(data, cfg, initial_factors(data.dims, 2, 9, 0))
        np.testing.assert_array_equal(a.objective, b.objective)

    def test_multi_start_selects_minimum_deterministically(self, rng):
        data, _ = make_data(rng, 20, (2, 3, 2))
        cfg = FitConfig(2, max_iterations=40, num_starts=4, seed=1)
        a, b = fit_multi_start(data, cfg), fit_multi_start(data, cfg)
        assert a.final_objective == min(a.start_objectives)
        assert a.start == b.start and a.start_objectives == b.start_objectives
        np.testing.assert_array_equal(a.objective, b.objective)
        np.testing.assert_array_equal(a.magnitude, b.magnitude)

    def test_cp_ridge_magnitude_bounded(self):
        data = generate_case(SynthSpec("1a", n=60, p0=3, seed=2)).dataset
        for lam in (0.001, 0.01, 0.1):
            cfg = FitConfig(2, CpRidge(lam), max_iterations=500)
            trace = fit_single(data, cfg, initial_factors(data.dims, 2, 4))
            budget = trace.initial_objective / lam
            assert np.all(trace.magnitude <= (budget / 3) ** 1.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FitConfig(0)
        with pytest.raises(ValueError):
            FitConfig(2, max_iterations=0)
        with pytest.raises(ValueError):
            FitConfig(2, max_iterations=5, snapshot_iterations=(6,))
        assert FitConfig(2, "cp_ridge:0.5").method == CpRidge(0.5)


def test_pinv_solve_matches_lstsq(rng):
    A = rng.standard_normal((10, 4)) @ rng.standard_normal((4, 6))
    H, g = A.T @ A, A.T @ rng.standard_normal(10)
    np.testing.assert_allclose(_kernels.pinv_solve(H, g), np.linalg.pinv(H) @ g, rtol=1e-6, atol=1e-9)
