import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetwatch.elm import (
    OutputWeights,
    RandomLayer,
    SingularSystemError,
    derive_seed,
    hidden,
    lasso_objective,
    largest_eigenvalue,
    make_random_layer,
    soft_threshold,
    solve_lasso_fista,
    solve_ridge,
)


def ista(H, X, lam, iters):
    """Plain proximal gradient with the exact Lipschitz constant (test oracle)."""
    L = 2.0 * np.linalg.eigvalsh(H.T @ H).max()
    b = np.zeros((H.shape[1], X.shape[1]))
    for _ in range(iters):
        g = 2.0 * H.T @ (H @ b - X)
        z = b - g / L
        b = np.sign(z) * np.maximum(np.abs(z) - lam / L, 0.0)
    return b


class TestRandomLayer:
    def test_same_seed_bit_identical(self):
        a, b = make_random_layer(7, 3, 5), make_random_layer(7, 3, 5)
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)

    def test_entries_in_unit_box(self):
        layer = make_random_layer(3, 24, 200)
        assert layer.weights.min() >= -1 and layer.weights.max() <= 1
        assert np.abs(layer.biases).max() <= 1

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_random_layer(7, 3, 5).weights, make_random_layer(8, 3, 5).weights)

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError):
            make_random_layer(0, 0, 5)

    def test_layer_is_immutable(self):
        layer = make_random_layer(1, 2, 2)
        with pytest.raises(ValueError):
            layer.weights[0, 0] = 3.0

    def test_dict_round_trip(self):
        layer = make_random_layer(11, 4, 3)
        back = RandomLayer.from_dict(layer.to_dict())
        assert np.array_equal(back.weights, layer.weights) and back.seed == 11


class TestHidden:
    def test_zero_preactivation_gives_half(self):
        layer = RandomLayer(np.zeros((2, 3)), np.zeros(3), seed=0)
        assert np.array_equal(hidden(layer, np.ones((4, 2))), np.full((4, 3), 0.5))

    def test_saturation_is_monotone(self):
        layer = RandomLayer(np.ones((1, 1)), np.zeros(1), seed=0)
        h = hidden(layer, np.array([[1.0], [5.0], [30.0]]))[:, 0]
        assert np.all(np.diff(h) > 0) and h[-1] > 1 - 1e-12

    def test_matches_scalar_oracle(self):
        A = np.array([[0.5, -1.0], [2.0, 0.25]])
        B = np.array([0.1, -0.3])
        x = np.array([[0.7, -0.2]])
        expect = [1 / (1 + np.exp(-(0.7 * 0.5 - 0.2 * 2.0 + 0.1))), 1 / (1 + np.exp(-(-0.7 - 0.2 * 0.25 - 0.3)))]
        assert np.allclose(hidden(RandomLayer(A, B, 0), x)[0], expect, rtol=0, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hidden(make_random_layer(0, 3, 2), np.ones((2, 4)))

    @given(st.integers(0, 2**31), st.floats(-50, 50))
    @settings(max_examples=30, deadline=None)
    def test_outputs_bounded(self, seed, scale):
        layer = make_random_layer(seed, 3, 4)
        X = np.random.default_rng(seed).standard_normal((5, 3)) * scale
        H = hidden(layer, X)
        assert np.all((H >= 0) & (H <= 1))


class TestRidge:
    def test_orthonormal_columns_no_regularisation(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        T = rng.standard_normal((8, 2))
        assert np.allclose(solve_ridge(Q, T, 0.0).beta, Q.T @ T, atol=1e-12)

    def test_identity_with_unit_c_halves_target(self, rng):
        T = rng.standard_normal((5, 1))
        assert np.allclose(solve_ridge(np.eye(5), T, 1.0).beta, T / 2, atol=1e-15)

    def test_matches_explicit_inverse(self, rng):
        H, T = rng.standard_normal((6, 4)), rng.standard_normal((6, 1))
        oracle = np.linalg.inv(1e-5 * np.eye(4) + H.T @ H) @ H.T @ T
        beta = solve_ridge(H, T, 1e-5).beta
        assert np.linalg.norm(beta - oracle) <= 1e-8 * np.linalg.norm(oracle)

    def test_normal_equation_residual(self, rng):
        H, T = rng.standard_normal((40, 12)), rng.standard_normal((40, 3))
        beta = solve_ridge(H, T, 0.3).beta
        lhs = (0.3 * np.eye(12) + H.T @ H) @ beta
        assert np.linalg.norm(lhs - H.T @ T) <= 1e-10 * np.linalg.norm(H.T @ T)

    def test_singular_without_regularisation(self):
        H = np.ones((4, 2))
        with pytest.raises(SingularSystemError):
            solve_ridge(H, np.ones((4, 1)), 0.0)

    def test_unique_minimiser_probe(self, rng):
        H, T = rng.standard_normal((30, 6)), rng.standard_normal((30, 1))
        C = 0.5
        beta = solve_ridge(H, T, C).beta

        def obj(b):
            return np.sum((H @ b - T) ** 2) + C * np.sum(b * b)

        base = obj(beta)
        for _ in range(120):
            d = rng.standard_normal(beta.shape)
            assert obj(beta + 1e-3 * d / np.linalg.norm(d)) >= base

    def test_deterministic(self, rng):
        H, T = rng.standard_normal((20, 5)), rng.standard_normal((20, 2))
        assert np.array_equal(solve_ridge(H, T, 1e-5).beta, solve_ridge(H, T, 1e-5).beta)


class TestFista:
    def test_identity_matches_soft_threshold(self, rng):
        x = rng.standard_normal((12, 2))
        lam = 0.3
        beta = solve_lasso_fista(np.eye(12), x, lam).beta
        assert np.max(np.abs(beta - soft_threshold(x, lam / 2))) <= 1e-10

    def test_huge_lambda_gives_zero(self, rng):
        H, X = rng.standard_normal((20, 8)), rng.standard_normal((20, 3))
        assert np.all(solve_lasso_fista(H, X, 1e6).beta == 0)

    def test_against_ista_oracle(self, rng):
        H, X = rng.standard_normal((20, 8)), rng.standard_normal((20, 1))
        lam = 1e-3
        got = lasso_objective(H, X, solve_lasso_fista(H, X, lam).beta, lam)
        ref = lasso_objective(H, X, ista(H, X, lam, 100_000), lam)
        assert abs(got - ref) <= 1e-6 * abs(ref)

    def test_beats_zero_and_ridge(self, rng):
        H, X = rng.random((50, 10)), rng.standard_normal((50, 4))
        lam = 1e-2
        beta = solve_lasso_fista(H, X, lam).beta
        f = lasso_objective(H, X, beta, lam)
        assert f <= lasso_objective(H, X, np.zeros_like(beta), lam)
        assert f <= lasso_objective(H, X, solve_ridge(H, X, lam).beta, lam) + 1e-12

    def test_non_convergence_is_flagged(self, rng):
        H, X = rng.standard_normal((30, 10)), rng.standard_normal((30, 2))
        out = solve_lasso_fista(H, X, 1e-3, max_iters=2)
        assert not out.converged and out.n_iter == 2

    def test_non_finite_rejected(self):
        H = np.ones((3, 2))
        H[0, 0] = np.nan
        with pytest.raises(ValueError):
            solve_lasso_fista(H, np.ones((3, 1)), 1.0)

    def test_non_positive_lambda_rejected(self):
        with pytest.raises(ValueError):
            solve_lasso_fista(np.eye(2), np.ones((2, 1)), 0.0)

    def test_bit_reproducible(self, rng):
        H, X = rng.random((40, 10)), rng.standard_normal((40, 5))
        a, b = solve_lasso_fista(H, X, 1e-3), solve_lasso_fista(H, X, 1e-3)
        assert np.array_equal(a.beta, b.beta) and a.n_iter == b.n_iter


def test_power_iteration_close_to_eigvalsh(rng):
    M = rng.standard_normal((10, 10))
    M = M.T @ M
    assert largest_eigenvalue(M, 200) == pytest.approx(np.linalg.eigvalsh(M).max(), rel=1e-6)


def test_output_weights_round_trip(rng):
    w = OutputWeights(rng.standard_normal((4, 2)), converged=False, n_iter=17)
    back = OutputWeights.from_dict(w.to_dict())
    assert np.array_equal(back.beta, w.beta) and back.n_iter == 17 and not back.converged


def test_derived_seeds_are_distinct():
    seeds = {derive_seed(s, k) for s in range(20) for k in range(3)}
    assert len(seeds) == 60
