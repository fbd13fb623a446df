import numpy as np
import pytest

from adaptiveimpute.initializer import (
    debiased_spectrum,
    estimate_p,
    initialize,
    resolve_signs,
    sigma_operators,
)
from adaptiveimpute.linalg import DataError, ObservedMatrix


def make_low_rank(rng, n, d, r, scale=5.0):
    A = rng.uniform(-scale, scale, (n, r))
    B = rng.uniform(-scale, scale, (d, r))
    return A @ B.T


def observe(rng, M, p=1.0, sigma=0.0):
    noisy = M + (rng.normal(0.0, sigma, M.shape) if sigma > 0 else 0.0)
    mask = rng.random(M.shape) < p
    if not mask.any():
        mask[0, 0] = True
    return ObservedMatrix.from_dense(noisy, mask), mask


class TestEstimateP:
    def test_fully_observed(self):
        M = ObservedMatrix.from_dense(np.ones((2, 2)))
        assert estimate_p(M) == 1.0

    def test_half_observed(self):
        M = ObservedMatrix.from_entries(4, 2, [0, 1, 2, 3], [0, 1, 0, 1],
                                        [1.0, 1.0, 1.0, 1.0])
        assert estimate_p(M) == 0.5

    def test_binomial_agreement(self):
        rng = np.random.default_rng(0)
        n, d, p = 100, 50, 0.3
        mask = rng.random((n, d)) < p
        M = ObservedMatrix.from_dense(rng.standard_normal((n, d)), mask)
        sd = np.sqrt(p * (1 - p) / (n * d))
        assert abs(estimate_p(M) - p) < 4 * sd
        assert estimate_p(M) == mask.sum() / (n * d)


class TestSigmaOperators:
    def test_full_observation_is_plain_gram(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((6, 4))
        M = ObservedMatrix.from_dense(A)
        col_op, row_op = sigma_operators(M, 1.0)
        x = rng.standard_normal(4)
        np.testing.assert_allclose(col_op.matvec(x), A.T @ (A @ x), rtol=1e-12)
        y = rng.standard_normal(6)
        np.testing.assert_allclose(row_op.matvec(y), A @ (A.T @ y), rtol=1e-12)

    def test_hand_column(self):
        # 3x2 matrix, p_hat = 0.5: operator column 1 computed by hand
        A = np.array([[1.0, 2.0], [0.0, 3.0], [4.0, 0.0]])
        M = ObservedMatrix.from_dense(A)
        col_op, _ = sigma_operators(M, 0.5)
        G = A.T @ A
        expected = G - 0.5 * np.diag(np.diag(G))
        np.testing.assert_allclose(col_op.matvec(np.eye(2)[:, 0]),
                                   expected[:, 0], rtol=1e-12)
        np.testing.assert_allclose(col_op.to_dense(), expected, rtol=1e-12)

    def test_trace_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            M, _ = observe(rng, rng.standard_normal((15, 9)), p=0.6)
            p_hat = estimate_p(M)
            col_op, row_op = sigma_operators(M, p_hat)
            np.testing.assert_allclose(col_op.trace(),
                                       np.trace(col_op.to_dense()), rtol=1e-12)
            np.testing.assert_allclose(col_op.trace(),
                                       p_hat * np.sum(M.val ** 2), rtol=1e-12)
            np.testing.assert_allclose(row_op.trace(), col_op.trace(),
                                       rtol=1e-12)

    def test_matvec_matches_dense(self):
        rng = np.random.default_rng(3)
        M, _ = observe(rng, rng.standard_normal((12, 8)), p=0.5)
        col_op, row_op = sigma_operators(M, 0.37)
        for _ in range(5):
            x = rng.standard_normal(8)
            np.testing.assert_allclose(col_op.matvec(x),
                                       col_op.to_dense() @ x, rtol=1e-11)
            y = rng.standard_normal(12)
            np.testing.assert_allclose(row_op.matvec(y),
                                       row_op.to_dense() @ y, rtol=1e-11)


class TestDebiasedSpectrum:
    def test_noiseless_rank1_full_observation(self):
        alpha, tau, lam, clamped = debiased_spectrum([49.0], 49.0, 5, 1, 1.0)
        assert alpha == 0.0
        assert lam[0] == pytest.approx(7.0, rel=1e-12)
        assert tau[0] == pytest.approx(42.0, rel=1e-12)
        assert clamped == ()

    def test_direct_substitution(self):
        alpha, tau, lam, _ = debiased_spectrum([10.0, 4.0], 20.0, 6, 2, 1.0)
        assert alpha == pytest.approx(1.5)
        np.testing.assert_allclose(lam, [np.sqrt(8.5), np.sqrt(2.5)])
        p = 0.25
        _, _, lam_p, _ = debiased_spectrum([10.0, 4.0], 20.0, 6, 2, p)
        np.testing.assert_allclose(lam_p, lam / p)

    def test_negative_radicand_clamped(self):
        alpha, tau, lam, clamped = debiased_spectrum([3.0, 1.0], 16.0, 6, 2, 0.5)
        assert alpha == 3.0
        assert lam[1] == 0.0
        assert clamped == (1,)

    def test_output_sorted_nonnegative(self):
        _, _, lam, _ = debiased_spectrum([9.0, 5.0, 2.0], 20.0, 10, 3, 0.8)
        assert np.all(lam >= 0)
        assert np.all(np.diff(lam) <= 0)

    def test_monte_carlo_recovery(self):
        # noisy instances: debiased values track the true spectrum
        errs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n = d = 400
            M_true = make_low_rank(rng, n, d, 2)
            true_lam = np.linalg.svd(M_true, compute_uv=False)[:2]
            M, _ = observe(rng, M_true, p=0.5, sigma=0.5)
            p_hat = estimate_p(M)
            col_op, _ = sigma_operators(M, p_hat)
            from adaptiveimpute.linalg import truncated_svd
            f = truncated_svd(col_op, 2, seed=seed)
            _, _, lam, _ = debiased_spectrum(f.singular_values, col_op.trace(),
                                             d, 2, p_hat)
            errs.append(np.abs(lam - true_lam) / true_lam)
        assert np.max(errs) < 0.15


class TestResolveSigns:
    def _components(self, rng, n, d, r):
        M_true = make_low_rank(rng, n, d, r)
        U, s, Vt = np.linalg.svd(M_true)
        return M_true, U[:, :r], s[:r], Vt[:r].T

    def test_flip_case(self):
        rng = np.random.default_rng(4)
        M_true, U, s, V = self._components(rng, 8, 5, 1)
        M = ObservedMatrix.from_dense(M_true)
        flipped_U = -U
        for method in ("exhaustive", "svd-sign", "regression"):
            signs = resolve_signs(M, flipped_U, V, s, method)
            assert signs[0] == -1.0

    def test_methods_agree_with_exhaustive(self):
        rng = np.random.default_rng(5)
        for r in (1, 2, 3):
            M_true, U, s, V = self._components(rng, 20, 12, r)
            flip = np.where(rng.random(r) < 0.5, -1.0, 1.0)
            M, _ = observe(rng, M_true, p=0.8, sigma=0.01)
            ex = resolve_signs(M, U * flip, V, s, "exhaustive")
            sv = resolve_signs(M, U * flip, V, s, "svd-sign")
            rg = resolve_signs(M, U * flip, V, s, "regression")
            np.testing.assert_array_equal(ex, sv)
            np.testing.assert_array_equal(ex, rg)

    def test_noiseless_reconstruction(self):
        rng = np.random.default_rng(6)
        M_true, U, s, V = self._components(rng, 10, 7, 2)
        flip = np.array([-1.0, 1.0])
        M = ObservedMatrix.from_dense(M_true)
        for method in ("exhaustive", "svd-sign", "regression"):
            signs = resolve_signs(M, U * flip, V, s, method)
            recon = (U * flip * signs * s) @ V.T
            np.testing.assert_allclose(recon, M_true, atol=1e-9)

    def test_exhaustive_is_global_minimum(self):
        rng = np.random.default_rng(7)
        M_true, U, s, V = self._components(rng, 15, 9, 3)
        M, _ = observe(rng, M_true, p=0.5, sigma=1.0)
        best = resolve_signs(M, U, V, s, "exhaustive")

        def fit(signs):
            Z = (U * (signs * s)) @ V.T
            return np.sum((Z[M.row, M.col] - M.val) ** 2)

        import itertools
        best_val = fit(best)
        for cand in itertools.product((1.0, -1.0), repeat=3):
            assert best_val <= fit(np.array(cand)) + 1e-9

    def test_rank_limit(self):
        rng = np.random.default_rng(8)
        M = ObservedMatrix.from_dense(rng.standard_normal((40, 20)))
        with pytest.raises(ValueError):
            resolve_signs(M, np.eye(40, 13), np.eye(20, 13), np.ones(13),
                          "exhaustive")


class TestInitialize:
    def test_exact_at_full_observation(self):
        rng = np.random.default_rng(9)
        for r in (1, 2, 3):
            M_true = make_low_rank(rng, 30, 20, r)
            M = ObservedMatrix.from_dense(M_true)
            res = initialize(M, r)
            err = np.linalg.norm(res.estimate.to_dense() - M_true)
            assert err <= 1e-8 * np.linalg.norm(M_true)
            assert res.p_hat == 1.0
            assert res.sign_method_used == "exhaustive"

    def test_partial_observation_error(self):
        errs = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            n = d = 200
            M_true = make_low_rank(rng, n, d, 2)
            M, _ = observe(rng, M_true, p=0.5)
            res = initialize(M, 2, seed=seed)
            rel = (np.linalg.norm(res.estimate.to_dense() - M_true) ** 2
                   / np.linalg.norm(M_true) ** 2)
            errs.append(rel)
        assert np.median(errs) < 0.05
        assert np.max(errs) < 0.05

    def test_error_decreases_with_p(self):
        medians = []
        for p in (0.2, 0.5, 0.9):
            errs = []
            for seed in range(20):
                rng = np.random.default_rng(1000 + seed)
                M_true = make_low_rank(rng, 120, 80, 2)
                M, _ = observe(rng, M_true, p=p, sigma=0.5)
                res = initialize(M, 2, seed=seed)
                errs.append(np.linalg.norm(res.estimate.to_dense() - M_true) ** 2
                            / np.linalg.norm(M_true) ** 2)
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]

    def test_estimate_invariants(self):
        rng = np.random.default_rng(10)
        M, _ = observe(rng, make_low_rank(rng, 40, 25, 3), p=0.6, sigma=0.2)
        res = initialize(M, 3)
        s = res.estimate.singular_values
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
        assert set(np.unique(res.sign_vector)) <= {-1.0, 1.0}

    def test_r_out_of_range(self):
        rng = np.random.default_rng(11)
        M, _ = observe(rng, make_low_rank(rng, 10, 5, 2))
        with pytest.raises(ValueError):
            initialize(M, 5)
