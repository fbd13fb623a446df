import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptiveimpute.harness import (
    MetricsRow,
    SimulationConfig,
    adaptive_method,
    baseline_method,
    cell_seed,
    errors,
    generate,
    nmae,
    oracle_method,
    relative_efficiency,
    run_grid,
    write_metrics_csv,
)
from adaptiveimpute.linalg import LowRankFactor, ObservedMatrix


def simple_row(**kw):
    base = dict(method="m", n=4, d=3, r=1, sigma=0.0, p=1.0, replicates=1,
                test=0.1, training=0.2, total=0.3, nmae=None, iters=1.0,
                seconds=0.0)
    base.update(kw)
    return MetricsRow(**base)


class TestGenerate:
    def test_noiseless_full_observation(self):
        truth = generate(SimulationConfig(n=10, d=6, r=2, sigma=0.0, p=1.0,
                                          seed=3))
        np.testing.assert_array_equal(truth.observed.to_dense(), truth.M)
        assert truth.omega.all()

    def test_paper_scale_config_accepted(self):
        cfg = SimulationConfig(n=1700, d=1000, r=5, sigma=1.0, p=0.1)
        assert cfg.n == 1700 and cfg.d == 1000

    def test_deterministic(self):
        cfg = SimulationConfig(n=12, d=8, r=2, sigma=0.5, p=0.5, seed=11)
        t1, t2 = generate(cfg), generate(cfg)
        np.testing.assert_array_equal(t1.M, t2.M)
        np.testing.assert_array_equal(t1.observed.to_dense(),
                                      t2.observed.to_dense())

    def test_observed_fraction_binomial(self):
        for seed in range(20):
            cfg = SimulationConfig(n=200, d=200, r=2, sigma=0.0, p=0.4,
                                   seed=seed)
            truth = generate(cfg)
            frac = truth.observed.n_obs / (200 * 200)
            sd = np.sqrt(0.4 * 0.6 / (200 * 200))
            assert abs(frac - 0.4) < 4 * sd

    def test_wide_config_keeps_orientation_consistent(self):
        truth = generate(SimulationConfig(n=6, d=9, r=2, sigma=0.0, p=0.8,
                                          seed=5))
        assert truth.M.shape == truth.observed.shape
        assert truth.omega.shape == truth.observed.shape
        vals = truth.observed.to_dense()[truth.omega]
        np.testing.assert_allclose(vals, truth.M[truth.omega], atol=1e-12)

    def test_factor_range(self):
        truth = generate(SimulationConfig(n=50, d=30, r=1, sigma=0.0, p=1.0,
                                          factor_range=0.1, seed=0))
        assert np.abs(truth.M).max() <= 0.01 + 1e-12

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            SimulationConfig(n=5, d=5, r=6, sigma=0.0, p=0.5)
        with pytest.raises(ValueError):
            SimulationConfig(n=5, d=5, r=2, sigma=0.0, p=0.0)


class TestErrors:
    def test_perfect_estimate(self):
        truth = generate(SimulationConfig(n=8, d=5, r=2, sigma=0.0, p=0.5,
                                          seed=1))
        te, tr, to = errors(truth.M, truth)
        assert te == 0.0 and tr == 0.0 and to == 0.0

    def test_hand_case(self):
        M = np.eye(2)
        observed = ObservedMatrix.from_dense(M, np.eye(2, dtype=bool))
        from adaptiveimpute.harness import SimulationTruth
        truth = SimulationTruth(M=M, observed=observed,
                                omega=np.eye(2, dtype=bool))
        te, tr, to = errors(np.diag([0.0, 1.0]), truth)
        assert tr == pytest.approx(0.5)
        assert to == pytest.approx(0.5)
        assert te is None  # off-mask truth is all zeros: 0/0 flagged absent

    def test_full_observation_test_absent(self):
        truth = generate(SimulationConfig(n=6, d=4, r=2, sigma=0.0, p=1.0,
                                          seed=2))
        te, tr, to = errors(np.zeros((6, 4)), truth)
        assert te is None
        assert tr == pytest.approx(1.0)

    def test_against_direct_dense_computation(self):
        rng = np.random.default_rng(3)
        truth = generate(SimulationConfig(n=15, d=9, r=2, sigma=1.0, p=0.6,
                                          seed=4))
        M_hat = truth.M + rng.standard_normal(truth.M.shape)
        te, tr, to = errors(M_hat, truth)
        om = truth.omega
        diff = M_hat - truth.M
        assert to == pytest.approx(np.sum(diff**2) / np.sum(truth.M**2),
                                   rel=1e-12)
        assert tr == pytest.approx(np.sum(diff[om]**2) /
                                   np.sum(truth.M[om]**2), rel=1e-12)
        assert te == pytest.approx(np.sum(diff[~om]**2) /
                                   np.sum(truth.M[~om]**2), rel=1e-12)

    def test_mask_decomposition_identity(self):
        rng = np.random.default_rng(4)
        truth = generate(SimulationConfig(n=10, d=7, r=2, sigma=0.5, p=0.5,
                                          seed=5))
        M_hat = truth.M + rng.standard_normal(truth.M.shape)
        diff = M_hat - truth.M
        om = truth.omega
        assert np.sum(diff**2) == pytest.approx(
            np.sum(diff[om]**2) + np.sum(diff[~om]**2), rel=1e-12)


class TestRelativeEfficiency:
    def test_identical_rows(self):
        a = simple_row()
        assert relative_efficiency(a, a) == (1.0, 1.0, 1.0)

    def test_hand_ratio(self):
        base = simple_row(test=0.2)
        other = simple_row(test=0.1)
        assert relative_efficiency(base, other)[0] == pytest.approx(2.0)

    def test_zero_denominator_flagged(self):
        base = simple_row()
        other = simple_row(test=0.0, training=None)
        ratios = relative_efficiency(base, other)
        assert ratios[0] is None and ratios[1] is None


class TestNmae:
    def test_perfect_predictions(self):
        M_hat = np.array([[1.0, 2.0], [3.0, 4.0]])
        entries = ([0, 1], [1, 0], [2.0, 3.0])
        assert nmae(M_hat, entries, 5.0, 1.0) == 0.0

    def test_hand_case(self):
        # errors (1, 3), range 4, two entries -> 0.5
        M_hat = np.array([[2.0, 0.0], [0.0, 8.0]])
        entries = ([0, 1], [0, 1], [1.0, 5.0])
        assert nmae(M_hat, entries, 5.0, 1.0) == pytest.approx(0.5)

    def test_factor_input(self):
        rng = np.random.default_rng(5)
        U, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        V, _ = np.linalg.qr(rng.standard_normal((4, 2)))
        f = LowRankFactor(U, np.array([2.0, 1.0]), V)
        dense = f.to_dense()
        entries = ([0, 3, 5], [1, 2, 0], dense[[0, 3, 5], [1, 2, 0]] + 1.0)
        got = nmae(f, entries, 5.0, 1.0)
        assert got == pytest.approx(0.25, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nmae(np.zeros((2, 2)), ([], [], []), 5.0, 1.0)
        with pytest.raises(ValueError):
            nmae(np.zeros((2, 2)), ([0], [0], [1.0]), 1.0, 1.0)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_nonnegative_and_zero_iff_exact(self, seed):
        rng = np.random.default_rng(seed)
        M_hat = rng.standard_normal((5, 4))
        rows = rng.integers(0, 5, 6)
        cols = rng.integers(0, 4, 6)
        vals = rng.standard_normal(6)
        v = nmae(M_hat, (rows, cols, vals), 2.0, -2.0)
        assert v >= 0.0
        exact = nmae(M_hat, (rows, cols, M_hat[rows, cols]), 2.0, -2.0)
        assert exact == 0.0


class TestRunGrid:
    def test_single_cell(self):
        rows = run_grid([baseline_method("softimpute", 1.0)],
                        [SimulationConfig(n=20, d=12, r=2, sigma=0.5, p=0.6)],
                        replicates=1, master_seed=7)
        assert len(rows) == 1
        assert rows[0].method == "softimpute"
        assert rows[0].total is not None and rows[0].total >= 0

    def test_grid_shape_and_determinism(self):
        methods = [adaptive_method(2, max_iters=50),
                   baseline_method("softimpute", 2.0, max_iters=50)]
        configs = [SimulationConfig(n=20, d=12, r=2, sigma=0.5, p=p)
                   for p in (0.5, 0.8)]
        rows1 = run_grid(methods, configs, replicates=2, master_seed=3)
        rows2 = run_grid(methods, configs, replicates=2, master_seed=3)
        assert len(rows1) == 4
        buf1, buf2 = io.StringIO(), io.StringIO()
        write_metrics_csv(rows1, buf1)
        write_metrics_csv(rows2, buf2)
        assert buf1.getvalue() == buf2.getvalue()

    def test_threaded_matches_serial(self):
        methods = [baseline_method("softimpute", 1.0, max_iters=30)]
        configs = [SimulationConfig(n=15, d=10, r=2, sigma=0.5, p=p)
                   for p in (0.4, 0.7)]
        serial = run_grid(methods, configs, replicates=2, master_seed=5,
                          threads=1)
        threaded = run_grid(methods, configs, replicates=2, master_seed=5,
                            threads=4)
        b1, b2 = io.StringIO(), io.StringIO()
        write_metrics_csv(serial, b1)
        write_metrics_csv(threaded, b2)
        assert b1.getvalue() == b2.getvalue()

    def test_cell_seed_stable(self):
        assert cell_seed(1, 2, 3, 4) == cell_seed(1, 2, 3, 4)
        assert cell_seed(1, 2, 3, 4) != cell_seed(1, 2, 3, 5)

    def test_csv_header(self):
        buf = io.StringIO()
        write_metrics_csv([simple_row()], buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == ("method,n,d,r,sigma,p,replicates,test,training,"
                            "total,nmae,iters,seconds")
        assert lines[1].startswith("m,4,3,1,0.0,1.0,1,")

    def test_csv_se_columns(self):
        buf = io.StringIO()
        write_metrics_csv([simple_row(test_se=0.01, training_se=0.02,
                                      total_se=0.03)], buf, include_se=True)
        lines = buf.getvalue().splitlines()
        assert lines[0].endswith("seconds,test_se,training_se,total_se")
        assert lines[1].endswith("0.01,0.02,0.03")

    def test_oracle_method_runs(self):
        rows = run_grid([oracle_method("softimpute", grid_size=4,
                                       max_iters=40)],
                        [SimulationConfig(n=20, d=12, r=2, sigma=0.5, p=0.6)],
                        replicates=1, master_seed=9)
        assert rows[0].total is not None

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            run_grid([], [SimulationConfig(n=5, d=4, r=1, sigma=0, p=1)],
                     1, 0)
        with pytest.raises(ValueError):
            run_grid([baseline_method("softimpute", 1.0)], [], 1, 0)
