"""Simulation generation, error metrics, and deterministic experiment grids.

Ground truth is a product of uniform factors plus Gaussian noise observed
through a Bernoulli mask.  Grid cells derive their seeds from the master
seed and cell coordinates, so serial and parallel runs emit identical
tables.
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .adaptive import AdaptiveConfig
from .adaptive import run as run_adaptive
from .linalg import DataError, LowRankFactor, ObservedMatrix
from .softimpute import (
    BaselineConfig,
    BaselineSpec,
    default_tau_grid,
    oracle_tune,
    run_baseline,
)

THREADS_ENV = "ADAPTIVEIMPUTE_THREADS"

CSV_HEADER = ("method,n,d,r,sigma,p,replicates,test,training,total,"
              "nmae,iters,seconds")


@dataclasses.dataclass(frozen=True)
class SimulationConfig:
    n: int
    d: int
    r: int
    sigma: float
    p: float
    factor_range: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.r > min(self.n, self.d):
            raise ValueError("rank exceeds matrix dimensions")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must be in (0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclasses.dataclass(frozen=True)
class SimulationTruth:
    M: np.ndarray           # ground truth, same orientation as `observed`
    observed: ObservedMatrix
    omega: np.ndarray       # boolean mask, same orientation

    @property
    def shape(self):
        return self.M.shape


# paper-scale reference configuration; shipped for completeness, far too
# heavy for the test suite
PAPER_SCALE = SimulationConfig(n=1700, d=1000, r=5, sigma=1.0, p=0.1)


def generate(cfg: SimulationConfig) -> SimulationTruth:
    """Draw one simulated instance, deterministically per seed.

    Factor entries are uniform on [-factor_range, factor_range], noise is
    Gaussian, and the mask is Bernoulli(p), redrawn up to five times if it
    comes up empty.
    """
    rng = np.random.default_rng(cfg.seed)
    A = rng.uniform(-cfg.factor_range, cfg.factor_range, (cfg.n, cfg.r))
    B = rng.uniform(-cfg.factor_range, cfg.factor_range, (cfg.d, cfg.r))
    M = A @ B.T
    noise = rng.normal(0.0, cfg.sigma, (cfg.n, cfg.d)) if cfg.sigma > 0 \
        else np.zeros((cfg.n, cfg.d))
    mask = None
    for _ in range(5):
        mask = rng.random((cfg.n, cfg.d)) < cfg.p
        if mask.any():
            break
    else:
        raise DataError("all-entries-unobserved mask after 5 redraws")
    observed = ObservedMatrix.from_dense(M + noise, mask)
    if observed.orientation_flag:
        M = M.T.copy()
        mask = mask.T.copy()
    return SimulationTruth(M=M, observed=observed, omega=mask)


def errors(M_hat, truth: SimulationTruth):
    """(test, training, total) squared-error ratios against the truth.

    Test error is None when every entry was observed (no test set).
    """
    dense = M_hat.to_dense() if isinstance(M_hat, LowRankFactor) \
        else np.asarray(M_hat)
    if dense.shape != truth.M.shape:
        raise ValueError("estimate/truth shape mismatch")
    diff_sq = (dense - truth.M) ** 2
    truth_sq = truth.M ** 2
    total_den = float(truth_sq.sum())
    if total_den == 0.0:
        raise ValueError("degenerate truth matrix (all zeros)")
    omega = truth.omega
    total = float(diff_sq.sum()) / total_den
    train_den = float(truth_sq[omega].sum())
    training = float(diff_sq[omega].sum()) / train_den if train_den > 0 \
        else None
    comp = ~omega
    test_den = float(truth_sq[comp].sum())
    test = float(diff_sq[comp].sum()) / test_den if test_den > 0 else None
    return test, training, total


def nmae(M_hat, test_entries, m_max, m_min) -> float:
    """Mean absolute error on the test entries, normalized by the rating
    range.  ``test_entries`` is (rows, cols, values) in the estimate's
    orientation."""
    if m_max <= m_min:
        raise ValueError("need m_max > m_min")
    rows, cols, vals = test_entries
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("empty test set")
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if isinstance(M_hat, LowRankFactor):
        pred = M_hat.values_at(rows, cols)
    else:
        pred = np.asarray(M_hat)[rows, cols]
    return float(np.abs(pred - vals).sum() / ((m_max - m_min) * len(vals)))


@dataclasses.dataclass(frozen=True)
class MetricsRow:
    method: str
    n: int
    d: int
    r: int
    sigma: float
    p: float
    replicates: int
    test: float | None
    training: float | None
    total: float | None
    nmae: float | None
    iters: float
    seconds: float
    test_se: float | None = None
    training_se: float | None = None
    total_se: float | None = None


def relative_efficiency(base: MetricsRow, other: MetricsRow):
    """Base error divided by the competitor's, per error type; None where a
    denominator is zero or an error is unavailable."""
    out = []
    for name in ("test", "training", "total"):
        b, o = getattr(base, name), getattr(other, name)
        if b is None or o is None or o == 0.0:
            out.append(None)
        else:
            out.append(b / o)
    return tuple(out)


@dataclasses.dataclass(frozen=True)
class Method:
    """A named completion procedure run against a simulated instance.

    ``fit(truth, seed)`` returns (estimate, iterations); oracle methods may
    look at ``truth.M`` for tuning, which is the point of oracle baselines.
    """

    name: str
    fit: object


def adaptive_method(rank, epsilon=1e-7, max_iters=500, name="adaptive"):
    def fit(truth: SimulationTruth, seed):
        cfg = AdaptiveConfig(rank=rank, epsilon=epsilon, max_iters=max_iters,
                             seed=seed)
        Z, report = run_adaptive(truth.observed, cfg)
        return Z, report.iterations
    return Method(name, fit)


def baseline_method(variant, tau, rank_cap=None, epsilon=1e-7, max_iters=500,
                    name=None):
    def fit(truth: SimulationTruth, seed):
        spec = BaselineSpec(variant, tau, rank_cap)
        cfg = BaselineConfig(epsilon=epsilon, max_iters=max_iters, seed=seed)
        Z, report = run_baseline(truth.observed, spec, cfg)
        return Z, report.iterations
    return Method(name or variant, fit)


def oracle_method(variant, rank_cap=None, grid_size=20, epsilon=1e-7,
                  max_iters=500, name=None):
    """Baseline with its threshold tuned on the ground truth (best case)."""
    def fit(truth: SimulationTruth, seed):
        cfg = BaselineConfig(epsilon=epsilon, max_iters=max_iters, seed=seed)
        grid = default_tau_grid(truth.observed, size=grid_size, seed=seed)
        tuned = oracle_tune(truth.M, truth.observed, variant, grid,
                            rank_cap=rank_cap, cfg=cfg)
        Z, report = run_baseline(truth.observed, tuned.spec, cfg)
        return Z, report.iterations
    return Method(name or f"oracle-{variant}", fit)


def cell_seed(master_seed, config_index, method_index, replicate) -> int:
    ss = np.random.SeedSequence(
        [int(master_seed), int(config_index), int(method_index),
         int(replicate)])
    return int(ss.generate_state(1)[0])


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.array(vals, dtype=np.float64)
    se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), se


def run_grid(methods, configs, replicates, master_seed, threads=None,
             timing=False):
    """Mean errors per (method, config) cell over seeded replicates.

    One MetricsRow per cell.  ``timing=False`` (the default) reports zero
    wall time so output files are bytewise reproducible; pass True for real
    timings at the cost of reproducible bytes.
    """
    if not methods or not configs:
        raise ValueError("need at least one method and one config")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))

    cells = [(ci, mi) for ci in range(len(configs))
             for mi in range(len(methods))]

    def run_cell(cell):
        ci, mi = cell
        cfg, method = configs[ci], methods[mi]
        tests, trains, totals, iters = [], [], [], []
        start = time.perf_counter()
        for rep in range(replicates):
            seed = cell_seed(master_seed, ci, mi, rep)
            truth = generate(dataclasses.replace(cfg, seed=seed))
            estimate, its = method.fit(truth, seed)
            te, tr, to = errors(estimate, truth)
            tests.append(te)
            trains.append(tr)
            totals.append(to)
            iters.append(its)
        elapsed = time.perf_counter() - start if timing else 0.0
        test_m, test_se = _mean_or_none(tests)
        train_m, train_se = _mean_or_none(trains)
        total_m, total_se = _mean_or_none(totals)
        return MetricsRow(
            method=method.name, n=cfg.n, d=cfg.d, r=cfg.r, sigma=cfg.sigma,
            p=cfg.p, replicates=replicates, test=test_m, training=train_m,
            total=total_m, nmae=None, iters=float(np.mean(iters)),
            seconds=elapsed, test_se=test_se, training_se=train_se,
            total_se=total_se)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(cell) for cell in cells]
    return rows


def _csv_field(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics_csv(rows, path_or_buf, include_se=False):
    """Emit the grid table; optional standard-error columns are appended
    after the standard header fields."""
    close = False
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf,
                                                        "__fspath__"):
        fh = open(path_or_buf, "w")
        close = True
    else:
        fh = path_or_buf
    try:
        header = CSV_HEADER + (",test_se,training_se,total_se"
                               if include_se else "")
        fh.write(header + "\n")
        for row in rows:
            fields = [row.method, row.n, row.d, row.r, row.sigma, row.p,
                      row.replicates, row.test, row.training, row.total,
                      row.nmae, row.iters, row.seconds]
            if include_se:
                fields += [row.test_se, row.training_se, row.total_se]
            fh.write(",".join(_csv_field(f) for f in fields) + "\n")
    finally:
        if close:
            fh.close()


def figure1_desk_preset(rank=5, replicates=20):
    """Observation-probability sweep at desk scale: the adaptive solver
    against oracle-tuned baselines."""
    configs = [SimulationConfig(n=170, d=100, r=5, sigma=1.0, p=p)
               for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
    methods = [
        adaptive_method(rank),
        oracle_method("softimpute"),
        oracle_method("softimpute-rank", rank_cap=rank),
        oracle_method("als-rank", rank_cap=rank),
    ]
    return methods, configs, replicates


def figure3_desk_preset(rank=5, replicates=20):
    """Noise sweep at desk scale and low observation probability."""
    configs = [SimulationConfig(n=170, d=100, r=5, sigma=s, p=0.1)
               for s in (0.1, 0.5, 1.0, 5.0, 15.0, 50.0)]
    methods = [
        adaptive_method(rank),
        oracle_method("softimpute"),
        oracle_method("softimpute-rank", rank_cap=rank),
    ]
    return methods, configs, replicates


PRESETS = {
    "figure1-desk": figure1_desk_preset,
    "figure3-desk": figure3_desk_preset,
}
