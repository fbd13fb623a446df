"""Per-iteration solver traces, shared by the adaptive and baseline solvers."""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass
class IterationRecord:
    t: int
    rel_change: float
    z_delta_frob_sq: float
    fit_sq: float
    penalty: float
    objective: float
    surrogate: float
    alpha_tilde: float | None = None
    tau: np.ndarray | None = None


@dataclasses.dataclass
class SolverReport:
    method: str
    converged: bool = False
    iterations: int = 0
    initial_objective: float | None = None
    records: list = dataclasses.field(default_factory=list)
    threshold_drift: list = dataclasses.field(default_factory=list)
    assumption2: list = dataclasses.field(default_factory=list)
    notes: list = dataclasses.field(default_factory=list)

    @property
    def rel_changes(self):
        return np.array([rec.rel_change for rec in self.records])

    @property
    def objectives(self):
        return np.array([rec.objective for rec in self.records])

    def write_csv(self, path_or_buf):
        """One row per iteration; vector fields joined with ';'."""
        close = False
        if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
            fh = open(path_or_buf, "w")
            close = True
        else:
            fh = path_or_buf
        try:
            fh.write("iter,rel_change,z_delta_frob_sq,fit_sq,penalty,"
                     "objective,surrogate,alpha_tilde,tau,drift,assumption2\n")
            for i, rec in enumerate(self.records):
                drift = self.threshold_drift[i - 1] if 0 < i <= len(self.threshold_drift) else None
                a2 = self.assumption2[i] if i < len(self.assumption2) else None
                fh.write(",".join([
                    str(rec.t),
                    _fmt(rec.rel_change),
                    _fmt(rec.z_delta_frob_sq),
                    _fmt(rec.fit_sq),
                    _fmt(rec.penalty),
                    _fmt(rec.objective),
                    _fmt(rec.surrogate),
                    _fmt(rec.alpha_tilde),
                    _join(rec.tau),
                    _join(drift),
                    _fmt(a2),
                ]) + "\n")
        finally:
            if close:
                fh.close()


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _join(vec):
    if vec is None:
        return ""
    return ";".join(repr(float(v)) for v in vec)
