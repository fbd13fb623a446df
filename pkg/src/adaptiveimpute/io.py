"""Readers and writers: Matrix Market coordinate files, MovieLens ratings,
and plain-text factor files.

All writers emit text with shortest round-trip float formatting so identical
runs produce identical bytes.
"""

from __future__ import annotations

import os

import numpy as np

from .linalg import DataError, LowRankFactor, ObservedMatrix

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def read_matrix_market(path) -> ObservedMatrix:
    """Read a coordinate-format Matrix Market file (1-based indices)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.lower().startswith("%%matrixmarket"):
            raise DataError(f"{path}: missing MatrixMarket header")
        fields = header.lower().split()
        if fields[1:5] != ["matrix", "coordinate", "real", "general"]:
            raise DataError(f"{path}: unsupported MatrixMarket type {header!r}")
        line = fh.readline()
        while line and line.lstrip().startswith("%"):
            line = fh.readline()
        try:
            n, d, nnz = (int(tok) for tok in line.split())
        except ValueError as exc:
            raise DataError(f"{path}: bad size line {line!r}") from exc
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        k = 0
        for line in fh:
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            if k >= nnz:
                raise DataError(f"{path}: more entries than declared ({nnz})")
            toks = line.split()
            try:
                rows[k] = int(toks[0]) - 1
                cols[k] = int(toks[1]) - 1
                vals[k] = float(toks[2])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: bad entry line {line!r}") from exc
            k += 1
        if k != nnz:
            raise DataError(f"{path}: declared {nnz} entries, found {k}")
    return ObservedMatrix.from_entries(n, d, rows, cols, vals)


def _original_entries(M: ObservedMatrix):
    """(n, d, rows, cols, vals) in the caller's original orientation."""
    if M.orientation_flag:
        return M.n_cols, M.n_rows, M.col, M.row, M.val
    return M.n_rows, M.n_cols, M.row, M.col, M.val


def write_matrix_market(path, M: ObservedMatrix):
    """Write in the original (pre-transpose) orientation, 1-based indices."""
    n, d, rows, cols, vals = _original_entries(M)
    order = np.lexsort((cols, rows))
    with open(path, "w") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{n} {d} {len(vals)}\n")
        for k in order:
            fh.write(f"{rows[k] + 1} {cols[k] + 1} {float(vals[k])!r}\n")


def read_movielens(path, n_rows=None, n_cols=None) -> ObservedMatrix:
    """Read tab-separated ``user item rating timestamp`` lines (timestamp
    ignored, 1-based ids).  Pass explicit dimensions to keep train and test
    folds on the same index space."""
    users, items, ratings = [], [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split()
            if len(toks) < 3:
                raise DataError(f"{path}:{ln}: expected 'user item rating "
                                f"[timestamp]', got {line!r}")
            try:
                users.append(int(toks[0]) - 1)
                items.append(int(toks[1]) - 1)
                ratings.append(float(toks[2]))
            except ValueError as exc:
                raise DataError(f"{path}:{ln}: bad field in {line!r}") from exc
    if not users:
        raise DataError(f"{path}: no ratings found")
    n = n_rows if n_rows is not None else max(users) + 1
    d = n_cols if n_cols is not None else max(items) + 1
    return ObservedMatrix.from_entries(n, d, users, items, ratings)


def sniff_format(path) -> str:
    """Guess input format: 'mtx' for MatrixMarket, else 'movielens'."""
    with open(path) as fh:
        first = fh.readline()
    if first.lstrip().lower().startswith("%%matrixmarket"):
        return "mtx"
    return "movielens"


def read_observed(path, fmt="auto") -> ObservedMatrix:
    if fmt == "auto":
        fmt = sniff_format(path)
    if fmt == "mtx":
        return read_matrix_market(path)
    if fmt == "movielens":
        return read_movielens(path)
    raise DataError(f"unknown input format {fmt!r}")


def write_factor(dirpath, factor: LowRankFactor):
    """Write U, singular values, V as three text files in ``dirpath``."""
    os.makedirs(dirpath, exist_ok=True)
    np.savetxt(os.path.join(dirpath, "U.txt"), factor.U, fmt="%.17g")
    np.savetxt(os.path.join(dirpath, "singular_values.txt"),
               factor.singular_values, fmt="%.17g")
    np.savetxt(os.path.join(dirpath, "V.txt"), factor.V, fmt="%.17g")


def read_factor(dirpath) -> LowRankFactor:
    U = np.loadtxt(os.path.join(dirpath, "U.txt"), ndmin=2)
    s = np.loadtxt(os.path.join(dirpath, "singular_values.txt"), ndmin=1)
    V = np.loadtxt(os.path.join(dirpath, "V.txt"), ndmin=2)
    return LowRankFactor(U, s, V)
