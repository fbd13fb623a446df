"""Sparse and low-rank matrix primitives shared by every solver.

The central representation trick: a filled-in iterate ``P(M_p) + P_perp(Z)``
is never materialized.  It is kept as a low-rank factor plus a sparse overlay
on the observed entries, which supports fast matvecs and a closed-form
Frobenius norm.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    """Malformed observation data: bad indices, duplicates, empty mask."""


class SVDConvergenceError(RuntimeError):
    """Truncated SVD failed its residual check after the iteration cap."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclasses.dataclass(frozen=True)
class ObservedMatrix:
    """Observed entries of a partially observed n x d matrix.

    Kept tall (n_cols <= n_rows); wide inputs are transposed on construction
    and ``orientation_flag`` records that the stored matrix is the transpose
    of the user's.  Acts as the sparse matrix P(M_p): zeros off the mask.
    """

    n_rows: int
    n_cols: int
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray
    orientation_flag: bool = False

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise DataError("matrix dimensions must be positive")
        if self.n_cols > self.n_rows:
            raise DataError("stored orientation must satisfy n_cols <= n_rows; "
                            "use from_entries to auto-transpose")
        if len(self.row) == 0:
            raise DataError("observation set is empty")
        if len(self.row) != len(self.col) or len(self.row) != len(self.val):
            raise DataError("index/value arrays must have equal length")
        if self.row.min() < 0 or self.row.max() >= self.n_rows:
            raise DataError("row index out of range")
        if self.col.min() < 0 or self.col.max() >= self.n_cols:
            raise DataError("column index out of range")
        flat = self.row.astype(np.int64) * self.n_cols + self.col
        if len(np.unique(flat)) != len(flat):
            raise DataError("duplicate (row, col) observations")

    @classmethod
    def from_entries(cls, n_rows, n_cols, rows, cols, vals,
                     orientation_flag=False):
        """Build from 0-based index and value arrays, transposing if wide."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if n_cols > n_rows:
            rows, cols = cols, rows
            n_rows, n_cols = n_cols, n_rows
            orientation_flag = not orientation_flag
        order = np.lexsort((cols, rows))
        return cls(n_rows, n_cols, rows[order], cols[order], vals[order],
                   orientation_flag)

    @classmethod
    def from_dense(cls, A, mask=None):
        """Observed matrix from a dense array; mask defaults to all entries."""
        A = np.asarray(A, dtype=np.float64)
        if mask is None:
            mask = np.ones(A.shape, dtype=bool)
        rows, cols = np.nonzero(mask)
        return cls.from_entries(A.shape[0], A.shape[1], rows, cols,
                                A[rows, cols])

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def n_obs(self):
        return len(self.val)

    @cached_property
    def _csr(self):
        return sp.csr_matrix((self.val, (self.row, self.col)), shape=self.shape)

    @cached_property
    def _csr_t(self):
        return self._csr.T.tocsr()

    def matvec(self, x):
        return self._csr @ x

    def rmatvec(self, y):
        return self._csr_t @ y

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row, self.col] = self.val
        return out

    def mask(self):
        """Boolean observation mask in the stored orientation."""
        m = np.zeros(self.shape, dtype=bool)
        m[self.row, self.col] = True
        return m

    def frob_sq(self):
        return float(self.val @ self.val)


@dataclasses.dataclass(frozen=True)
class LowRankFactor:
    """Rank-r factorization Z = U diag(s) V^T with orthonormal U, V."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    _ORTHO_TOL = 1e-8

    def __post_init__(self):
        U, s, V = self.U, self.singular_values, self.V
        r = s.shape[0]
        if U.ndim != 2 or V.ndim != 2 or s.ndim != 1:
            raise ValueError("U, V must be matrices and singular_values a vector")
        if U.shape[1] != r or V.shape[1] != r:
            raise ValueError("factor rank mismatch")
        if r and (np.any(s < 0) or np.any(np.diff(s) > 0)):
            raise ValueError("singular values must be nonnegative and non-increasing")
        for name, Q in (("U", U), ("V", V)):
            err = np.abs(Q.T @ Q - np.eye(r)).max() if r else 0.0
            if err > self._ORTHO_TOL:
                raise ValueError(f"{name} columns not orthonormal (deviation {err:.2e})")

    @classmethod
    def zero(cls, n, d):
        return cls(np.zeros((n, 0)), np.zeros(0), np.zeros((d, 0)))

    @property
    def rank(self):
        return self.singular_values.shape[0]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def to_dense(self):
        return (self.U * self.singular_values) @ self.V.T

    def matvec(self, x):
        return self.U @ (self.singular_values * (self.V.T @ x))

    def rmatvec(self, y):
        return self.V @ (self.singular_values * (self.U.T @ y))

    def values_at(self, rows, cols):
        """Entries Z[rows[k], cols[k]] without materializing Z."""
        if self.rank == 0:
            return np.zeros(len(rows))
        return np.einsum("ij,ij->i", self.U[rows] * self.singular_values,
                         self.V[cols])

    def frob_sq(self):
        return float(self.singular_values @ self.singular_values)

    def transpose(self):
        return LowRankFactor(self.V, self.singular_values, self.U)


def factor_inner(a: LowRankFactor, b: LowRankFactor) -> float:
    """Frobenius inner product of two factored matrices, O((n+d) r^2)."""
    if a.rank == 0 or b.rank == 0:
        return 0.0
    cross = (a.U.T @ b.U) * (a.V.T @ b.V)
    return float(a.singular_values @ cross @ b.singular_values)


def factor_diff_frob_sq(a: LowRankFactor, b: LowRankFactor) -> float:
    """|A - B|_F^2 via factor identities, clamped at zero."""
    return max(0.0, a.frob_sq() + b.frob_sq() - 2.0 * factor_inner(a, b))


@dataclasses.dataclass(frozen=True)
class CompositeMatrix:
    """Implicit matrix Z + S with Z low-rank and S a sparse overlay.

    In the canonical use S lives on the observed set with values
    M_p - Z there, so the composite equals M_p on the mask and Z off it.
    """

    low_rank: LowRankFactor
    res_row: np.ndarray
    res_col: np.ndarray
    res_val: np.ndarray

    @classmethod
    def from_observed(cls, Z: LowRankFactor, M: ObservedMatrix):
        if Z.shape != M.shape:
            raise ValueError("factor/observation shape mismatch")
        res = M.val - Z.values_at(M.row, M.col)
        return cls(Z, M.row, M.col, res)

    @property
    def shape(self):
        return self.low_rank.shape

    @cached_property
    def _csr(self):
        return sp.csr_matrix((self.res_val, (self.res_row, self.res_col)),
                             shape=self.shape)

    @cached_property
    def _csr_t(self):
        return self._csr.T.tocsr()

    def matvec(self, x):
        if x.shape[0] != self.shape[1]:
            raise ValueError("matvec dimension mismatch")
        return self.low_rank.matvec(x) + self._csr @ x

    def rmatvec(self, y):
        if y.shape[0] != self.shape[0]:
            raise ValueError("rmatvec dimension mismatch")
        return self.low_rank.rmatvec(y) + self._csr_t @ y

    def frob_sq(self):
        """Closed-form |Z + S|_F^2; never materializes the matrix."""
        z_vals = self.low_rank.values_at(self.res_row, self.res_col)
        return (self.low_rank.frob_sq()
                + 2.0 * float(z_vals @ self.res_val)
                + float(self.res_val @ self.res_val))

    def to_dense(self):
        out = self.low_rank.to_dense()
        out[self.res_row, self.res_col] += self.res_val
        return out


class DenseOperator:
    """Adapter giving a dense array the operator protocol."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)

    @property
    def shape(self):
        return self.A.shape

    def matvec(self, x):
        return self.A @ x

    def rmatvec(self, y):
        return self.A.T @ y

    def to_dense(self):
        return self.A

    def frob_sq(self):
        return float(np.sum(self.A * self.A))


def _as_operator(op):
    if isinstance(op, np.ndarray):
        return DenseOperator(op)
    if hasattr(op, "matvec") and hasattr(op, "rmatvec") and hasattr(op, "shape"):
        return op
    raise TypeError(f"not a linear operator: {type(op)!r}")


def materialize(op):
    op = _as_operator(op)
    if hasattr(op, "to_dense"):
        return op.to_dense()
    n, d = op.shape
    return np.column_stack([op.matvec(e) for e in np.eye(d)])


DENSE_SVD_CUTOFF = 64


def truncated_svd(op, k, seed=0, method="auto",
                  ritz_tol=1e-10, residual_tol=1e-8) -> LowRankFactor:
    """Top-k singular triplets of a linear operator.

    Uses Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization
    and a seeded start vector; falls back to a dense SVD when
    ``min(shape) <= 64`` (or when forced via ``method``).  Deterministic for
    a fixed seed.  Raises :class:`SVDConvergenceError` if, after the
    iteration cap ``10 k + 200``, the triplets fail the residual check
    ``|A v_i - s_i u_i| <= residual_tol * s_1``.
    """
    op = _as_operator(op)
    n, d = op.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} out of range for shape {op.shape}")
    if method == "auto":
        method = "dense" if min(n, d) <= DENSE_SVD_CUTOFF else "lanczos"
    if method == "dense":
        A = materialize(op)
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        return LowRankFactor(U[:, :k], s[:k], Vt[:k].T)
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")
    return _lanczos_svd(op, k, seed, ritz_tol, residual_tol)


def _orthogonalize(x, basis, ncols):
    # classical Gram-Schmidt applied twice; basis columns assumed orthonormal
    if ncols:
        B = basis[:, :ncols]
        x = x - B @ (B.T @ x)
        x = x - B @ (B.T @ x)
    return x


def _fresh_direction(rng, basis, ncols, dim):
    for _ in range(20):
        y = _orthogonalize(rng.standard_normal(dim), basis, ncols)
        ny = np.linalg.norm(y)
        if ny > 1e-6:
            return y / ny
    raise SVDConvergenceError("could not find a direction orthogonal to the "
                              "current Krylov basis")


def _lanczos_svd(op, k, seed, ritz_tol, residual_tol):
    n, d = op.shape
    m_max = min(min(n, d), 10 * k + 200)
    rng = np.random.default_rng(seed)
    P = np.zeros((n, m_max))
    Q = np.zeros((d, m_max))
    alphas = np.zeros(m_max)
    betas = np.zeros(m_max)

    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    scale = 0.0
    prev_ritz = None
    m = 0

    for j in range(m_max):
        Q[:, j] = v
        u = op.matvec(v)
        if j > 0:
            u = u - betas[j - 1] * P[:, j - 1]
        u = _orthogonalize(u, P, j)
        a = np.linalg.norm(u)
        scale = max(scale, a)
        if a <= 1e-13 * max(scale, 1e-300):
            alphas[j] = 0.0
            u = _fresh_direction(rng, P, j, n)
        else:
            alphas[j] = a
            u = u / a
        P[:, j] = u
        m = j + 1

        check = m >= min(k + 2, m_max) and (m % 5 == 0 or m == m_max)
        if check:
            B = _bidiagonal(alphas[:m], betas[:m - 1])
            ritz = np.linalg.svd(B, compute_uv=False)[:k]
            stable = (prev_ritz is not None
                      and np.abs(ritz - prev_ritz).max()
                      <= ritz_tol * max(ritz[0], 1e-300))
            prev_ritz = ritz
            if stable:
                factor, ok = _extract(op, P, Q, alphas, betas, m, k,
                                      residual_tol, strict=True)
                if ok:
                    return factor
        if m == m_max:
            break

        w = op.rmatvec(u) - alphas[j] * v
        w = _orthogonalize(w, Q, j + 1)
        b = np.linalg.norm(w)
        scale = max(scale, b)
        if b <= 1e-13 * max(scale, 1e-300):
            betas[j] = 0.0
            v = _fresh_direction(rng, Q, j + 1, d)
        else:
            betas[j] = b
            v = w / b

    factor, ok = _extract(op, P, Q, alphas, betas, m, k, residual_tol,
                          strict=False)
    return factor


def _bidiagonal(alphas, betas):
    B = np.diag(alphas)
    if len(betas):
        B += np.diag(betas, 1)
    return B


def _extract(op, P, Q, alphas, betas, m, k, residual_tol, strict):
    B = _bidiagonal(alphas[:m], betas[:m - 1])
    W, S, Yt = np.linalg.svd(B)
    kk = min(k, m)
    U = P[:, :m] @ W[:, :kk]
    V = Q[:, :m] @ Yt[:kk].T
    s = S[:kk]
    if kk < k:  # pad with orthogonal null directions (exact zero values)
        rng = np.random.default_rng(m)  # deterministic pad
        while U.shape[1] < k:
            U = np.column_stack([U, _fresh_direction(rng, U, U.shape[1], U.shape[0])])
            V = np.column_stack([V, _fresh_direction(rng, V, V.shape[1], V.shape[0])])
        s = np.concatenate([s, np.zeros(k - kk)])

    s1 = s[0] if len(s) else 0.0
    left = np.array([np.linalg.norm(op.matvec(V[:, i]) - s[i] * U[:, i])
                     for i in range(k)])
    right = np.array([np.linalg.norm(op.rmatvec(U[:, i]) - s[i] * V[:, i])
                      for i in range(k)])
    tol = residual_tol * s1
    if strict:
        ok = left.max(initial=0.0) <= tol and right.max(initial=0.0) <= tol
        if not ok:
            return None, False
    else:
        if left.max(initial=0.0) > tol:
            raise SVDConvergenceError(
                f"truncated SVD residual {left.max():.3e} exceeds "
                f"{residual_tol:.0e} * s1 after iteration cap",
                residuals=(left, right))
    return LowRankFactor(U, s, V), True


def entry_values(Z, rows, cols):
    """Entries of a dense array or low-rank factor at index arrays."""
    if isinstance(Z, LowRankFactor):
        return Z.values_at(rows, cols)
    return np.asarray(Z)[rows, cols]


def masked_residual_sq(Z, M: ObservedMatrix) -> float:
    """|P(Z - M_p)|_F^2 for dense or factored Z."""
    resid = entry_values(Z, M.row, M.col) - M.val
    return float(resid @ resid)


def diff_frob_sq(A, B) -> float:
    """|A - B|_F^2 for any mix of dense arrays and factors."""
    if isinstance(A, LowRankFactor) and isinstance(B, LowRankFactor):
        return factor_diff_frob_sq(A, B)
    Ad = A.to_dense() if isinstance(A, LowRankFactor) else np.asarray(A)
    Bd = B.to_dense() if isinstance(B, LowRankFactor) else np.asarray(B)
    return float(np.sum((Ad - Bd) ** 2))


def surrogate_fit_sq(Z_new, Z_prev, M: ObservedMatrix) -> float:
    """|P(M_p) + P_perp(Z_prev) - Z_new|_F^2 without materialization.

    Splits over the mask: the observed part is the fit of Z_new, the
    unobserved part is |Z_prev - Z_new|^2 minus its observed portion.
    """
    fit_new = masked_residual_sq(Z_new, M)
    step = (entry_values(Z_prev, M.row, M.col)
            - entry_values(Z_new, M.row, M.col))
    off_mask = diff_frob_sq(Z_prev, Z_new) - float(step @ step)
    return fit_new + max(0.0, off_mask)


def project_omega(A, rows, cols):
    """P(A): A's values on the index set, zero elsewhere, as sparse CSR."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if isinstance(A, LowRankFactor):
        n, d = A.shape
        vals = A.values_at(rows, cols)
    else:
        A = np.asarray(A)
        n, d = A.shape
        vals = A[rows, cols]
    if len(rows) and (rows.min() < 0 or rows.max() >= n
                      or cols.min() < 0 or cols.max() >= d):
        raise IndexError("projection index out of range")
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, d))


def project_omega_complement(A, rows, cols):
    """P_perp(A) as a dense array (the complement is dense by nature)."""
    if isinstance(A, LowRankFactor):
        out = A.to_dense()
    else:
        out = np.array(A, dtype=np.float64, copy=True)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if len(rows) and (rows.min() < 0 or rows.max() >= out.shape[0]
                      or cols.min() < 0 or cols.max() >= out.shape[1]):
        raise IndexError("projection index out of range")
    out[rows, cols] = 0.0
    return out


def trailing_mean_sq(op_frobenius_sq, top_values, d, r):
    """Mean of the trailing d - r squared singular values via the
    Frobenius identity, floored at zero."""
    if r >= d:
        raise ValueError(f"need r < d, got r={r}, d={d}")
    top = np.asarray(top_values, dtype=np.float64)
    return max(0.0, (float(op_frobenius_sq) - float(top @ top)) / (d - r))


@dataclasses.dataclass(frozen=True)
class ClipBounds:
    """Entrywise bounds [lower, upper]; either side may be absent."""

    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if (self.lower is not None and self.upper is not None
                and not self.lower < self.upper):
            raise ValueError("need lower < upper")

    def apply(self, values):
        lo = -np.inf if self.lower is None else self.lower
        hi = np.inf if self.upper is None else self.upper
        return np.clip(values, lo, hi)


def clip_matrix(Z, bounds: ClipBounds | None):
    """Entrywise clamp of a dense array or low-rank factor (materialized)."""
    dense = Z.to_dense() if isinstance(Z, LowRankFactor) else np.asarray(Z)
    if bounds is None:
        return dense
    return bounds.apply(dense)
