"""One-step initial estimate from debiased Gram operators.

The observed fraction p is estimated, the column and row Gram matrices are
diagonal-corrected for missingness, their top-r spectra are debiased against
the trailing-eigenvalue mean, and the factor signs are fixed by one of three
interchangeable rules.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from .linalg import (
    DataError,
    LowRankFactor,
    ObservedMatrix,
    truncated_svd,
)

EXHAUSTIVE_MAX_RANK = 12

SIGN_METHODS = ("exhaustive", "svd-sign", "regression")


@dataclasses.dataclass(frozen=True)
class InitializerResult:
    estimate: LowRankFactor
    p_hat: float
    alpha_tilde: float
    tau_hat: np.ndarray
    sign_vector: np.ndarray
    sign_method_used: str
    clamped_components: tuple[int, ...] = ()


def estimate_p(M: ObservedMatrix) -> float:
    """Observed fraction |Omega| / (n d)."""
    if M.n_obs < 1:
        raise DataError("empty observation set")
    return M.n_obs / (M.n_rows * M.n_cols)


class GramOperator:
    """Symmetric implicit operator X^T X - (1 - p) diag(X^T X) for the
    column side, or X X^T based for the row side.  Matvecs go through the
    sparse matrix; the Gram matrix itself is never formed."""

    def __init__(self, M: ObservedMatrix, p_hat, side):
        if side not in ("col", "row"):
            raise ValueError("side must be 'col' or 'row'")
        self._M = M
        self._side = side
        self.p_hat = float(p_hat)
        sq = M.val * M.val
        dim = M.n_cols if side == "col" else M.n_rows
        idx = M.col if side == "col" else M.row
        diag = np.zeros(dim)
        np.add.at(diag, idx, sq)
        self._correction = (1.0 - self.p_hat) * diag
        self._dim = dim
        self._sumsq = float(sq.sum())

    @property
    def shape(self):
        return (self._dim, self._dim)

    def matvec(self, x):
        if self._side == "col":
            y = self._M.rmatvec(self._M.matvec(x))
        else:
            y = self._M.matvec(self._M.rmatvec(x))
        return y - self._correction * x

    rmatvec = matvec

    def trace(self):
        """Closed form: p_hat times the sum of squared observed values."""
        return self.p_hat * self._sumsq

    def to_dense(self):
        X = self._M.to_dense()
        G = X.T @ X if self._side == "col" else X @ X.T
        return G - np.diag(self._correction)


def sigma_operators(M: ObservedMatrix, p_hat):
    """Column (d x d) and row (n x n) debiased Gram operators."""
    if not 0.0 < p_hat <= 1.0:
        raise ValueError(f"p_hat must be in (0, 1], got {p_hat}")
    return GramOperator(M, p_hat, "col"), GramOperator(M, p_hat, "row")


def debiased_spectrum(sigma_eigs, trace, d, r, p_hat):
    """Debias the top-r Gram eigenvalues.

    alpha_tilde is the trailing-eigenvalue mean obtained from the trace
    identity; the debiased singular values are
    (1/p_hat) sqrt(max(0, eig_i - alpha_tilde)).  Negative radicands are
    clamped to zero and reported as uninformative components.
    """
    eigs = np.asarray(sigma_eigs, dtype=np.float64)
    if r >= d:
        raise ValueError(f"need r < d, got r={r}, d={d}")
    alpha_tilde = max(0.0, (float(trace) - float(eigs.sum())) / (d - r))
    radicand = eigs - alpha_tilde
    clamped = tuple(int(i) for i in np.nonzero(radicand < 0)[0])
    lambda_hat = np.sqrt(np.maximum(radicand, 0.0)) / p_hat
    tau_hat = eigs - lambda_hat
    return alpha_tilde, tau_hat, lambda_hat, clamped


def _omega_design(M: ObservedMatrix, U_hat, V_hat, lambda_hat):
    """Columns c_i = observed entries of lambda_i * u_i v_i^T."""
    cols = [lambda_hat[i] * U_hat[M.row, i] * V_hat[M.col, i]
            for i in range(len(lambda_hat))]
    return np.column_stack(cols) if cols else np.zeros((M.n_obs, 0))


def _sign(x):
    return -1.0 if x < 0 else 1.0


def resolve_signs(M: ObservedMatrix, U_hat, V_hat, lambda_hat,
                  method="exhaustive", seed=0) -> np.ndarray:
    """Pick the sign of each rank-one component.

    exhaustive: global minimizer of the observed-entry fit over {-1, 1}^r.
    svd-sign: align each component with the corresponding singular vectors
    of the observed matrix itself.
    regression: signs of the zero-intercept least-squares coefficients of
    the observed values on the component entries.
    """
    r = len(lambda_hat)
    if method not in SIGN_METHODS:
        raise ValueError(f"unknown sign method {method!r}")
    if r == 0:
        return np.zeros(0)

    if method == "exhaustive":
        if r > EXHAUSTIVE_MAX_RANK:
            raise ValueError(f"exhaustive sign search limited to rank "
                             f"{EXHAUSTIVE_MAX_RANK}, got {r}")
        C = _omega_design(M, U_hat, V_hat, lambda_hat)
        G = C.T @ C
        b = C.T @ M.val
        best, best_val = None, np.inf
        for signs in itertools.product((1.0, -1.0), repeat=r):
            s = np.array(signs)
            val = s @ G @ s - 2.0 * (s @ b)
            if val < best_val:
                best, best_val = s, val
        return best

    if method == "svd-sign":
        f = truncated_svd(M, r, seed=seed)
        return np.array([_sign(V_hat[:, i] @ f.V[:, i])
                         * _sign(U_hat[:, i] @ f.U[:, i]) for i in range(r)])

    C = _omega_design(M, U_hat, V_hat, lambda_hat)
    coef, *_ = np.linalg.lstsq(C, M.val, rcond=None)
    return np.array([_sign(c) for c in coef])


def initialize(M: ObservedMatrix, r, sign_method="auto", seed=0) -> InitializerResult:
    """One-step estimate: debiased Gram spectra plus a sign fix.

    ``sign_method='auto'`` uses the exhaustive search up to rank 12 and the
    svd-sign rule beyond that.
    """
    if not 1 <= r < M.n_cols:
        raise ValueError(f"need 1 <= r < d, got r={r}, d={M.n_cols}")
    p_hat = estimate_p(M)
    col_op, row_op = sigma_operators(M, p_hat)
    col_f = truncated_svd(col_op, r, seed=seed)
    row_f = truncated_svd(row_op, r, seed=seed)
    V_hat = col_f.V
    U_hat = row_f.U
    alpha_tilde, tau_hat, lambda_hat, clamped = debiased_spectrum(
        col_f.singular_values, col_op.trace(), M.n_cols, r, p_hat)

    if sign_method == "auto":
        sign_method = "exhaustive" if r <= EXHAUSTIVE_MAX_RANK else "svd-sign"
    signs = resolve_signs(M, U_hat, V_hat, lambda_hat, sign_method, seed=seed)

    order = np.argsort(-lambda_hat, kind="stable")
    estimate = LowRankFactor((U_hat * signs)[:, order], lambda_hat[order],
                             V_hat[:, order])
    return InitializerResult(estimate=estimate, p_hat=p_hat,
                             alpha_tilde=alpha_tilde, tau_hat=tau_hat,
                             sign_vector=signs, sign_method_used=sign_method,
                             clamped_components=clamped)
