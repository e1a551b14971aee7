"""Imputation: functions that complete a partially observed vector while
copying observed coordinates verbatim, plus mask concatenation.

The iterative-ridge imputer is a deterministic chained-equations variant:
column means to start, then fixed sweeps of per-column ridge fits in index
order. Transform replays the same sweeps with the stored coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cpmda.core import (
    ConfigurationError,
    DimensionError,
    IncompleteDataset,
    Mask,
    mask_keys,
)
from cpmda.oracle import conditional_mean_map, gaussian_conditional

KINDS = ("constant", "column_mean", "gaussian_conditional", "iterative_ridge")

_JITTER = 1e-8


def _observed_column_means(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    counts = (~missing).sum(axis=0)
    sums = np.where(missing, 0.0, values).sum(axis=0)
    means = np.zeros(values.shape[1])
    seen = counts > 0
    means[seen] = sums[seen] / counts[seen]
    return means


def _pairwise_covariance(values: np.ndarray, missing: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Sample covariance from pairwise-complete observations.

    Entry (j, k) averages over rows where both columns are observed; empty
    pairs give 0 off-diagonal and 1 on the diagonal.
    """
    n, d = values.shape
    ok = ~missing
    centered = np.where(ok, values - means, 0.0)
    counts = ok.astype(float).T @ ok.astype(float)
    raw = centered.T @ centered
    cov = np.divide(raw, counts, out=np.zeros((d, d)), where=counts > 0)
    empty_diag = np.diag(counts) == 0
    cov[np.diag_indices(d)] = np.where(empty_diag, 1.0, np.diag(cov))
    return cov


@dataclass(frozen=True)
class ImputationModel:
    kind: str
    means: np.ndarray
    constants: np.ndarray | None = None
    mu: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    ridge_coefs: np.ndarray | None = None  # (d, d-1) per-column coefficients
    ridge_intercepts: np.ndarray | None = None
    lam: float | None = None
    iters: int | None = None
    last_sweep_delta: float | None = None

    @property
    def d(self) -> int:
        return self.means.shape[0]


def fit_imputer(
    train: IncompleteDataset,
    kind: str,
    lam: float | None = None,
    iters: int = 10,
    constants: np.ndarray | None = None,
) -> ImputationModel:
    """Fit an imputer on training rows only.

    kind is one of "constant", "column_mean", "gaussian_conditional",
    "iterative_ridge". lam defaults to 1e-3 * trace(Sigma_hat) / d for the
    iterative-ridge imputer; iters is its sweep count (0 keeps the
    column-mean initialization).
    """
    if kind not in KINDS:
        raise ConfigurationError(f"unknown imputer kind {kind!r}")
    if train.n == 0:
        raise ConfigurationError("cannot fit an imputer on an empty dataset")
    values, missing = train.values, train.missing
    d = train.d
    means = _observed_column_means(values, missing)

    if kind == "constant":
        c = np.zeros(d) if constants is None else np.asarray(constants, dtype=float)
        if c.shape != (d,):
            raise DimensionError(f"need {d} constants, got shape {c.shape}")
        return ImputationModel(kind=kind, means=means, constants=c)

    if kind == "column_mean":
        return ImputationModel(kind=kind, means=means)

    if kind == "gaussian_conditional":
        cov = _pairwise_covariance(values, missing, means)
        cov = 0.5 * (cov + cov.T) + _JITTER * np.eye(d)
        return ImputationModel(kind=kind, means=means, mu=means, Sigma=cov)

    # iterative ridge
    if iters < 0:
        raise ConfigurationError("iters must be nonnegative")
    filled = np.where(missing, means, values)
    if lam is None:
        cov_filled = np.cov(filled, rowvar=False) if train.n > 1 else np.eye(d)
        cov_filled = np.atleast_2d(cov_filled)
        lam = 1e-3 * float(np.trace(cov_filled)) / d
    lam = max(float(lam), 0.0)
    coefs = np.zeros((d, d - 1)) if d > 1 else np.zeros((d, 0))
    intercepts = means.copy()
    delta = 0.0
    for sweep in range(iters):
        prev = coefs.copy()
        for j in range(d):
            rows = ~missing[:, j]
            if rows.sum() < 2 or d == 1:
                intercepts[j] = means[j]
                continue
            others = np.delete(np.arange(d), j)
            A = filled[np.ix_(rows, others)]
            b = values[rows, j]
            w, w0 = _ridge_solve(A, b, lam)
            coefs[j] = w
            intercepts[j] = w0
            miss_rows = missing[:, j]
            if miss_rows.any():
                filled[miss_rows, j] = filled[np.ix_(miss_rows, others)] @ w + w0
        delta = float(np.max(np.abs(coefs - prev))) if iters else 0.0
    return ImputationModel(
        kind=kind,
        means=means,
        ridge_coefs=coefs,
        ridge_intercepts=intercepts,
        lam=lam,
        iters=iters,
        last_sweep_delta=delta,
    )


def _ridge_solve(A: np.ndarray, b: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Ridge with unpenalized intercept via centered normal equations."""
    a_mean = A.mean(axis=0)
    b_mean = b.mean()
    Ac = A - a_mean
    G = Ac.T @ Ac + lam * np.eye(A.shape[1])
    w = np.linalg.solve(G + 1e-12 * np.eye(A.shape[1]), Ac.T @ (b - b_mean))
    return w, float(b_mean - a_mean @ w)


def impute(model: ImputationModel, x: np.ndarray, m: Mask) -> np.ndarray:
    """Complete one row: observed coordinates copied bit for bit, missing
    ones filled per the fitted model."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.d,) or m.d != model.d:
        raise DimensionError(f"expected a length-{model.d} row matching the mask")
    out = x.copy()
    if m.key == 0:
        return out
    mis = m.mis
    if model.kind == "constant":
        out[mis] = model.constants[mis]
    elif model.kind == "column_mean":
        out[mis] = model.means[mis]
    elif model.kind == "gaussian_conditional":
        mean, _ = gaussian_conditional(model.mu, model.Sigma, x[m.obs], m)
        out[mis] = mean
    else:
        out[mis] = _ridge_replay(model, out[None, :], m.bits_array[None, :])[0, mis]
    return out


def _ridge_replay(model: ImputationModel, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Replay the fitted sweeps on new rows. All-missing rows get the
    marginal means exactly (the conditional given nothing observed)."""
    d = model.d
    filled = np.where(missing, model.means, values)
    for _ in range(model.iters or 0):
        for j in range(d):
            rows = missing[:, j]
            if not rows.any() or d == 1:
                continue
            others = np.delete(np.arange(d), j)
            filled[rows, j] = (
                filled[np.ix_(rows, others)] @ model.ridge_coefs[j]
                + model.ridge_intercepts[j]
            )
    all_missing = missing.all(axis=1)
    if all_missing.any():
        filled[all_missing] = model.means
    return filled


def impute_matrix(
    model: ImputationModel, values: np.ndarray, missing: np.ndarray
) -> np.ndarray:
    """Vectorized impute over an (n, d) block; rows grouped by mask where
    the fill requires a per-pattern solve."""
    values = np.asarray(values, dtype=float)
    missing = np.asarray(missing, dtype=bool)
    if values.shape != missing.shape or values.shape[1] != model.d:
        raise DimensionError("values/missing must be (n, d) with the fitted d")
    out = values.copy()
    if not missing.any():
        return out
    if model.kind == "constant":
        out[missing] = np.broadcast_to(model.constants, values.shape)[missing]
    elif model.kind == "column_mean":
        out[missing] = np.broadcast_to(model.means, values.shape)[missing]
    elif model.kind == "gaussian_conditional":
        keys = mask_keys(missing)
        for key in np.unique(keys):
            rows = np.flatnonzero(keys == key)
            m = Mask.from_bits(missing[rows[0]])
            if m.key == 0:
                continue
            const, A = conditional_mean_map(model.mu, model.Sigma, m)
            out[np.ix_(rows, m.mis)] = const + values[np.ix_(rows, m.obs)] @ A.T
    else:
        out = _ridge_replay(model, values, missing)
    out[~missing] = values[~missing]
    return out


def concat_mask(x_imputed: np.ndarray, m: Mask) -> np.ndarray:
    """Features followed by the mask bits as reals: (x, m) -> length 2d."""
    x_imputed = np.asarray(x_imputed, dtype=float)
    if x_imputed.shape != (m.d,):
        raise DimensionError(f"expected a length-{m.d} vector")
    return np.concatenate([x_imputed, m.bits_array.astype(float)])


def concat_mask_matrix(X_imputed: np.ndarray, missing: np.ndarray) -> np.ndarray:
    X_imputed = np.asarray(X_imputed, dtype=float)
    missing = np.asarray(missing, dtype=bool)
    if X_imputed.shape != missing.shape:
        raise DimensionError("matrix and mask shapes differ")
    return np.hstack([X_imputed, missing.astype(float)])
