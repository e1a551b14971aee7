"""Mask generators: MCAR, MAR (logistic on observed columns), MNAR
self-masking, and MNAR upper-quantile censorship, all calibrated to a
target missing proportion."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from cpmda.core import ConfigurationError, DimensionError, Mask, masks_from_array

_WEIGHT_STREAM_TAG = zlib.crc32(b"mechanism-weights")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class MechanismSpec:
    """Missingness mechanism description.

    kind: one of "mcar", "mar_logistic", "mnar_self_masked", "mnar_quantile".
    missing_cols: 0-based columns the mechanism may mask.
    observed_cols: columns driving a MAR mechanism; defaults to the
        complement of missing_cols. Never masked.
    weights: optional logistic weights (length |observed_cols| for MAR,
        |missing_cols| for self-masking). When absent they are drawn i.i.d.
        standard normal and scaled to unit norm, seeded by seed_offset only,
        so a "setting index" pins down one reproducible weight vector.
    """

    kind: str
    missing_cols: tuple[int, ...]
    observed_cols: tuple[int, ...] | None = None
    p: float | None = None
    q: float | None = None
    target_prop: float | None = None
    weights: tuple[float, ...] | None = None
    seed_offset: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("mcar", "mar_logistic", "mnar_self_masked", "mnar_quantile"):
            raise ConfigurationError(f"unknown mechanism kind {self.kind!r}")
        mcols = tuple(sorted(int(c) for c in self.missing_cols))
        if len(set(mcols)) != len(mcols) or not mcols:
            raise ConfigurationError("missing_cols must be a nonempty set of columns")
        object.__setattr__(self, "missing_cols", mcols)
        if self.observed_cols is not None:
            ocols = tuple(sorted(int(c) for c in self.observed_cols))
            if set(ocols) & set(mcols):
                raise ConfigurationError("missing_cols and observed_cols overlap")
            object.__setattr__(self, "observed_cols", ocols)
        if self.kind == "mcar":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ConfigurationError(f"mcar needs p in [0, 1], got {self.p}")
        else:
            if self.target_prop is None or not 0.0 < self.target_prop < 1.0:
                raise ConfigurationError(
                    f"{self.kind} needs target_prop in (0, 1), got {self.target_prop}"
                )
        if self.kind == "mnar_quantile":
            if self.q is None or not 0.0 < self.q < 1.0:
                raise ConfigurationError(f"mnar_quantile needs q in (0, 1), got {self.q}")
            if self.target_prop > 1.0 - self.q + 1e-12:
                raise ConfigurationError(
                    f"target proportion {self.target_prop} exceeds the upper-tail "
                    f"mass {1 - self.q:.6g}"
                )

    def resolve_observed(self, d: int) -> tuple[int, ...]:
        if self.observed_cols is not None:
            return self.observed_cols
        return tuple(j for j in range(d) if j not in self.missing_cols)


def mechanism_weights(spec: MechanismSpec, size: int) -> np.ndarray:
    """Logistic weight vector: taken from MechanismSpec.weights when set, else
    drawn once from a stream keyed by seed_offset and normalized to unit norm."""
    if spec.weights is not None:
        w = np.asarray(spec.weights, dtype=float)
        if w.shape != (size,):
            raise ConfigurationError(f"expected {size} weights, got {w.shape}")
        return w
    rng = np.random.default_rng(
        np.random.SeedSequence([_WEIGHT_STREAM_TAG, int(spec.seed_offset)])
    )
    w = rng.standard_normal(size)
    return w / np.linalg.norm(w)


def _calibrate_intercept(scores: np.ndarray, target: float) -> float:
    """Bisect b so that mean(sigmoid(scores + b)) hits the target proportion.

    The expectation is taken over the provided rows, not the population.
    """
    lo, hi = -60.0, 60.0

    def prop(b: float) -> float:
        return float(np.mean(_sigmoid(scores + b)))

    if not prop(lo) <= target <= prop(hi):
        raise ConfigurationError(
            f"target proportion {target} unreachable by intercept calibration"
        )
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        got = prop(mid)
        if abs(got - target) < 1e-6:
            return mid
        if got < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gen_mcar(n: int, d: int, p: float, rng: np.random.Generator) -> list[Mask]:
    """Each entry missing independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"p must be in [0, 1], got {p}")
    bits = rng.random((n, d)) < p
    return masks_from_array(bits)


def _check_matrix(X: np.ndarray, spec: MechanismSpec) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("expected an (n, d) feature matrix")
    top = max(spec.missing_cols)
    if spec.observed_cols:
        top = max(top, max(spec.observed_cols))
    if top >= X.shape[1]:
        raise ConfigurationError("mechanism columns exceed the matrix width")
    return X


def gen_mar_logistic(
    X: np.ndarray, spec: MechanismSpec, rng: np.random.Generator
) -> list[Mask]:
    """Masks driven by a logistic model of the always-observed columns.

    One shared intercept is calibrated so the expected missing proportion
    over missing_cols equals target_prop; every column in missing_cols uses
    the same per-row probability, so the mask never depends on the values
    it hides.
    """
    X = _check_matrix(X, spec)
    n, d = X.shape
    ocols = spec.resolve_observed(d)
    w = mechanism_weights(spec, len(ocols))
    scores = X[:, ocols] @ w
    b = _calibrate_intercept(scores, spec.target_prop)
    probs = _sigmoid(scores + b)
    bits = np.zeros((n, d), dtype=bool)
    for j in spec.missing_cols:
        bits[:, j] = rng.random(n) < probs
    return masks_from_array(bits)


def gen_mnar_self_masked(
    X: np.ndarray, spec: MechanismSpec, rng: np.random.Generator
) -> list[Mask]:
    """Each column masks itself: P(X_j hidden) = sigmoid(w_j * X_j + b_j),
    with b_j calibrated per column to the target proportion."""
    X = _check_matrix(X, spec)
    n, d = X.shape
    w = mechanism_weights(spec, len(spec.missing_cols))
    bits = np.zeros((n, d), dtype=bool)
    for w_j, j in zip(w, spec.missing_cols):
        scores = w_j * X[:, j]
        b_j = _calibrate_intercept(scores, spec.target_prop)
        bits[:, j] = rng.random(n) < _sigmoid(scores + b_j)
    return masks_from_array(bits)


def gen_mnar_quantile(
    X: np.ndarray, spec: MechanismSpec, rng: np.random.Generator
) -> list[Mask]:
    """Censor the upper q-tail of each column uniformly at random.

    Entries above the empirical q-quantile of their column are masked with
    probability target_prop / (1 - q); entries at or below the cut are never
    masked. Proportions above 1 - q are unreachable.
    """
    X = _check_matrix(X, spec)
    n, d = X.shape
    q, target = spec.q, spec.target_prop
    if target > 1.0 - q + 1e-12:
        raise ConfigurationError(
            f"target proportion {target} exceeds the upper-tail mass {1 - q:.6g}"
        )
    p_star = min(target / (1.0 - q), 1.0)
    bits = np.zeros((n, d), dtype=bool)
    for j in spec.missing_cols:
        cut = np.quantile(X[:, j], q)
        bits[:, j] = (X[:, j] > cut) & (rng.random(n) < p_star)
    return masks_from_array(bits)


def apply_mechanism(
    X: np.ndarray, spec: MechanismSpec, rng: np.random.Generator
) -> list[Mask]:
    """Dispatch on spec.kind; MCAR draws bits only over missing_cols."""
    if spec.kind == "mcar":
        X = _check_matrix(X, spec)
        n, d = X.shape
        bits = np.zeros((n, d), dtype=bool)
        for j in spec.missing_cols:
            bits[:, j] = rng.random(n) < spec.p
        return masks_from_array(bits)
    if spec.kind == "mar_logistic":
        return gen_mar_logistic(X, spec, rng)
    if spec.kind == "mnar_self_masked":
        return gen_mnar_self_masked(X, spec, rng)
    return gen_mnar_quantile(X, spec, rng)
