"""Split conformal prediction and its missing-data-augmentation variants.

The augmentation family over-masks calibration rows to the test pattern
before scoring. Three set constructions are provided: the exact-pattern
reduction (subsample to matching masks, then plain split CP), the nested
interval (conformal quantiles of per-record interval endpoints), and the
counting-rule set computed exactly by an endpoint sweep rather than a grid.

Scores with interval sublevel sets expose a (lower, upper) band per input;
the absolute-residual score is the degenerate band lower == upper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from cpmda.core import (
    ConfigurationError,
    IncompleteDataset,
    Mask,
    PredictiveSet,
    mask_subset,
    masks_to_array,
    over_mask,
)

_INF = float("inf")


def conformal_rank(n: int, alpha: float) -> int:
    """ceil((1 - alpha)(n + 1)) with a snap to the nearest integer.

    The snap matters: (1 - 0.1) * 10 is 9.000000000000002 in binary floating
    point, and a bare ceil would silently demand one extra calibration point.
    The same rank drives the split-CP quantile and the counting rule, which
    keeps the two routes exactly equivalent, ties included.
    """
    t = (1.0 - alpha) * (n + 1)
    r = round(t)
    if abs(t - r) < 1e-9:
        return int(r)
    return int(math.ceil(t))


def conformal_quantile(scores: np.ndarray, alpha: float) -> float:
    """The ceil((1-alpha)(n+1))-th smallest of scores plus a +inf sentinel."""
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    scores = np.asarray(scores, dtype=float).ravel()
    n = scores.size
    if n == 0:
        raise ConfigurationError("conformal_quantile needs a nonempty score set")
    r = conformal_rank(n, alpha)
    if r > n:
        return _INF
    return float(np.partition(scores, r - 1)[r - 1])


# ---------------------------------------------------------------------------
# scores


@dataclass(frozen=True)
class CqrScore:
    """Conformalized quantile regression score max(q_lo - y, y - q_hi).

    featurize maps raw rows (values, missing) to model inputs; the model
    returns one (q_lo, q_hi) band per row.
    """

    model: object
    featurize: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def bands(self, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
        return np.asarray(self.model.predict(self.featurize(values, missing)), dtype=float)

    def scores_from_bands(self, bands: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.maximum(bands[:, 0] - y, y - bands[:, 1])

    def scores(self, values: np.ndarray, missing: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.scores_from_bands(self.bands(values, missing), np.asarray(y, dtype=float))


@dataclass(frozen=True)
class AbsResidualScore:
    """|mu(z) - y|, a degenerate band with both edges at the point prediction."""

    model: object
    featurize: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def bands(self, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
        mu = np.asarray(self.model.predict(self.featurize(values, missing)), dtype=float)
        mu = mu.reshape(-1)
        return np.column_stack([mu, mu])

    def scores_from_bands(self, bands: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.abs(bands[:, 0] - y)

    def scores(self, values: np.ndarray, missing: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.scores_from_bands(self.bands(values, missing), np.asarray(y, dtype=float))


@dataclass(frozen=True)
class ClassificationScore:
    """1 - p_hat(z)_y over a finite label set."""

    model: object  # predict_proba(Z) -> (n, len(labels))
    featurize: Callable[[np.ndarray, np.ndarray], np.ndarray]
    labels: tuple

    def probs(self, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
        return np.asarray(
            self.model.predict_proba(self.featurize(values, missing)), dtype=float
        )

    def scores(self, values: np.ndarray, missing: np.ndarray, y) -> np.ndarray:
        probs = self.probs(values, missing)
        idx = np.array([self.labels.index(v) for v in np.atleast_1d(y)])
        return 1.0 - probs[np.arange(len(idx)), idx]


INTERVAL_SCORES = (CqrScore, AbsResidualScore)


# ---------------------------------------------------------------------------
# subsampling strategies


@dataclass(frozen=True)
class Exact:
    """Keep records whose mask is contained in the test mask."""


@dataclass(frozen=True)
class Full:
    """Keep everything."""


@dataclass(frozen=True)
class SupersetOf:
    mask: Mask


@dataclass(frozen=True)
class BoundedExtra:
    """Keep records with at most k missing coordinates beyond the test mask."""

    k: int


@dataclass(frozen=True)
class Mixture:
    """Random subset with mask-only inclusion weights.

    weight_fn(cal_mask, m_test) must land in [0, 1]; the default halves the
    weight per extra missing coordinate, so exact matches are always kept.
    A seed pins the draw independently of the caller's stream when given.
    """

    weight_fn: Callable[[Mask, Mask], float] | None = None
    seed: int | None = None


def _default_mixture_weight(cal_mask: Mask, m_test: Mask) -> float:
    extra = bin(cal_mask.key & ~m_test.key).count("1")
    return 2.0 ** (-extra)


def subsample_cal(
    cal_masks: Sequence[Mask],
    m_test: Mask,
    strategy,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Indices of the effective calibration set; reads masks and nothing else."""
    n = len(cal_masks)
    if isinstance(strategy, Full):
        return np.arange(n)
    if isinstance(strategy, Exact):
        return np.array(
            [k for k in range(n) if mask_subset(cal_masks[k], m_test)], dtype=int
        )
    if isinstance(strategy, SupersetOf):
        if not mask_subset(m_test, strategy.mask):
            raise ConfigurationError("SupersetOf mask must contain the test mask")
        return np.array(
            [k for k in range(n) if mask_subset(cal_masks[k], strategy.mask)], dtype=int
        )
    if isinstance(strategy, BoundedExtra):
        if strategy.k < 0:
            raise ConfigurationError("BoundedExtra needs k >= 0")
        keep = [
            k
            for k in range(n)
            if bin(cal_masks[k].key & ~m_test.key).count("1") <= strategy.k
        ]
        return np.array(keep, dtype=int)
    if isinstance(strategy, Mixture):
        w_fn = strategy.weight_fn or _default_mixture_weight
        if strategy.seed is not None:
            rng = np.random.default_rng(strategy.seed)
        if rng is None:
            raise ConfigurationError("Mixture subsampling needs an rng or a seed")
        weights = np.array([w_fn(m, m_test) for m in cal_masks])
        if ((weights < 0) | (weights > 1)).any():
            raise ConfigurationError("mixture weights must lie in [0, 1]")
        return np.flatnonzero(rng.random(n) < weights)
    raise ConfigurationError(f"unknown subsampling strategy {strategy!r}")


# ---------------------------------------------------------------------------
# calibration records and split CP


@dataclass(frozen=True)
class CalibrationRecord:
    index: int
    mask: Mask
    aug_mask: Mask
    score: float


def build_augmented_records(
    score,
    cal: IncompleteDataset,
    m_test: Mask,
    strategy,
    rng: np.random.Generator | None = None,
) -> list[CalibrationRecord]:
    """Subsample, over-mask to the test pattern, and score each kept row."""
    idx = subsample_cal(cal.masks, m_test, strategy, rng)
    if idx.size == 0:
        return []
    aug = [over_mask(cal.masks[k], m_test) for k in idx]
    aug_bits = masks_to_array(aug)
    s = score.scores(cal.values[idx], aug_bits, cal.y[idx])
    return [
        CalibrationRecord(index=int(k), mask=cal.masks[k], aug_mask=a, score=float(v))
        for k, a, v in zip(idx, aug, s)
    ]


def split_cp_set(
    score,
    cal: IncompleteDataset,
    x_test: np.ndarray,
    m_test: Mask,
    alpha: float,
) -> PredictiveSet:
    """Plain split conformal prediction; calibration rows keep their own masks."""
    if cal.n == 0:
        return _degenerate_set(score, from_empty=True)
    cal_scores = score.scores(cal.values, cal.missing, cal.y)
    q = conformal_quantile(cal_scores, alpha)
    return _set_from_threshold(score, x_test, m_test, q)


def _degenerate_set(score, from_empty: bool) -> PredictiveSet:
    if isinstance(score, ClassificationScore):
        return PredictiveSet.label_set(score.labels)
    return PredictiveSet.full_line(from_empty_calibration=from_empty)


def _set_from_threshold(score, x_test, m_test, q: float) -> PredictiveSet:
    x_row = np.asarray(x_test, dtype=float)[None, :]
    m_row = m_test.bits_array[None, :]
    if isinstance(score, ClassificationScore):
        probs = score.probs(x_row, m_row)[0]
        kept = [lab for lab, p in zip(score.labels, probs) if 1.0 - p <= q]
        return PredictiveSet.label_set(kept)
    lo, hi = score.bands(x_row, m_row)[0]
    if math.isinf(q):
        return PredictiveSet.full_line()
    return PredictiveSet.interval(lo - q, hi + q)


# ---------------------------------------------------------------------------
# counting-rule set via endpoint sweep


def interval_union_from_exclusions(
    lows: np.ndarray, highs: np.ndarray, max_exclusions: int
) -> PredictiveSet:
    """Exact {y : #{k : y outside [lows_k, highs_k]} <= max_exclusions}.

    Records with lows_k > highs_k exclude every y and enter as a constant.
    The count N(y) only changes at interval endpoints, so evaluating it on
    each endpoint and each gap midpoint covers all cases; the result is a
    closed union because N drops (never rises) exactly at the endpoints.
    """
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    if lows.shape != highs.shape or lows.ndim != 1:
        raise ConfigurationError("lows/highs must be matching 1-d arrays")
    if max_exclusions < 0:
        return PredictiveSet.empty()
    bad = lows > highs
    base = int(bad.sum())
    lo_s = np.sort(lows[~bad])
    hi_s = np.sort(highs[~bad])
    n_good = lo_s.size
    if base > max_exclusions:
        return PredictiveSet.empty()
    if n_good == 0:
        return PredictiveSet.full_line()

    ends = np.unique(np.concatenate([lo_s, hi_s]))
    mids = 0.5 * (ends[:-1] + ends[1:])
    probes = np.concatenate([[ends[0] - 1.0], ends, mids, [ends[-1] + 1.0]])

    def counts(ys: np.ndarray) -> np.ndarray:
        above = n_good - np.searchsorted(lo_s, ys, side="right")
        below = np.searchsorted(hi_s, ys, side="left")
        return base + above + below

    ok = counts(probes) <= max_exclusions
    n_ends = ends.size
    ok_left, ok_ends = ok[0], ok[1 : 1 + n_ends]
    ok_mids, ok_right = ok[1 + n_ends : 1 + n_ends + n_ends - 1], ok[-1]

    pieces: list[tuple[float, float]] = []
    if ok_left:
        pieces.append((-_INF, ends[0]))
    for i in range(n_ends):
        if ok_ends[i]:
            pieces.append((ends[i], ends[i]))
        if i < n_ends - 1 and ok_mids[i]:
            pieces.append((ends[i], ends[i + 1]))
    if ok_right:
        pieces.append((ends[-1], _INF))
    return PredictiveSet.union(pieces)


def mda_nested_star_set(
    score,
    cal: IncompleteDataset,
    x_test: np.ndarray,
    m_test: Mask,
    alpha: float,
    strategy=Full(),
    rng: np.random.Generator | None = None,
) -> PredictiveSet:
    """Counting-rule set over the over-masked calibration records.

    y belongs to the set when fewer than (1 - alpha)(1 + #records) records
    score strictly below the test score at y. Interval scores are resolved
    exactly by the endpoint sweep; finite label sets are enumerated.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    records = build_augmented_records(score, cal, m_test, strategy, rng)
    if not records:
        return _degenerate_set(score, from_empty=True)
    n = len(records)
    max_excl = conformal_rank(n, alpha) - 1
    aug_bits = masks_to_array([r.aug_mask for r in records])
    s = np.array([r.score for r in records])
    x_tiled = np.tile(np.asarray(x_test, dtype=float), (n, 1))

    if isinstance(score, ClassificationScore):
        probs = score.probs(x_tiled, aug_bits)
        kept = []
        for j, lab in enumerate(score.labels):
            test_scores = 1.0 - probs[:, j]
            if int((s < test_scores).sum()) <= max_excl:
                kept.append(lab)
        return PredictiveSet.label_set(kept)

    bands = score.bands(x_tiled, aug_bits)
    lows = bands[:, 0] - s
    highs = bands[:, 1] + s
    return interval_union_from_exclusions(lows, highs, max_excl)


def mda_nested_interval(
    score,
    cal: IncompleteDataset,
    x_test: np.ndarray,
    m_test: Mask,
    alpha: float,
) -> PredictiveSet:
    """Conformal quantiles of the per-record interval endpoints (Full strategy).

    Upper end: the ceil((1-alpha)(n+1))-th smallest of the highs plus a +inf
    sentinel; lower end symmetric with a -inf sentinel.
    """
    if not isinstance(score, INTERVAL_SCORES):
        raise ConfigurationError("the nested interval needs an interval score")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    records = build_augmented_records(score, cal, m_test, Full())
    if not records:
        return PredictiveSet.full_line(from_empty_calibration=True)
    n = len(records)
    aug_bits = masks_to_array([r.aug_mask for r in records])
    s = np.array([r.score for r in records])
    x_tiled = np.tile(np.asarray(x_test, dtype=float), (n, 1))
    bands = score.bands(x_tiled, aug_bits)
    lows = bands[:, 0] - s
    highs = bands[:, 1] + s
    lo, hi = nested_interval_ends(lows, highs, alpha)
    return PredictiveSet.interval(lo, hi)


def nested_interval_ends(
    lows: np.ndarray, highs: np.ndarray, alpha: float
) -> tuple[float, float]:
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    n = lows.size
    r = conformal_rank(n, alpha)
    if r > n:
        return -_INF, _INF
    hi = float(np.partition(highs, r - 1)[r - 1])
    lo = float(np.partition(lows, n - r)[n - r])
    return lo, hi


def mda_exact_set(
    score,
    cal: IncompleteDataset,
    x_test: np.ndarray,
    m_test: Mask,
    alpha: float,
) -> PredictiveSet:
    """Subsample to masks contained in the test pattern, over-mask them to it,
    then run plain split CP on the reduced calibration set."""
    idx = subsample_cal(cal.masks, m_test, Exact())
    if idx.size == 0:
        return _degenerate_set(score, from_empty=True)
    sub = IncompleteDataset(
        cal.values[idx],
        np.tile(m_test.bits_array, (idx.size, 1)),
        cal.y[idx],
    )
    return split_cp_set(score, sub, x_test, m_test, alpha)


# ---------------------------------------------------------------------------
# theory helpers


def comparison_matrix_bound(S: np.ndarray, alpha: float) -> tuple[np.ndarray, bool]:
    """Winners of the pairwise score-comparison matrix and the 2-alpha bound.

    C[i, j] = 1 when S[i, j] > S[j, i]; row i wins when its C-row sums to at
    least (1 - alpha) * N. Deterministically at most 2 * alpha * N rows can
    win; the returned flag reports whether that held here.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise ConfigurationError("need a square score matrix")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    N = S.shape[0]
    C = (S > S.T).astype(int)
    need = conformal_rank(N - 1, alpha)  # snapped ceil((1 - alpha) * N)
    W = np.flatnonzero(C.sum(axis=1) >= need)
    return W, bool(W.size <= 2.0 * alpha * N + 1e-9)


def isotonize_by_overmasking(
    builders: Mapping[Mask, object], estimates: Mapping[Mask, float]
) -> tuple[dict[Mask, object], dict[Mask, float]]:
    """Remap each pattern's set builder so estimated lengths are isotone.

    Patterns are processed by decreasing missing count. Each pattern keeps
    its own builder unless some immediate super-pattern (one extra missing
    coordinate) already achieves a strictly smaller final length, in which
    case it inherits that pattern's final builder. The returned length map
    satisfies final[m] <= final[m2] whenever mask_subset(m, m2).

    The estimate map must be upward closed: every immediate super-pattern of
    a mapped pattern must be mapped too.
    """
    if set(builders) != set(estimates):
        raise ConfigurationError("builders and estimates must cover the same patterns")
    if not estimates:
        return {}, {}
    final: dict[Mask, float] = {}
    target: dict[Mask, Mask] = {}
    order = sorted(estimates, key=lambda m: m.n_missing, reverse=True)
    for m in order:
        best = estimates[m]
        best_target = m
        for j in range(m.d):
            if (m.key >> j) & 1:
                continue
            sup = Mask(d=m.d, key=m.key | (1 << j))
            if sup not in final:
                raise ConfigurationError(
                    f"estimate map is not upward closed: missing pattern {sup}"
                )
            if final[sup] < best:
                best = final[sup]
                best_target = target[sup]
        final[m] = best
        target[m] = best_target
    return {m: builders[target[m]] for m in estimates}, final
