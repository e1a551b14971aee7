"""Shared building blocks: mask algebra, dataset containers, predictive sets,
train/calibration splitting, and the dataset CSV format.

Masks mark missing coordinates with 1. All containers are immutable after
construction so they can be shared freely between worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

MAX_DIM = 64

NA_TOKEN = "NA"


class DimensionError(ValueError):
    """Raised when mask / vector / matrix dimensions disagree."""


class ConfigurationError(ValueError):
    """Raised for invalid configuration values (CLI exit code 2)."""


class NumericError(ArithmeticError):
    """Raised for numeric failures such as singular matrices (CLI exit code 3)."""


def _float_str(v: float) -> str:
    # repr is the shortest representation that round-trips a float64
    # (never more than 17 significant digits).
    return repr(float(v))


@dataclass(frozen=True)
class Mask:
    """Binary missingness pattern of length ``d`` packed into an int key.

    Bit ``j`` of ``key`` is set iff coordinate ``j`` is missing. Packing keeps
    the object hashable so patterns can be grouped in O(1) up to d = 64.
    """

    d: int
    key: int

    def __post_init__(self) -> None:
        if not 0 < self.d <= MAX_DIM:
            raise DimensionError(f"mask length must be in [1, {MAX_DIM}], got {self.d}")
        if not 0 <= self.key < (1 << self.d):
            raise ValueError(f"mask key {self.key} out of range for d={self.d}")

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "Mask":
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("mask bits must be 0 or 1")
        key = 0
        for j, b in enumerate(bits):
            if b:
                key |= 1 << j
        return cls(d=len(bits), key=key)

    @classmethod
    def zeros(cls, d: int) -> "Mask":
        return cls(d=d, key=0)

    @classmethod
    def ones(cls, d: int) -> "Mask":
        return cls(d=d, key=(1 << d) - 1)

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple((self.key >> j) & 1 for j in range(self.d))

    @cached_property
    def bits_array(self) -> np.ndarray:
        a = np.array(self.bits, dtype=bool)
        a.setflags(write=False)
        return a

    @property
    def n_missing(self) -> int:
        return bin(self.key).count("1")

    @cached_property
    def mis(self) -> np.ndarray:
        """Indices of missing coordinates, ascending."""
        a = np.flatnonzero(self.bits_array)
        a.setflags(write=False)
        return a

    @cached_property
    def obs(self) -> np.ndarray:
        """Indices of observed coordinates, ascending."""
        a = np.flatnonzero(~self.bits_array)
        a.setflags(write=False)
        return a

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def mask_subset(m: Mask, m2: Mask) -> bool:
    """True iff every coordinate missing in ``m`` is also missing in ``m2``."""
    if m.d != m2.d:
        raise DimensionError(f"mask lengths differ: {m.d} vs {m2.d}")
    return (m.key & ~m2.key) == 0


def over_mask(m: Mask, m_test: Mask) -> Mask:
    """Componentwise max of two masks (their least upper bound)."""
    if m.d != m_test.d:
        raise DimensionError(f"mask lengths differ: {m.d} vs {m_test.d}")
    return Mask(d=m.d, key=m.key | m_test.key)


def obs_values(x: np.ndarray, m: Mask) -> np.ndarray:
    """Values of ``x`` at the observed coordinates of ``m``, in index order."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.d,):
        raise DimensionError(f"expected a length-{m.d} vector, got shape {x.shape}")
    return x[m.obs]


def masks_to_array(masks: Sequence[Mask]) -> np.ndarray:
    """Stack masks into an (n, d) boolean array (True = missing)."""
    if len(masks) == 0:
        raise ValueError("empty mask sequence")
    d = masks[0].d
    out = np.empty((len(masks), d), dtype=bool)
    for i, m in enumerate(masks):
        if m.d != d:
            raise DimensionError("masks have inconsistent lengths")
        out[i] = m.bits_array
    return out


def masks_from_array(bits: np.ndarray) -> list[Mask]:
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise DimensionError("expected an (n, d) bit array")
    return [Mask.from_bits(row) for row in bits.astype(np.uint8)]


def mask_keys(bits: np.ndarray) -> np.ndarray:
    """Packed integer key per row of an (n, d) bit array (d <= 64)."""
    bits = np.asarray(bits, dtype=bool)
    n, d = bits.shape
    if d > MAX_DIM:
        raise DimensionError(f"d={d} exceeds the {MAX_DIM}-bit mask limit")
    weights = (1 << np.arange(d, dtype=np.uint64))
    return (bits.astype(np.uint64) * weights).sum(axis=1)


@dataclass(frozen=True)
class IncompleteDataset:
    """Feature matrix with per-entry validity flags plus the response vector.

    Missing entries are stored as a (value slot, flag) pair: the flag array
    marks them and the value slot is forced to 0.0, which is never a sentinel
    readers may consume. ``complete_values`` refuses to hand out a matrix
    that still has flagged entries, so arithmetic on missing values is a hard
    error rather than silent NaN propagation.
    """

    values: np.ndarray
    missing: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        missing = np.array(self.missing, dtype=bool)
        y = np.array(self.y)
        if values.ndim != 2 or missing.shape != values.shape:
            raise DimensionError("values and missing flags must share an (n, d) shape")
        if y.shape != (values.shape[0],):
            raise DimensionError("response length must match the row count")
        if values.shape[1] > MAX_DIM:
            raise DimensionError(f"d={values.shape[1]} exceeds the {MAX_DIM} limit")
        values[missing] = 0.0
        if not np.isfinite(values[~missing]).all():
            raise ValueError("observed entries must be finite")
        for a in (values, missing, y):
            a.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @cached_property
    def masks(self) -> tuple[Mask, ...]:
        return tuple(masks_from_array(self.missing))

    def complete_values(self) -> np.ndarray:
        if self.missing.any():
            raise ValueError(
                "dataset has missing entries; impute before reading raw values"
            )
        return self.values

    def subset(self, rows: np.ndarray) -> "IncompleteDataset":
        rows = np.asarray(rows)
        return IncompleteDataset(self.values[rows], self.missing[rows], self.y[rows])


_INF = float("inf")


@dataclass(frozen=True)
class PredictiveSet:
    """A predictive region: a finite union of closed intervals or a label set.

    Exactly one of ``intervals`` / ``labels`` is set. Interval unions are kept
    sorted and disjoint; endpoints may be infinite. ``from_empty_calibration``
    flags the degenerate full-line set produced when no calibration point
    survives subsampling.
    """

    intervals: tuple[tuple[float, float], ...] | None = None
    labels: frozenset | None = None
    from_empty_calibration: bool = False

    def __post_init__(self) -> None:
        if (self.intervals is None) == (self.labels is None):
            raise ValueError("exactly one of intervals / labels must be given")
        if self.intervals is not None:
            ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
            for lo, hi in ivs:
                if lo > hi or np.isnan(lo) or np.isnan(hi):
                    raise ValueError(f"bad interval [{lo}, {hi}]")
            for (_, hi), (lo2, _) in zip(ivs, ivs[1:]):
                if lo2 <= hi:
                    raise ValueError("intervals must be sorted and disjoint")
            object.__setattr__(self, "intervals", ivs)
        else:
            object.__setattr__(self, "labels", frozenset(self.labels))

    # ---- constructors -------------------------------------------------
    @classmethod
    def interval(cls, lo: float, hi: float) -> "PredictiveSet":
        if lo > hi:
            return cls(intervals=())
        return cls(intervals=((lo, hi),))

    @classmethod
    def union(cls, pairs: Iterable[tuple[float, float]]) -> "PredictiveSet":
        kept = sorted((float(a), float(b)) for a, b in pairs if a <= b)
        merged: list[tuple[float, float]] = []
        for lo, hi in kept:
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(intervals=tuple(merged))

    @classmethod
    def full_line(cls, *, from_empty_calibration: bool = False) -> "PredictiveSet":
        return cls(
            intervals=((-_INF, _INF),), from_empty_calibration=from_empty_calibration
        )

    @classmethod
    def empty(cls) -> "PredictiveSet":
        return cls(intervals=())

    @classmethod
    def label_set(cls, labels: Iterable) -> "PredictiveSet":
        return cls(labels=frozenset(labels))

    # ---- queries ------------------------------------------------------
    @property
    def is_interval_union(self) -> bool:
        return self.intervals is not None

    def contains(self, y) -> bool:
        if self.labels is not None:
            return y in self.labels
        return any(lo <= y <= hi for lo, hi in self.intervals)

    @property
    def length(self) -> float:
        """Lebesgue length of the union; +inf iff any endpoint is infinite."""
        if self.intervals is None:
            raise TypeError("length is defined for interval unions only")
        total = 0.0
        for lo, hi in self.intervals:
            if np.isinf(lo) or np.isinf(hi):
                return _INF
            total += hi - lo
        return total

    def hull(self) -> tuple[float, float]:
        """Convex hull (lo, hi) of the union; (nan, nan) when empty."""
        if self.intervals is None:
            raise TypeError("hull is defined for interval unions only")
        if not self.intervals:
            return (float("nan"), float("nan"))
        return (self.intervals[0][0], self.intervals[-1][1])

    @property
    def hull_length(self) -> float:
        lo, hi = self.hull()
        if np.isnan(lo):
            return 0.0
        return _INF if np.isinf(lo) or np.isinf(hi) else hi - lo

    def issubset(self, other: "PredictiveSet") -> bool:
        """Exact containment test between two interval unions."""
        if self.intervals is None or other.intervals is None:
            raise TypeError("issubset is defined for interval unions only")
        for lo, hi in self.intervals:
            if not any(lo2 <= lo and hi <= hi2 for lo2, hi2 in other.intervals):
                return False
        return True


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train / calibration row index sets."""

    train_ids: np.ndarray
    cal_ids: np.ndarray

    def __post_init__(self) -> None:
        tr = np.asarray(self.train_ids, dtype=np.intp)
        ca = np.asarray(self.cal_ids, dtype=np.intp)
        if np.intersect1d(tr, ca).size:
            raise ValueError("train and calibration indices overlap")
        tr.setflags(write=False)
        ca.setflags(write=False)
        object.__setattr__(self, "train_ids", tr)
        object.__setattr__(self, "cal_ids", ca)


def split_train_cal(n: int, rho: float, rng: np.random.Generator) -> SplitIndices:
    """Uniform random partition with |Cal| = round-half-up(rho * n)."""
    if not 0 < rho <= 1:
        raise ConfigurationError(f"calibration proportion must be in (0, 1], got {rho}")
    if n < 1:
        raise ConfigurationError("need at least one row to split")
    n_cal = int(np.floor(rho * n + 0.5))
    n_cal = min(max(n_cal, 0), n)
    perm = rng.permutation(n)
    return SplitIndices(train_ids=np.sort(perm[n_cal:]), cal_ids=np.sort(perm[:n_cal]))


# ---- dataset CSV format ------------------------------------------------


def write_dataset_csv(ds: IncompleteDataset, path) -> None:
    """Write a dataset as CSV: header x1..xd,y with ``NA`` for missing entries."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([f"x{j + 1}" for j in range(ds.d)] + ["y"]) + "\n")
        for i in range(ds.n):
            cells = [
                NA_TOKEN if ds.missing[i, j] else _float_str(ds.values[i, j])
                for j in range(ds.d)
            ]
            cells.append(_float_str(ds.y[i]))
            fh.write(",".join(cells) + "\n")


def read_dataset_csv(path) -> IncompleteDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) < 2 or header[-1] != "y":
            raise ValueError("expected a feature header ending in a y column")
        d = len(header) - 1
        values, missing, ys = [], [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != d + 1:
                raise ValueError(f"row has {len(cells)} cells, expected {d + 1}")
            row = np.zeros(d)
            flags = np.zeros(d, dtype=bool)
            for j, cell in enumerate(cells[:d]):
                if cell == NA_TOKEN:
                    flags[j] = True
                else:
                    row[j] = float(cell)
            values.append(row)
            missing.append(flags)
            ys.append(float(cells[d]))
    return IncompleteDataset(np.array(values), np.array(missing), np.array(ys))
