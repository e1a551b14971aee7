"""End-to-end experiment runner.

Per repetition: draw the pool, apply the missingness mechanism, split,
fit the imputer and the quantile net on the training rows (mask bits
concatenated to the imputed features), then evaluate every configured
method on the marginal and mask-conditional test groups.

Seeding: repetition r uses rep_seed = master_seed XOR r, and every purpose
gets its own stream via SeedSequence([rep_seed, crc32(tag)]), so adding
methods or reading more config never shifts earlier draws. The mapping is
recorded in a JSON manifest next to the results CSV.
"""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from cpmda.conformal import (
    BoundedExtra,
    CqrScore,
    Exact,
    Full,
    Mixture,
    SupersetOf,
    conformal_quantile,
    conformal_rank,
    interval_union_from_exclusions,
)
from cpmda.core import (
    IncompleteDataset,
    Mask,
    masks_to_array,
    mask_keys,
    split_train_cal,
)
from cpmda.impute import concat_mask_matrix, fit_imputer, impute_matrix
from cpmda.missingness import apply_mechanism
from cpmda.regress import fit_mlp_quantile

from cpmda.bench.config import ExperimentConfig, MethodSpec, strategy_for
from cpmda.bench.datagen import (
    build_conditional_testset,
    gen_glm_dataset,
    gen_ydepm_dataset,
)

STREAM_TAGS = ("data", "mask", "split", "init", "subsample")

RESULT_HEADER = "rep,method,key_kind,key,coverage,mean_length,median_length,inf_fraction"

_INF = float("inf")


def _crc(tag: str) -> int:
    return zlib.crc32(tag.encode())


def rep_stream(master_seed: int, rep: int, tag: str, *extra: int) -> np.random.Generator:
    rep_seed = master_seed ^ rep
    return np.random.default_rng(
        np.random.SeedSequence([rep_seed, _crc(tag), *extra])
    )


@dataclass(frozen=True)
class ResultRow:
    rep: int
    method: str
    key_kind: str
    key: str
    coverage: float
    mean_length: float
    median_length: float
    inf_fraction: float

    def sort_key(self):
        return (self.rep, self.method, self.key_kind, self.key)


def make_featurize(imputer):
    """Alg-2 featurization: impute, then concatenate the mask bits."""

    def featurize(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
        return concat_mask_matrix(impute_matrix(imputer, values, missing), missing)

    return featurize


def build_pool(config: ExperimentConfig, rng_data, rng_mask) -> IncompleteDataset:
    if config.scenario == "y-dep-m":
        return gen_ydepm_dataset(config, rng_data)
    X, y = gen_glm_dataset(config, rng_data)
    bits = masks_to_array(apply_mechanism(X, config.mechanism, rng_mask))
    return IncompleteDataset(values=X, missing=bits, y=y)


def fit_pipeline(config: ExperimentConfig, train: IncompleteDataset, rep_seed: int):
    """Imputer and quantile net fitted on training rows only."""
    imp = config.imputer
    imputer = fit_imputer(
        train, imp.kind, lam=imp.lam, iters=imp.iters, constants=imp.constants
    )
    featurize = make_featurize(imputer)
    reg = config.regressor
    model = fit_mlp_quantile(
        featurize(train.values, train.missing),
        train.y,
        config.levels,
        hidden=reg.hidden,
        epochs=reg.epochs,
        step=reg.step,
        seed=np.random.SeedSequence([rep_seed, _crc("init"), reg.seed]),
    )
    return imputer, featurize, model


class _GroupEval:
    """Per-row outcomes for one method on one test group."""

    __slots__ = ("covered", "lengths")

    def __init__(self, covered: np.ndarray, lengths: np.ndarray):
        self.covered = covered
        self.lengths = lengths

    def row(self, rep: int, method: str, kind: str, key: str) -> ResultRow:
        lengths = self.lengths
        return ResultRow(
            rep=rep,
            method=method,
            key_kind=kind,
            key=key,
            coverage=float(np.mean(self.covered)),
            mean_length=float(np.mean(lengths)),
            median_length=float(np.median(lengths)),
            inf_fraction=float(np.mean(np.isinf(lengths))),
        )


def _selection(strategy, cal_keys: np.ndarray, test_key: int) -> np.ndarray:
    """Vectorized subsample over packed mask keys; mask-only by construction."""
    not_test = ~np.uint64(test_key)
    if isinstance(strategy, Full):
        return np.arange(cal_keys.size)
    if isinstance(strategy, Exact):
        return np.flatnonzero((cal_keys & not_test) == 0)
    if isinstance(strategy, SupersetOf):
        return np.flatnonzero((cal_keys & ~np.uint64(strategy.mask.key)) == 0)
    if isinstance(strategy, BoundedExtra):
        return np.flatnonzero(np.bitwise_count(cal_keys & not_test) <= strategy.k)
    raise TypeError(f"unsupported strategy {strategy!r}")


def _bits_from_keys(keys: np.ndarray, d: int) -> np.ndarray:
    shifts = np.arange(d, dtype=np.uint64)
    return ((keys[:, None] >> shifts) & np.uint64(1)).astype(bool)


class _MethodEvaluator:
    """Evaluates one method across test groups, caching per-test-mask work."""

    def __init__(self, config: ExperimentConfig, spec: MethodSpec, cal, score, rng):
        self.config = config
        self.spec = spec
        self.cal = cal
        self.score = score
        self.rng = rng
        self.cal_keys = np.array([m.key for m in cal.masks], dtype=np.uint64)
        self.alpha = config.alpha
        self._mask_cache: dict[int, tuple] = {}
        if spec.kind == "cqr":
            s = score.scores(cal.values, cal.missing, cal.y)
            self.cqr_q = conformal_quantile(s, self.alpha)

    # -- per-test-mask calibration pieces ---------------------------------
    def _exact_side(self, m: Mask):
        sel = _selection(Exact(), self.cal_keys, m.key)
        if sel.size == 0:
            return None
        bits = np.tile(m.bits_array, (sel.size, 1))
        s = self.score.scores(self.cal.values[sel], bits, self.cal.y[sel])
        return conformal_quantile(s, self.alpha)

    def _augmented_side(self, m: Mask, strategy):
        if isinstance(strategy, Mixture):
            masks = self.cal.masks
            from cpmda.conformal import subsample_cal

            sel = subsample_cal(masks, m, strategy, self.rng)
        else:
            sel = _selection(strategy, self.cal_keys, m.key)
        if sel.size == 0:
            return None
        aug_keys = self.cal_keys[sel] | np.uint64(m.key)
        aug_bits = _bits_from_keys(aug_keys, self.config.d)
        s = self.score.scores(self.cal.values[sel], aug_bits, self.cal.y[sel])
        uniq, inv = np.unique(aug_keys, return_inverse=True)
        uniq_bits = _bits_from_keys(uniq, self.config.d)
        return s, uniq_bits, inv

    def _cal_side(self, m: Mask):
        got = self._mask_cache.get(m.key)
        if got is None:
            if self.spec.kind == "exact":
                got = ("exact", self._exact_side(m))
            elif self.spec.kind == "nested":
                got = ("aug", self._augmented_side(m, Full()))
            elif self.spec.kind == "star":
                strategy = strategy_for(self.spec, self.config.d)
                got = ("aug", self._augmented_side(m, strategy))
            else:
                got = ("none", None)
            self._mask_cache[m.key] = got
        return got

    # -- group evaluation ---------------------------------------------------
    def evaluate(self, V: np.ndarray, Mb: np.ndarray, y: np.ndarray) -> _GroupEval:
        n = V.shape[0]
        if self.spec.kind in ("qr", "cqr"):
            bands = self.score.bands(V, Mb)
            pad = 0.0 if self.spec.kind == "qr" else self.cqr_q
            lo, hi = bands[:, 0] - pad, bands[:, 1] + pad
            return _GroupEval((lo <= y) & (y <= hi), np.maximum(hi - lo, 0.0))

        covered = np.zeros(n, dtype=bool)
        lengths = np.zeros(n)
        keys = mask_keys(Mb)
        for key in np.unique(keys):
            rows = np.flatnonzero(keys == key)
            m = Mask.from_bits(Mb[rows[0]].astype(int))
            kind, side = self._cal_side(m)
            if side is None:
                covered[rows] = True
                lengths[rows] = _INF
                continue
            if kind == "exact":
                q = side
                bands = self.score.bands(V[rows], Mb[rows])
                lo, hi = bands[:, 0] - q, bands[:, 1] + q
                covered[rows] = (lo <= y[rows]) & (y[rows] <= hi)
                lengths[rows] = np.maximum(hi - lo, 0.0)
                if math.isinf(q):
                    lengths[rows] = _INF
                continue
            s, uniq_bits, inv = side
            n_rec = s.size
            n_a = uniq_bits.shape[0]
            V_rep = np.repeat(V[rows], n_a, axis=0)
            bits_rep = np.tile(uniq_bits, (rows.size, 1))
            bands = self.score.bands(V_rep, bits_rep).reshape(rows.size, n_a, 2)
            lo_rec = bands[:, inv, 0] - s[None, :]
            hi_rec = bands[:, inv, 1] + s[None, :]
            if self.spec.kind == "nested":
                r = conformal_rank(n_rec, self.alpha)
                if r > n_rec:
                    covered[rows] = True
                    lengths[rows] = _INF
                    continue
                hi_row = np.partition(hi_rec, r - 1, axis=1)[:, r - 1]
                lo_row = np.partition(lo_rec, n_rec - r, axis=1)[:, n_rec - r]
                covered[rows] = (lo_row <= y[rows]) & (y[rows] <= hi_row)
                lengths[rows] = np.maximum(hi_row - lo_row, 0.0)
            else:  # star counting rule
                max_excl = conformal_rank(n_rec, self.alpha) - 1
                for i, g in enumerate(rows):
                    ps = interval_union_from_exclusions(
                        lo_rec[i], hi_rec[i], max_excl
                    )
                    covered[g] = ps.contains(y[g])
                    lengths[g] = ps.length
        return _GroupEval(covered, lengths)


def _run_rep(config: ExperimentConfig, rep: int) -> list[ResultRow]:
    rep_seed = config.seed ^ rep
    rng_data = rep_stream(config.seed, rep, "data")
    rng_mask = rep_stream(config.seed, rep, "mask")
    rng_split = rep_stream(config.seed, rep, "split")

    pool = build_pool(config, rng_data, rng_mask)
    split = split_train_cal(pool.n, config.cal_fraction, rng_split)
    groups = build_conditional_testset(config, rng_data)

    train = pool.subset(split.train_ids)
    cal = pool.subset(split.cal_ids)
    imputer, featurize, model = fit_pipeline(config, train, rep_seed)
    score = CqrScore(model=model, featurize=featurize)

    rows: list[ResultRow] = []
    for spec in config.method_specs():
        if spec.kind == "qr":
            imp = config.imputer
            qr_imputer = fit_imputer(
                pool, imp.kind, lam=imp.lam, iters=imp.iters, constants=imp.constants
            )
            qr_featurize = make_featurize(qr_imputer)
            reg = config.regressor
            qr_model = fit_mlp_quantile(
                qr_featurize(pool.values, pool.missing),
                pool.y,
                config.levels,
                hidden=reg.hidden,
                epochs=reg.epochs,
                step=reg.step,
                seed=np.random.SeedSequence(
                    [rep_seed, _crc("init"), reg.seed, _crc("qr")]
                ),
            )
            method_score = CqrScore(model=qr_model, featurize=qr_featurize)
        else:
            method_score = score
        rng_sub = rep_stream(config.seed, rep, "subsample", _crc(spec.name))
        ev = _MethodEvaluator(config, spec, cal, method_score, rng_sub)
        for (kind, key), (V, Mb, y) in groups.items():
            rows.append(ev.evaluate(V, Mb, y).row(rep, spec.name, kind, key))
    return rows


def _rep_worker(payload) -> list[ResultRow]:
    config, rep = payload
    try:
        return _run_rep(config, rep)
    except Exception as err:  # record the failure, keep other reps alive
        nan = float("nan")
        return [
            ResultRow(
                rep=rep,
                method="error",
                key_kind="failure",
                key=type(err).__name__,
                coverage=nan,
                mean_length=nan,
                median_length=nan,
                inf_fraction=nan,
            )
        ]


def run_experiment(
    config: ExperimentConfig,
    reps: int | None = None,
    workers: int = 1,
) -> list[ResultRow]:
    """All repetitions, each fully deterministic given the master seed.

    Rows come back sorted by (rep, method, key_kind, key) so runs with the
    same config are byte-identical once written, whatever the worker count.
    """
    reps = config.reps if reps is None else reps
    payloads = [(config, r) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_rep_worker, payloads))
    else:
        chunks = [_rep_worker(p) for p in payloads]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=ResultRow.sort_key)
    return rows


# ---------------------------------------------------------------------------
# persistence


def _fmt(v: float) -> str:
    return repr(float(v))


def write_results_csv(rows: list[ResultRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RESULT_HEADER + "\n")
        for r in sorted(rows, key=ResultRow.sort_key):
            fh.write(
                f"{r.rep},{r.method},{r.key_kind},{r.key},"
                f"{_fmt(r.coverage)},{_fmt(r.mean_length)},"
                f"{_fmt(r.median_length)},{_fmt(r.inf_fraction)}\n"
            )


def read_results_csv(path) -> list[ResultRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != RESULT_HEADER:
            raise ValueError(f"unexpected results header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rep, method, kind, key, cov, mean_l, med_l, inf_f = line.split(",")
            rows.append(
                ResultRow(
                    rep=int(rep),
                    method=method,
                    key_kind=kind,
                    key=key,
                    coverage=float(cov),
                    mean_length=float(mean_l),
                    median_length=float(med_l),
                    inf_fraction=float(inf_f),
                )
            )
    return rows


def write_manifest(config: ExperimentConfig, reps: int, path) -> None:
    """Seed ledger: every stream is (master seed, repetition, tag)."""
    entries = [
        {"rep": r, "tag": tag, "seed_sequence": [config.seed ^ r, _crc(tag)]}
        for r in range(reps)
        for tag in STREAM_TAGS
    ]
    doc = {
        "master_seed": config.seed,
        "reps": reps,
        "stream_tag_crc32": {tag: _crc(tag) for tag in STREAM_TAGS},
        "streams": entries,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class SummaryRow:
    method: str
    key_kind: str
    key: str
    mean_coverage: float
    q10_coverage: float
    q90_coverage: float
    median_length: float
    inf_fraction: float


def summarize(rows: list[ResultRow]) -> list[SummaryRow]:
    """Aggregate over repetitions per (method, key)."""
    if not rows:
        raise ValueError("nothing to summarize")
    by_key: dict[tuple[str, str, str], list[ResultRow]] = {}
    for r in rows:
        if r.key_kind == "failure":
            continue
        by_key.setdefault((r.method, r.key_kind, r.key), []).append(r)
    out = []
    for (method, kind, key), group in sorted(by_key.items()):
        cov = np.array([g.coverage for g in group])
        med = np.array([g.median_length for g in group])
        inf = np.array([g.inf_fraction for g in group])
        out.append(
            SummaryRow(
                method=method,
                key_kind=kind,
                key=key,
                mean_coverage=float(cov.mean()),
                q10_coverage=float(np.quantile(cov, 0.1)),
                q90_coverage=float(np.quantile(cov, 0.9)),
                median_length=float(np.median(med)),
                inf_fraction=float(inf.mean()),
            )
        )
    return out


SUMMARY_HEADER = (
    "method,key_kind,key,mean_coverage,q10_coverage,q90_coverage,"
    "median_length,inf_fraction"
)


def write_summary_csv(rows: list[SummaryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.method},{r.key_kind},{r.key},{_fmt(r.mean_coverage)},"
                f"{_fmt(r.q10_coverage)},{_fmt(r.q90_coverage)},"
                f"{_fmt(r.median_length)},{_fmt(r.inf_fraction)}\n"
            )


def median_length_improvement(
    summary: list[SummaryRow], method_a: str, method_b: str, key_kind: str, key: str
) -> float:
    """Relative median-length change of A against B: (medA - medB) / medB."""

    def pick(method: str) -> float:
        for r in summary:
            if (r.method, r.key_kind, r.key) == (method, key_kind, key):
                return r.median_length
        raise KeyError(f"no summary row for {method} / {key_kind} / {key}")

    med_b = pick(method_b)
    return (pick(method_a) - med_b) / med_b
