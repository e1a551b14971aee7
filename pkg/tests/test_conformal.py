import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpmda.core import ConfigurationError, IncompleteDataset, Mask
from cpmda.conformal import (
    AbsResidualScore,
    BoundedExtra,
    ClassificationScore,
    CqrScore,
    Exact,
    Full,
    Mixture,
    SupersetOf,
    build_augmented_records,
    comparison_matrix_bound,
    conformal_quantile,
    conformal_rank,
    interval_union_from_exclusions,
    isotonize_by_overmasking,
    mda_exact_set,
    mda_nested_interval,
    mda_nested_star_set,
    nested_interval_ends,
    split_cp_set,
    subsample_cal,
)

from reference import boundary_mask, ref_rank, ref_split_quantile, star_grid_points


# ---------------------------------------------------------------------------
# stub models: bands derived from the first covariate and the mask


class _BandNet:
    """[x0 - w, x0 + w] with the width growing per missing coordinate."""

    def __init__(self, width: float, widen: float = 0.0):
        self.width = width
        self.widen = widen

    def predict(self, Z):
        d = Z.shape[1] // 2
        w = self.width + self.widen * Z[:, d:].sum(axis=1)
        return np.column_stack([Z[:, 0] - w, Z[:, 0] + w])


def _feat(values, missing):
    # masked slots are replaced, so the model only sees observed coordinates
    v = np.where(missing, 0.0, np.asarray(values, dtype=float))
    return np.hstack([v, missing.astype(float)])


def _score(width=1.0, widen=0.0):
    return CqrScore(model=_BandNet(width, widen), featurize=_feat)


def _cal(values, missing, y):
    return IncompleteDataset(
        np.asarray(values, float), np.asarray(missing, bool), np.asarray(y, float)
    )


def _random_cal(rng, n, d=3, p=0.35):
    X = rng.standard_normal((n, d))
    bits = rng.random((n, d)) < p
    y = X[:, 0] + 0.5 * rng.standard_normal(n)
    return _cal(X, bits, y)


# ---------------------------------------------------------------------------
# ranks and quantiles


def test_rank_survives_float_artifacts():
    # (1 - 0.1) * 10 is 9.000000000000002 in binary; the snap keeps rank 9
    assert conformal_rank(9, 0.1) == 9
    assert conformal_rank(4, 0.5) == 3
    assert conformal_rank(0, 0.1) == 1


@given(st.integers(0, 300), st.floats(0.01, 0.99))
def test_rank_matches_reference(n, alpha):
    assert conformal_rank(n, alpha) == ref_rank(n, alpha)


def test_quantile_examples():
    assert conformal_quantile(np.array([1.0, 2.0, 3.0, 4.0]), 0.5) == 3.0
    assert conformal_quantile(np.array([1.0, 2.0, 3.0, 4.0]), 0.1) == np.inf
    assert conformal_quantile(np.array([7.0]), 0.5) == 7.0
    with pytest.raises(ConfigurationError):
        conformal_quantile(np.array([]), 0.5)


@settings(max_examples=50)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=40),
    st.floats(0.02, 0.98),
)
def test_quantile_matches_sorted_reference(scores, alpha):
    got = conformal_quantile(np.array(scores), alpha)
    assert got == ref_split_quantile(scores, alpha)


# ---------------------------------------------------------------------------
# scores


def test_cqr_score_definition():
    score = _score(width=1.0)
    vals = np.array([[2.0, 0.0]])
    bits = np.zeros((1, 2), dtype=bool)
    # band is [1, 3]; y below, inside, above
    assert score.scores(vals, bits, np.array([0.0]))[0] == pytest.approx(1.0)
    assert score.scores(vals, bits, np.array([2.5]))[0] == pytest.approx(-0.5)
    assert score.scores(vals, bits, np.array([4.0]))[0] == pytest.approx(1.0)


def test_abs_residual_band_is_degenerate():
    class _Mean:
        def predict(self, Z):
            return Z[:, 0]

    score = AbsResidualScore(model=_Mean(), featurize=_feat)
    vals = np.array([[1.5, 0.0]])
    bits = np.zeros((1, 2), dtype=bool)
    band = score.bands(vals, bits)
    assert band[0].tolist() == [1.5, 1.5]
    assert score.scores(vals, bits, np.array([3.0]))[0] == pytest.approx(1.5)


# ---------------------------------------------------------------------------
# split conformal


def test_split_cp_interval_is_band_plus_quantile():
    rng = np.random.default_rng(0)
    cal = _random_cal(rng, 40, d=2, p=0.0)
    score = _score(width=0.5)
    s = score.scores(cal.values, cal.missing, cal.y)
    q = conformal_quantile(s, 0.2)
    ps = split_cp_set(score, cal, np.array([1.0, 0.0]), Mask.zeros(2), 0.2)
    ((lo, hi),) = ps.intervals
    assert lo == pytest.approx(1.0 - 0.5 - q)
    assert hi == pytest.approx(1.0 + 0.5 + q)


def test_split_cp_empty_calibration_flags_full_line():
    cal = _cal(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))
    ps = split_cp_set(_score(), cal, np.array([0.0, 0.0]), Mask.zeros(2), 0.1)
    assert ps.from_empty_calibration
    assert ps.contains(1e9)


def test_split_cp_marginal_coverage():
    rng = np.random.default_rng(1)
    n_cal, n_test = 300, 2000
    cal = _random_cal(rng, n_cal, d=3, p=0.3)
    test = _random_cal(rng, n_test, d=3, p=0.3)
    score = _score(width=0.2)
    hit = 0
    for i in range(n_test):
        m = Mask.from_bits(test.missing[i].astype(int))
        ps = split_cp_set(score, cal, test.values[i], m, 0.1)
        hit += ps.contains(test.y[i])
    coverage = hit / n_test
    # allow for the calibration-conditional Beta spread on top of test noise
    assert coverage >= 0.9 - 3 * np.sqrt(0.9 * 0.1 / n_cal)


# ---------------------------------------------------------------------------
# endpoint sweep


def test_sweep_single_complete_interval():
    lows = np.zeros(9)
    highs = np.ones(9)
    # rank(9, 0.1) = 9 so up to 8 exclusions are tolerated
    ps = interval_union_from_exclusions(lows, highs, conformal_rank(9, 0.1) - 1)
    assert ps.intervals == ((0.0, 1.0),)
    assert ps.contains(0.5)


def test_sweep_three_records_example():
    lows = np.array([0.0, 0.0, 5.0])
    highs = np.array([1.0, 2.0, 6.0])
    max_excl = conformal_rank(3, 0.5) - 1  # tolerate one exclusion
    ps = interval_union_from_exclusions(lows, highs, max_excl)
    assert ps.intervals == ((0.0, 1.0),)


def test_sweep_bad_records_count_everywhere():
    lows = np.array([1.0, 0.0])
    highs = np.array([0.0, 2.0])  # first record is empty
    assert interval_union_from_exclusions(lows, highs, 0).intervals == ()
    ps = interval_union_from_exclusions(lows, highs, 1)
    assert ps.intervals == ((0.0, 2.0),)


def test_sweep_detects_isolated_points():
    lows = np.array([0.0, 2.0])
    highs = np.array([2.0, 4.0])
    ps = interval_union_from_exclusions(lows, highs, 0)
    assert ps.intervals == ((2.0, 2.0),)
    assert ps.length == 0.0


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 10_000))
def test_sweep_matches_dense_grid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 11))
    lows = np.round(rng.uniform(-3, 3, n), 3)
    highs = np.round(lows + rng.uniform(-0.5, 3, n), 3)
    max_excl = int(rng.integers(0, n + 1))
    ps = interval_union_from_exclusions(lows, highs, max_excl)
    ys = star_grid_points(lows, highs, step=1e-3)
    ends = [e for pair in ps.intervals for e in pair]
    keep = ~boundary_mask(ys, ends)
    got = np.array([ps.contains(float(y)) for y in ys[keep]])
    want = np.array([
        sum(1 for lo, hi in zip(lows, highs) if lo > hi or y < lo or y > hi) <= max_excl
        for y in ys[keep]
    ])
    assert (got == want).all()


# ---------------------------------------------------------------------------
# the three conformal methods


def test_star_single_record_is_full_line():
    cal = _cal([[0.0, 0.0]], [[False, False]], [0.0])
    ps = mda_nested_star_set(_score(), cal, np.array([0.0, 0.0]), Mask.zeros(2), 0.1)
    assert ps.contains(-1e9) and ps.contains(1e9)
    assert not ps.from_empty_calibration


def test_nested_single_record_is_full_line():
    cal = _cal([[0.0, 0.0]], [[False, False]], [0.0])
    ps = mda_nested_interval(_score(), cal, np.array([0.0, 0.0]), Mask.zeros(2), 0.1)
    assert ps.intervals == ((-np.inf, np.inf),)


def test_nested_equal_records_collapse_to_their_interval():
    # every calibration record scores -1 (y sits at its band center, width 1),
    # so each contributes the test band shrunk by 1 from both sides: {3}
    cal = _cal(np.zeros((12, 2)), np.zeros((12, 2), bool), np.zeros(12))
    score = _score(width=1.0)
    ps = mda_nested_interval(score, cal, np.array([3.0, 0.0]), Mask.zeros(2), 0.1)
    assert ps.intervals == ((3.0, 3.0),)


def test_nested_ends_use_order_statistics():
    lows = np.array([0.0, -1.0, -2.0, -3.0])
    highs = np.array([1.0, 2.0, 3.0, 4.0])
    lo, hi = nested_interval_ends(lows, highs, 0.5)
    r = conformal_rank(4, 0.5)  # 3
    assert hi == np.sort(highs)[r - 1]
    assert lo == np.sort(lows)[4 - r]


def test_star_empty_calibration_flags_full_line():
    cal = _cal([[0.0, 0.0]], [[True, False]], [0.0])
    # the exact strategy rejects the only record: its mask is not contained
    ps = mda_nested_star_set(
        _score(), cal, np.array([0.0, 0.0]), Mask.zeros(2), 0.1, strategy=Exact()
    )
    assert ps.from_empty_calibration
    assert ps.contains(0.0)


def test_exact_equals_star_with_exact_strategy():
    rng = np.random.default_rng(7)
    score = _score(width=0.4, widen=0.8)
    for trial in range(40):
        cal = _random_cal(rng, int(rng.integers(3, 40)))
        x = rng.standard_normal(3)
        m = Mask.from_bits((rng.random(3) < 0.5).astype(int))
        a = mda_exact_set(score, cal, x, m, 0.1)
        b = mda_nested_star_set(score, cal, x, m, 0.1, strategy=Exact())
        assert a.from_empty_calibration == b.from_empty_calibration
        assert a.intervals == b.intervals


def test_star_full_subset_of_nested():
    rng = np.random.default_rng(8)
    score = _score(width=0.4, widen=0.5)
    for trial in range(40):
        cal = _random_cal(rng, int(rng.integers(2, 30)))
        x = rng.standard_normal(3)
        m = Mask.from_bits((rng.random(3) < 0.4).astype(int))
        star = mda_nested_star_set(score, cal, x, m, 0.1, strategy=Full())
        nested = mda_nested_interval(score, cal, x, m, 0.1)
        assert star.issubset(nested)


def test_star_respects_over_masking():
    # calibration row observed everywhere, test mask hides x1: the record
    # must be scored under the union mask, widening the band
    cal = _cal([[1.0, 2.0]] * 6, np.zeros((6, 2), bool), [1.0] * 6)
    score = _score(width=0.5, widen=2.0)
    m = Mask.from_bits([0, 1])
    records = build_augmented_records(score, cal, m, Full())
    assert all(r.aug_mask == m for r in records)
    assert all(r.mask == Mask.zeros(2) for r in records)


# ---------------------------------------------------------------------------
# subsampling strategies


def test_strategy_selection_rules():
    masks = [
        Mask.from_bits([0, 0, 0]),
        Mask.from_bits([1, 0, 0]),
        Mask.from_bits([1, 1, 0]),
        Mask.from_bits([1, 1, 1]),
    ]
    m = Mask.from_bits([1, 0, 0])
    assert subsample_cal(masks, m, Full()).tolist() == [0, 1, 2, 3]
    assert subsample_cal(masks, m, Exact()).tolist() == [0, 1]
    assert subsample_cal(masks, m, BoundedExtra(1)).tolist() == [0, 1, 2]
    sup = Mask.from_bits([1, 1, 0])
    assert subsample_cal(masks, m, SupersetOf(sup)).tolist() == [0, 1, 2]
    with pytest.raises(ConfigurationError):
        subsample_cal(masks, m, SupersetOf(Mask.from_bits([0, 0, 1])))


def test_mixture_strategy_is_seeded_and_keeps_exact_matches():
    masks = [Mask.from_bits([1, 0]), Mask.from_bits([0, 1]), Mask.from_bits([1, 1])]
    m = Mask.from_bits([1, 0])
    a = subsample_cal(masks, m, Mixture(seed=3))
    b = subsample_cal(masks, m, Mixture(seed=3))
    assert a.tolist() == b.tolist()
    assert 0 in a.tolist()  # no extra missing coordinates, weight 1
    with pytest.raises(ConfigurationError):
        subsample_cal(masks, m, Mixture())


def test_subsampling_reads_masks_only():
    rng = np.random.default_rng(9)
    cal_a = _random_cal(rng, 25)
    cal_b = _cal(cal_a.values[::-1].copy(), cal_a.missing.copy(), -cal_a.y)
    m = Mask.from_bits([1, 0, 0])
    score = _score()
    for strategy in (Exact(), Full(), BoundedExtra(1)):
        ra = build_augmented_records(score, cal_a, m, strategy)
        rb = build_augmented_records(score, cal_b, m, strategy)
        assert [r.index for r in ra] == [r.index for r in rb]
        assert [r.aug_mask for r in ra] == [r.aug_mask for r in rb]


# ---------------------------------------------------------------------------
# classification path


class _ProbModel:
    def predict_proba(self, Z):
        n = Z.shape[0]
        base = np.tile(np.array([0.7, 0.2, 0.1]), (n, 1))
        return base


def test_classification_split_and_star():
    score = ClassificationScore(
        model=_ProbModel(), featurize=_feat, labels=("a", "b", "c")
    )
    cal = _cal(np.zeros((20, 2)), np.zeros((20, 2), bool), np.zeros(20))
    cal = IncompleteDataset(cal.values, cal.missing, np.array(["a"] * 15 + ["b"] * 5))
    ps = split_cp_set(score, cal, np.zeros(2), Mask.zeros(2), 0.2)
    assert ps.contains("a")
    star = mda_nested_star_set(score, cal, np.zeros(2), Mask.zeros(2), 0.2)
    assert star.contains("a")
    assert not star.contains("c")


# ---------------------------------------------------------------------------
# comparison matrix and isotonization


def test_comparison_matrix_all_equal_scores_has_no_winners():
    S = np.ones((6, 6))
    W, ok = comparison_matrix_bound(S, 0.1)
    assert W.size == 0 and ok


def test_comparison_matrix_bound_on_random_matrices():
    rng = np.random.default_rng(10)
    for _ in range(200):
        N = int(rng.integers(2, 30))
        S = rng.standard_normal((N, N))
        alpha = float(rng.choice([0.05, 0.1, 0.3]))
        W, ok = comparison_matrix_bound(S, alpha)
        assert ok
        assert W.size <= 2 * alpha * N + 1e-9


def test_isotonize_one_dimensional_example():
    m0, m1 = Mask.from_bits([0]), Mask.from_bits([1])
    builders = {m0: "observed-builder", m1: "missing-builder"}
    estimates = {m0: 5.0, m1: 3.0}
    remapped, final = isotonize_by_overmasking(builders, estimates)
    assert remapped[m0] == "missing-builder"
    assert remapped[m1] == "missing-builder"
    assert final == {m0: 3.0, m1: 3.0}


def test_isotonize_keeps_already_monotone_maps():
    m0, m1 = Mask.from_bits([0]), Mask.from_bits([1])
    builders = {m0: "b0", m1: "b1"}
    estimates = {m0: 3.0, m1: 3.0}  # ties must not switch builders
    remapped, final = isotonize_by_overmasking(builders, estimates)
    assert remapped == builders
    assert final == estimates


def test_isotonize_requires_upward_closure():
    m0 = Mask.from_bits([0, 0])
    with pytest.raises(ConfigurationError):
        isotonize_by_overmasking({m0: "b"}, {m0: 1.0})


@settings(max_examples=40)
@given(st.lists(st.floats(0.1, 10), min_size=4, max_size=4))
def test_isotonize_output_is_isotone_on_two_bits(lengths):
    masks = [Mask(2, k) for k in range(4)]
    builders = {m: f"b{m.key}" for m in masks}
    estimates = {m: lengths[m.key] for m in masks}
    _, final = isotonize_by_overmasking(builders, estimates)
    for m in masks:
        for m2 in masks:
            if (m.key & ~m2.key) == 0:
                assert final[m] <= final[m2] + 1e-12
    # the top pattern cannot change and each value comes from some superset
    assert final[Mask(2, 3)] == estimates[Mask(2, 3)]
    for m in masks:
        sups = [e for m2, e in estimates.items() if (m.key & ~m2.key) == 0]
        assert any(abs(final[m] - e) < 1e-12 for e in sups)
