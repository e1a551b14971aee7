import numpy as np
import pytest

from cpmda.core import ConfigurationError, masks_to_array
from cpmda.missingness import (
    MechanismSpec,
    apply_mechanism,
    gen_mcar,
    mechanism_weights,
)


def _bits(masks):
    return masks_to_array(masks)


def test_mcar_frequency_close_to_p():
    rng = np.random.default_rng(42)
    bits = _bits(gen_mcar(100_000, 10, 0.2, rng))
    assert abs(bits.mean() - 0.2) < 0.005


def test_mcar_columns_uncorrelated():
    rng = np.random.default_rng(1)
    n = 50_000
    bits = _bits(gen_mcar(n, 5, 0.3, rng)).astype(float)
    corr = np.corrcoef(bits.T)
    off = corr[~np.eye(5, dtype=bool)]
    assert np.max(np.abs(off)) < 4.0 / np.sqrt(n)


def test_mcar_spec_requires_probability():
    with pytest.raises(ConfigurationError):
        MechanismSpec(kind="mcar", missing_cols=(0, 1), p=1.5)
    with pytest.raises(ConfigurationError):
        MechanismSpec(kind="mcar", missing_cols=(0, 1))


def test_spec_rejects_overlapping_column_sets():
    with pytest.raises(ConfigurationError):
        MechanismSpec(
            kind="mar_logistic",
            missing_cols=(0, 1),
            observed_cols=(1, 2),
            target_prop=0.2,
        )
    with pytest.raises(ConfigurationError):
        MechanismSpec(kind="nope", missing_cols=(0,), p=0.1)


def test_mcar_only_touches_selected_columns():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((2000, 4))
    spec = MechanismSpec(kind="mcar", missing_cols=(1, 3), p=0.5)
    bits = _bits(apply_mechanism(X, spec, rng))
    assert bits[:, 0].sum() == 0 and bits[:, 2].sum() == 0
    assert 0.4 < bits[:, 1].mean() < 0.6


def test_mar_logistic_hits_target_rate():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((60_000, 6))
    spec = MechanismSpec(
        kind="mar_logistic", missing_cols=(0, 1, 2), target_prop=0.2, seed_offset=3
    )
    bits = _bits(apply_mechanism(X, spec, rng))
    realized = bits[:, :3].mean()
    assert abs(realized - 0.2) < 0.01
    assert bits[:, 3:].sum() == 0


def test_mar_logistic_zero_weights_degenerates_to_mcar():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((40_000, 4))
    spec = MechanismSpec(
        kind="mar_logistic",
        missing_cols=(0, 1),
        observed_cols=(2, 3),
        target_prop=0.3,
        weights=(0.0, 0.0),
    )
    bits = _bits(apply_mechanism(X, spec, rng)).astype(float)
    assert abs(bits[:, :2].mean() - 0.3) < 0.01
    # flat weights leave nothing for the mask to depend on
    corr = np.corrcoef(np.column_stack([bits[:, 0], X[:, 2]]).T)[0, 1]
    assert abs(corr) < 4.0 / np.sqrt(40_000)


def test_mar_probability_depends_on_observed_columns():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((50_000, 3))
    spec = MechanismSpec(
        kind="mar_logistic",
        missing_cols=(0,),
        observed_cols=(2,),
        target_prop=0.25,
        weights=(4.0,),
    )
    bits = _bits(apply_mechanism(X, spec, rng))
    high = bits[X[:, 2] > 0.5, 0].mean()
    low = bits[X[:, 2] < -0.5, 0].mean()
    assert high > low + 0.2


def test_mnar_self_masked_prefers_large_values():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((50_000, 3))
    spec = MechanismSpec(
        kind="mnar_self_masked",
        missing_cols=(0, 1, 2),
        target_prop=0.2,
        weights=(2.0, 2.0, 2.0),
    )
    bits = _bits(apply_mechanism(X, spec, rng))
    assert abs(bits.mean() - 0.2) < 0.01
    for j in range(3):
        assert X[bits[:, j], j].mean() > X[:, j].mean() + 0.1


def test_mnar_quantile_masks_only_above_cut():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((50_000, 2))
    spec = MechanismSpec(
        kind="mnar_quantile", missing_cols=(0, 1), q=0.5, target_prop=0.2
    )
    bits = _bits(apply_mechanism(X, spec, rng))
    for j in range(2):
        cut = np.quantile(X[:, j], 0.5)
        below = bits[X[:, j] <= cut, j]
        above = bits[X[:, j] > cut, j]
        assert below.sum() == 0
        assert abs(above.mean() - 0.4) < 0.01  # p* = target / (1 - q) = 0.4
    assert abs(bits.mean() - 0.2) < 0.01


def test_mnar_quantile_saturates_at_one():
    rng = np.random.default_rng(14)
    X = rng.standard_normal((20_000, 1))
    spec = MechanismSpec(kind="mnar_quantile", missing_cols=(0,), q=0.8, target_prop=0.2)
    bits = _bits(apply_mechanism(X, spec, rng))
    cut = np.quantile(X[:, 0], 0.8)
    assert bits[X[:, 0] > cut, 0].all()


def test_mnar_quantile_rejects_unreachable_target():
    with pytest.raises(ConfigurationError):
        MechanismSpec(kind="mnar_quantile", missing_cols=(0,), q=0.95, target_prop=0.2)


def test_mechanism_weights_are_seeded_and_unit_norm():
    spec_a = MechanismSpec(
        kind="mar_logistic", missing_cols=(0,), observed_cols=(1, 2, 3), target_prop=0.2
    )
    spec_b = MechanismSpec(
        kind="mar_logistic",
        missing_cols=(0,),
        observed_cols=(1, 2, 3),
        target_prop=0.2,
        seed_offset=1,
    )
    w_a = mechanism_weights(spec_a, 3)
    w_b = mechanism_weights(spec_b, 3)
    assert np.linalg.norm(w_a) == pytest.approx(1.0, abs=1e-12)
    assert not np.allclose(w_a, w_b)
    assert np.allclose(w_a, mechanism_weights(spec_a, 3))


def test_explicit_weights_pass_through():
    spec = MechanismSpec(
        kind="mar_logistic",
        missing_cols=(0,),
        observed_cols=(1, 2),
        target_prop=0.2,
        weights=(1.0, -2.0),
    )
    assert mechanism_weights(spec, 2).tolist() == [1.0, -2.0]


def test_apply_mechanism_is_reproducible():
    X = np.random.default_rng(0).standard_normal((500, 4))
    spec = MechanismSpec(kind="mnar_self_masked", missing_cols=(0, 2), target_prop=0.3)
    a = _bits(apply_mechanism(X, spec, np.random.default_rng(5)))
    b = _bits(apply_mechanism(X, spec, np.random.default_rng(5)))
    assert (a == b).all()
