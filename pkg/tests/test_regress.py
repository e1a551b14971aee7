import numpy as np
import pytest

from cpmda.oracle import normal_quantile
from cpmda.regress import (
    LinearQuantileModel,
    MLPQuantileModel,
    _loss_and_grads,
    fit_linear_quantile,
    fit_mlp_quantile,
    fit_ridge,
    pinball_loss,
    predict_quantiles,
)

from reference import ref_best_line_pinball, ref_pinball, ref_ridge


# ---------------------------------------------------------------------------
# pinball loss


def test_pinball_matches_reference_definition():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(50)
    y_hat = rng.standard_normal(50)
    for tau in (0.1, 0.5, 0.9):
        assert np.mean(pinball_loss(y, y_hat, tau)) == pytest.approx(
            ref_pinball(y, y_hat, tau), abs=1e-12
        )
    assert pinball_loss(2.0, 0.0, 0.5) == 1.0
    assert pinball_loss(1.0, 0.0, 0.9) == pytest.approx(0.9)
    assert pinball_loss(3.0, 3.0, 0.2) == 0.0


def test_pinball_finite_difference_away_from_kinks():
    # subgradient equals the classical gradient wherever y != y_hat
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    tau = 0.3
    w = rng.standard_normal(3)

    def loss(wv):
        return float(np.mean(pinball_loss(y, Z @ wv, tau)))

    from cpmda.regress import _pinball_grad

    grad = Z.T @ _pinball_grad(Z @ w, y, tau) / len(y)
    eps = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps
        fd = (loss(w + e) - loss(w - e)) / (2 * eps)
        assert abs(fd - grad[j]) < 1e-6


# ---------------------------------------------------------------------------
# linear quantile fits


def test_constant_response_is_fit_exactly():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((100, 2))
    y = np.full(100, 3.5)
    fit = fit_linear_quantile(Z, y, tau=0.5)
    pred = Z @ fit.coef + fit.intercept
    assert np.max(np.abs(pred - y)) < 1e-3


def test_no_features_recovers_gaussian_quantile():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(20_000)
    Z = np.zeros((20_000, 0))
    fit = fit_linear_quantile(Z, y, tau=0.9)
    assert fit.intercept == pytest.approx(normal_quantile(0.9), abs=0.05)


def test_lad_close_to_brute_force_optimum():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(25)
    y = 1.3 * x - 0.7 + 0.5 * rng.standard_normal(25)
    best_loss, _, _ = ref_best_line_pinball(x, y, tau=0.5)
    fit = fit_linear_quantile(x[:, None], y, tau=0.5)
    got = float(np.mean(pinball_loss(y, x * fit.coef[0] + fit.intercept, 0.5)))
    assert got <= best_loss + 1e-2


def test_median_fit_balances_residual_signs():
    rng = np.random.default_rng(5)
    n = 4000
    Z = rng.standard_normal((n, 2))
    y = Z @ np.array([1.0, -2.0]) + rng.standard_normal(n)
    fit = fit_linear_quantile(Z, y, tau=0.5)
    frac_below = np.mean(y < Z @ fit.coef + fit.intercept)
    assert abs(frac_below - 0.5) < 3.0 / np.sqrt(n)


def test_loss_history_is_recorded_and_improves():
    rng = np.random.default_rng(6)
    Z = rng.standard_normal((200, 2))
    y = Z @ np.array([2.0, 1.0]) + 0.1 * rng.standard_normal(200)
    fit = fit_linear_quantile(Z, y, tau=0.5)
    assert len(fit.loss_history) > 1
    assert fit.loss_history[-1] <= fit.loss_history[0]


def test_linear_model_sorts_crossing_heads():
    model = LinearQuantileModel(levels=(0.05, 0.95), W=np.zeros((2, 1)), b=np.array([3.0, 1.0]))
    pred = model.predict(np.zeros((1, 1)))
    assert pred[0].tolist() == [1.0, 3.0]


def test_linear_model_zero_input_returns_intercepts():
    rng = np.random.default_rng(7)
    Z = rng.standard_normal((500, 2))
    y = Z.sum(axis=1) + rng.standard_normal(500)
    model = LinearQuantileModel.fit(Z, y, levels=(0.1, 0.9))
    pred = model.predict(np.zeros((1, 2)))[0]
    assert pred.tolist() == sorted(np.sort(model.b).tolist())


# ---------------------------------------------------------------------------
# MLP quantile nets


def test_mlp_zero_epochs_yields_valid_ordered_predictions():
    rng = np.random.default_rng(8)
    Z = rng.standard_normal((50, 3))
    y = rng.standard_normal(50)
    model = fit_mlp_quantile(Z, y, levels=(0.05, 0.95), epochs=0)
    pred = model.predict(Z)
    assert pred.shape == (50, 2)
    assert np.isfinite(pred).all()
    assert (pred[:, 0] <= pred[:, 1]).all()


def test_mlp_seed_determinism():
    rng = np.random.default_rng(9)
    Z = rng.standard_normal((120, 2))
    y = Z.sum(axis=1) + rng.standard_normal(120)
    a = fit_mlp_quantile(Z, y, levels=(0.05, 0.95), epochs=50, seed=5)
    b = fit_mlp_quantile(Z, y, levels=(0.05, 0.95), epochs=50, seed=5)
    c = fit_mlp_quantile(Z, y, levels=(0.05, 0.95), epochs=50, seed=6)
    assert all(np.array_equal(pa, pb) for pa, pb in zip(a.params, b.params))
    assert not all(np.array_equal(pa, pc) for pa, pc in zip(a.params, c.params))


def test_mlp_close_to_oracle_on_linear_model():
    # d = 1 linear-Gaussian data: held-out pinball within 10% of the
    # analytic conditional quantile predictor
    rng = np.random.default_rng(10)
    n = 3000
    x = rng.standard_normal(n)
    y = 2.0 * x + rng.standard_normal(n)
    x_test = rng.standard_normal(1500)
    y_test = 2.0 * x_test + rng.standard_normal(1500)
    levels = (0.05, 0.95)
    model = fit_mlp_quantile(x[:, None], y, levels=levels)
    pred = model.predict(x_test[:, None])
    z = normal_quantile(0.95)
    oracle = np.column_stack([2 * x_test - z, 2 * x_test + z])
    for k, tau in enumerate(levels):
        got = float(np.mean(pinball_loss(y_test, pred[:, k], tau)))
        ref = float(np.mean(pinball_loss(y_test, oracle[:, k], tau)))
        assert got <= 1.1 * ref


def test_mlp_finite_difference_gradients():
    rng = np.random.default_rng(11)
    Z = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    levels = (0.1, 0.9)
    params = [
        rng.standard_normal((8, 2)) * 0.5,
        rng.standard_normal(8) * 0.1,
        rng.standard_normal((8, 8)) * 0.5,
        rng.standard_normal(8) * 0.1,
        rng.standard_normal((2, 8)) * 0.5,
        rng.standard_normal(2) * 0.1,
    ]
    loss0, grads = _loss_and_grads(params, Z, y, levels)
    eps = 1e-5
    for idx in range(len(params)):
        flat = params[idx].reshape(-1)
        for pos in (0, flat.size // 2):
            orig = flat[pos]
            flat[pos] = orig + eps
            up, _ = _loss_and_grads(params, Z, y, levels)
            flat[pos] = orig - eps
            dn, _ = _loss_and_grads(params, Z, y, levels)
            flat[pos] = orig
            fd = (up - dn) / (2 * eps)
            g = grads[idx].reshape(-1)[pos]
            denom = max(abs(fd), abs(g), 1e-8)
            assert abs(fd - g) / denom < 1e-4


def test_predict_quantiles_returns_scalar_pair():
    rng = np.random.default_rng(12)
    Z = rng.standard_normal((80, 2))
    y = rng.standard_normal(80)
    model = fit_mlp_quantile(Z, y, levels=(0.05, 0.95), epochs=20)
    lo, hi = predict_quantiles(model, Z[0])
    assert isinstance(lo, float) and isinstance(hi, float)
    assert lo <= hi


# ---------------------------------------------------------------------------
# ridge regression


def test_ridge_small_penalty_matches_least_squares():
    rng = np.random.default_rng(13)
    Z = rng.standard_normal((60, 3))
    y = Z @ np.array([1.0, -1.0, 0.5]) + 2.0 + 0.01 * rng.standard_normal(60)
    model = fit_ridge(Z, y, lam=1e-10)
    A = np.hstack([Z, np.ones((60, 1))])
    w, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.allclose(model.coef, w[:3], atol=1e-6)
    assert model.intercept == pytest.approx(w[3], abs=1e-6)


def test_ridge_huge_penalty_shrinks_to_mean():
    rng = np.random.default_rng(14)
    Z = rng.standard_normal((60, 2))
    y = rng.standard_normal(60) + 4.0
    model = fit_ridge(Z, y, lam=1e12)
    assert np.allclose(model.coef, 0.0, atol=1e-8)
    assert model.intercept == pytest.approx(float(y.mean()), abs=1e-6)


def test_ridge_matches_normal_equations_exactly():
    rng = np.random.default_rng(15)
    Z = rng.standard_normal((5, 3))
    y = rng.standard_normal(5)
    lam = 0.7
    model = fit_ridge(Z, y, lam=lam)
    coef_ref, intercept_ref = ref_ridge(Z, y, lam)
    assert np.allclose(model.coef, coef_ref, atol=1e-10)
    assert model.intercept == pytest.approx(intercept_ref, abs=1e-10)


def test_ridge_prediction_shape():
    model = fit_ridge(np.eye(3), np.array([1.0, 2.0, 3.0]), lam=0.1)
    assert model.predict(np.eye(3)).shape == (3,)
