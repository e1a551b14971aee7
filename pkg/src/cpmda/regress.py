"""Regressors over imputed-features-plus-mask inputs: linear quantile
regression by deterministic subgradient descent, a two-head MLP quantile
regressor trained with full-batch gradient descent, and closed-form ridge.

Everything is plain numpy and bit-reproducible: no adaptive optimizers, no
minibatching, a fixed seed pins the MLP init.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from cpmda.core import ConfigurationError, DimensionError


def pinball_loss(y, y_hat, tau: float):
    """tau * (y - y_hat) above the prediction, (1 - tau) * (y_hat - y) below."""
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"quantile level must be in (0, 1), got {tau}")
    diff = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    out = np.where(diff >= 0, tau * diff, (tau - 1.0) * diff)
    return float(out) if out.ndim == 0 else out


def _pinball_grad(pred: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    """Subgradient of the pinball loss in the prediction; 0 at exact ties."""
    g = np.where(pred > y, 1.0 - tau, -tau)
    g[pred == y] = 0.0
    return g


def _standardize(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = Z.mean(axis=0) if Z.size else np.zeros(Z.shape[1])
    scale = Z.std(axis=0) if Z.size else np.ones(Z.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return (Z - mean) / scale, mean, scale


class LinearQuantileFit(NamedTuple):
    coef: np.ndarray
    intercept: float
    loss_history: tuple[float, ...]  # loss of the averaged iterate over training


def fit_linear_quantile(
    Z: np.ndarray,
    y: np.ndarray,
    tau: float,
    epochs: int = 2000,
    step: float | None = None,
    seed: int = 0,
) -> LinearQuantileFit:
    """Linear pinball-loss minimization by projected-free subgradient descent.

    Deterministic: full-batch subgradients, step/sqrt(t) schedule, and the
    returned coefficients are the average of the last half of the iterates.
    The intercept starts at the empirical tau-quantile so degenerate targets
    are exact from epoch zero. ``seed`` is accepted for interface uniformity;
    no randomness is used.
    """
    del seed
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"quantile level must be in (0, 1), got {tau}")
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0] or y.shape[0] == 0:
        raise ConfigurationError("need a nonempty (n, p) matrix and matching y")
    n, p = Z.shape
    Zs, mean, scale = _standardize(Z)
    if step is None:
        step = max(float(np.std(y)), 1e-12)
    w = np.zeros(p)
    b = float(np.quantile(y, tau))
    w_sum = np.zeros(p)
    b_sum = 0.0
    n_avg = 0
    history = []
    checkpoint = max(1, epochs // 20)
    tail_start = epochs // 2
    for t in range(1, epochs + 1):
        pred = Zs @ w + b
        g = _pinball_grad(pred, y, tau)
        lr = step / np.sqrt(t)
        w -= lr * (Zs.T @ g) / n
        b -= lr * float(g.mean())
        if t > tail_start or epochs == 1:
            w_sum += w
            b_sum += b
            n_avg += 1
        if t % checkpoint == 0 or t == epochs:
            wa, ba = (w_sum / n_avg, b_sum / n_avg) if n_avg else (w, b)
            history.append(float(np.mean(pinball_loss(y, Zs @ wa + ba, tau))))
    w_avg, b_avg = (w_sum / n_avg, b_sum / n_avg) if n_avg else (w, b)
    coef = w_avg / scale
    intercept = b_avg - float(coef @ mean)
    return LinearQuantileFit(coef, intercept, tuple(history))


@dataclass(frozen=True)
class LinearQuantileModel:
    """Two linear pinball fits, one per level; rows of W match levels."""

    levels: tuple[float, float]
    W: np.ndarray  # (2, p)
    b: np.ndarray  # (2,)

    @classmethod
    def fit(
        cls,
        Z: np.ndarray,
        y: np.ndarray,
        levels: tuple[float, float],
        epochs: int = 2000,
        step: float | None = None,
        seed: int = 0,
    ) -> "LinearQuantileModel":
        lo, hi = levels
        if not lo < hi:
            raise ConfigurationError(f"levels must be ordered, got {levels}")
        f_lo = fit_linear_quantile(Z, y, lo, epochs=epochs, step=step, seed=seed)
        f_hi = fit_linear_quantile(Z, y, hi, epochs=epochs, step=step, seed=seed)
        return cls(
            levels=(lo, hi),
            W=np.vstack([f_lo.coef, f_hi.coef]),
            b=np.array([f_lo.intercept, f_hi.intercept]),
        )

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def predict(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise DimensionError(f"expected {self.dim} features, got {Z.shape[1]}")
        return np.sort(Z @ self.W.T + self.b, axis=1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _init_params(
    d_in: int, hidden: Sequence[int], rng: np.random.Generator
) -> list[np.ndarray]:
    """He-style init, weights then bias per layer, two-unit output last."""
    sizes = [d_in, *hidden, 2]
    params: list[np.ndarray] = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        params.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        params.append(np.zeros(fan_out))
    return params


def _loss_and_grads(
    params: list[np.ndarray],
    Zs: np.ndarray,
    ys: np.ndarray,
    levels: tuple[float, float],
) -> tuple[float, list[np.ndarray]]:
    """Joint pinball loss of both heads and its full gradient.

    Pure in params so the backward pass can be checked against finite
    differences on the same function.
    """
    n_layers = len(params) // 2
    acts = [Zs]
    pres = []
    h = Zs
    for i in range(n_layers):
        W, b = params[2 * i], params[2 * i + 1]
        s = h @ W.T + b
        pres.append(s)
        h = _softplus(s) if i < n_layers - 1 else s
        acts.append(h)
    out = acts[-1]
    n = Zs.shape[0]
    taus = np.array(levels)
    diff = ys[:, None] - out
    loss = float(np.mean(np.where(diff >= 0, taus * diff, (taus - 1.0) * diff).sum(axis=1)))
    g_out = np.where(out > ys[:, None], 1.0 - taus, -taus)
    g_out[out == ys[:, None]] = 0.0
    g_out = g_out / n
    grads = [np.zeros_like(p) for p in params]
    delta = g_out
    for i in reversed(range(n_layers)):
        W = params[2 * i]
        if i < n_layers - 1:
            delta = delta * _sigmoid(pres[i])
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ W
    return loss, grads


@dataclass(frozen=True)
class MLPQuantileModel:
    """Softplus MLP with two linear output heads (lower, upper quantile).

    Inputs and targets are standardized internally; predictions are mapped
    back and sorted so q_lo <= q_hi always holds.
    """

    levels: tuple[float, float]
    params: tuple[np.ndarray, ...]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @property
    def dim(self) -> int:
        return self.params[0].shape[1]

    def _forward(self, Zs: np.ndarray) -> np.ndarray:
        n_layers = len(self.params) // 2
        h = Zs
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            s = h @ W.T + b
            h = _softplus(s) if i < n_layers - 1 else s
        return h

    def predict(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.dim:
            raise DimensionError(f"expected {self.dim} features, got {Z.shape[1]}")
        Zs = (Z - self.x_mean) / self.x_scale
        out = self._forward(Zs) * self.y_scale + self.y_mean
        return np.sort(out, axis=1)


def fit_mlp_quantile(
    Z: np.ndarray,
    y: np.ndarray,
    levels: tuple[float, float],
    hidden: Sequence[int] = (64, 64),
    epochs: int = 1000,
    step: float = 0.05,
    seed: int = 0,
) -> MLPQuantileModel:
    """Full-batch fixed-step gradient descent on the joint two-head pinball
    loss; deterministic given the seed. epochs=0 returns the initialized net."""
    lo, hi = levels
    if not 0.0 < lo < hi < 1.0:
        raise ConfigurationError(f"levels must satisfy 0 < lo < hi < 1, got {levels}")
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0] or y.shape[0] == 0:
        raise ConfigurationError("need a nonempty (n, p) matrix and matching y")
    Zs, x_mean, x_scale = _standardize(Z)
    y_mean = float(y.mean())
    y_scale = float(y.std()) or 1.0
    ys = (y - y_mean) / y_scale
    rng = np.random.default_rng(seed)
    params = _init_params(Z.shape[1], hidden, rng)
    for _ in range(epochs):
        _, grads = _loss_and_grads(params, Zs, ys, (lo, hi))
        for p, g in zip(params, grads):
            p -= step * g
    return MLPQuantileModel(
        levels=(lo, hi),
        params=tuple(params),
        x_mean=x_mean,
        x_scale=x_scale,
        y_mean=y_mean,
        y_scale=y_scale,
    )


def predict_quantiles(model, z: np.ndarray) -> tuple[float, float]:
    """Evaluate both heads at one feature vector, crossing-fixed."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise DimensionError("expected a single feature vector")
    q = model.predict(z[None, :])[0]
    return float(q[0]), float(q[1])


@dataclass(frozen=True)
class MeanModel:
    coef: np.ndarray
    intercept: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.coef).all() and np.isfinite(self.intercept)):
            raise ConfigurationError("mean model has non-finite coefficients")

    def predict(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.coef.shape[0]:
            raise DimensionError(f"expected {self.coef.shape[0]} features")
        return Z @ self.coef + self.intercept


def fit_ridge(Z: np.ndarray, y: np.ndarray, lam: float = 1e-6) -> MeanModel:
    """Closed-form ridge with an unpenalized intercept (centered equations)."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != y.shape[0] or y.shape[0] == 0:
        raise ConfigurationError("need a nonempty (n, p) matrix and matching y")
    if lam < 0:
        raise ConfigurationError("penalty must be nonnegative")
    z_mean = Z.mean(axis=0)
    y_mean = float(y.mean())
    Zc = Z - z_mean
    G = Zc.T @ Zc + lam * np.eye(Z.shape[1])
    coef = np.linalg.solve(G, Zc.T @ (y - y_mean))
    return MeanModel(coef=coef, intercept=y_mean - float(coef @ z_mean))
