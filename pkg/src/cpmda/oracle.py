"""Closed-form analytics for Gaussian linear models with missing inputs.

Everything here is exact (up to floating point): Schur-complement
conditioning, the predictive law of Y given the observed coordinates,
oracle intervals, variance-isotonicity certificates, and the hardness
bounds that limit what any distribution-free method can achieve on a
given missingness pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from cpmda.core import (
    ConfigurationError,
    DimensionError,
    Mask,
    NumericError,
    PredictiveSet,
    mask_subset,
)

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Rational approximation of the standard normal quantile (Acklam's
# coefficients), accurate to ~1.15e-9 relative before refinement.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425
_P_HIGH = 1.0 - _P_LOW


def standard_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_quantile(p: float) -> float:
    """Standard normal quantile, rational approximation plus one Newton
    step against the error function. Absolute error below 1e-9 on the
    whole representable range."""
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"quantile level must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= _P_HIGH:
        q = p - 0.5
        r = q * q
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if 0.5 * x * x < 700.0:  # skip refinement only where exp would overflow
        err = standard_normal_cdf(x) - p
        x -= err * _SQRT2PI * math.exp(0.5 * x * x)
    return x


def _solve_observed_block(Sigma: np.ndarray, m: Mask) -> tuple[np.ndarray, np.ndarray]:
    """Return (A, Sigma_cond) with A = Sigma_mo Sigma_oo^{-1} and
    Sigma_cond the conditional covariance of the missing block."""
    obs, mis = m.obs, m.mis
    if obs.size == 0:
        return np.zeros((mis.size, 0)), Sigma[np.ix_(mis, mis)].copy()
    if mis.size == 0:
        return np.zeros((0, obs.size)), np.zeros((0, 0))
    S_oo = Sigma[np.ix_(obs, obs)]
    S_om = Sigma[np.ix_(obs, mis)]
    cond = np.linalg.cond(S_oo)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(
            f"observed covariance block is numerically singular "
            f"(condition number {cond:.3e})"
        )
    A = np.linalg.solve(S_oo, S_om).T
    Sigma_cond = Sigma[np.ix_(mis, mis)] - A @ S_om
    Sigma_cond = 0.5 * (Sigma_cond + Sigma_cond.T)
    return A, Sigma_cond


def gaussian_conditional(
    mu: np.ndarray, Sigma: np.ndarray, x_obs: np.ndarray, m: Mask
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional law of the missing block given the observed one.

    Parameters
    ----------
    mu, Sigma : joint mean (d,) and covariance (d, d).
    x_obs : observed values, in the index order of ``m.obs``.
    m : missingness pattern; bit 1 marks missing.

    Returns
    -------
    (mean, cov) of X_mis | X_obs = x_obs, indexed along ``m.mis``.
    """
    mu = np.asarray(mu, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    x_obs = np.asarray(x_obs, dtype=float)
    if mu.shape != (m.d,) or Sigma.shape != (m.d, m.d):
        raise DimensionError("model dimensions do not match the mask length")
    if x_obs.shape != (m.obs.size,):
        raise DimensionError(
            f"expected {m.obs.size} observed values, got {x_obs.shape}"
        )
    A, Sigma_cond = _solve_observed_block(Sigma, m)
    mean = mu[m.mis] + A @ (x_obs - mu[m.obs])
    return mean, Sigma_cond


def conditional_mean_map(
    mu: np.ndarray, Sigma: np.ndarray, m: Mask
) -> tuple[np.ndarray, np.ndarray]:
    """Affine form of the conditional mean: E[X_mis | X_obs = x] = const + A x.

    One Schur solve per mask; callers filling many rows under the same
    pattern should use this instead of gaussian_conditional row by row.
    """
    mu = np.asarray(mu, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    A, _ = _solve_observed_block(Sigma, m)
    const = mu[m.mis] - A @ mu[m.obs]
    return const, A


class ConditionalGaussian(NamedTuple):
    """Predictive law of Y given the observed coordinates: N(mean, variance)."""

    mean: float
    variance: float


class _PatternFactors(NamedTuple):
    w: np.ndarray  # coefficient on x_obs
    const: float
    variance: float


@dataclass(frozen=True)
class GaussianLinearModel:
    """Y = beta^T X + eps with X | (M = m) Gaussian.

    In the MCAR case a single (mu, Sigma) pair is shared across patterns.
    ``pattern_models`` optionally overrides (mu, Sigma) per mask key for
    pattern-mixture setups.
    """

    beta: np.ndarray
    sigma2_eps: float
    mu: np.ndarray
    Sigma: np.ndarray
    pattern_models: dict[int, tuple[np.ndarray, np.ndarray]] | None = None
    _factors: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float)
        mu = np.array(self.mu, dtype=float)
        Sigma = np.array(self.Sigma, dtype=float)
        d = beta.shape[0]
        if beta.ndim != 1 or mu.shape != (d,) or Sigma.shape != (d, d):
            raise DimensionError("beta, mu, Sigma must share one dimension d")
        if self.sigma2_eps <= 0:
            raise ConfigurationError("noise variance must be positive")
        _check_spd(Sigma)
        if self.pattern_models is not None:
            for key, (mu_m, Sigma_m) in self.pattern_models.items():
                mu_m = np.asarray(mu_m, dtype=float)
                Sigma_m = np.asarray(Sigma_m, dtype=float)
                if mu_m.shape != (d,) or Sigma_m.shape != (d, d):
                    raise DimensionError(f"pattern model {key} has wrong shape")
                _check_spd(Sigma_m)
        for a in (beta, mu, Sigma):
            a.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    def _moments_for(self, m: Mask) -> tuple[np.ndarray, np.ndarray]:
        if self.pattern_models is not None and m.key in self.pattern_models:
            mu_m, Sigma_m = self.pattern_models[m.key]
            return np.asarray(mu_m, dtype=float), np.asarray(Sigma_m, dtype=float)
        return self.mu, self.Sigma

    def _pattern_factors(self, m: Mask) -> _PatternFactors:
        got = self._factors.get(m.key)
        if got is not None:
            return got
        mu, Sigma = self._moments_for(m)
        A, Sigma_cond = _solve_observed_block(Sigma, m)
        b_obs = self.beta[m.obs]
        b_mis = self.beta[m.mis]
        w = b_obs + A.T @ b_mis
        const = float(b_mis @ (mu[m.mis] - A @ mu[m.obs]))
        variance = float(b_mis @ Sigma_cond @ b_mis) + self.sigma2_eps
        out = _PatternFactors(w, const, max(variance, self.sigma2_eps))
        self._factors[m.key] = out
        return out


def _check_spd(Sigma: np.ndarray) -> None:
    if not np.allclose(Sigma, Sigma.T, atol=1e-10):
        raise ConfigurationError("covariance must be symmetric")
    smallest = float(np.linalg.eigvalsh(Sigma)[0])
    if smallest <= 1e-10:
        raise ConfigurationError(
            f"covariance must be positive definite (min eigenvalue {smallest:.3e})"
        )


def glm_predictive(
    glm: GaussianLinearModel, x_obs: np.ndarray, m: Mask
) -> ConditionalGaussian:
    """Predictive law of Y given X_obs = x_obs under pattern m."""
    if m.d != glm.d:
        raise DimensionError("mask length does not match the model dimension")
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.shape != (m.obs.size,):
        raise DimensionError(
            f"expected {m.obs.size} observed values, got {x_obs.shape}"
        )
    f = glm._pattern_factors(m)
    return ConditionalGaussian(mean=float(f.w @ x_obs + f.const), variance=f.variance)


def oracle_interval(
    glm: GaussianLinearModel, x_obs: np.ndarray, m: Mask, alpha: float
) -> PredictiveSet:
    """Shortest 1-alpha predictive interval: mean +/- z_{1-alpha/2} * sd."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in (0, 1], got {alpha}")
    pred = glm_predictive(glm, x_obs, m)
    if alpha == 1.0:
        return PredictiveSet.interval(pred.mean, pred.mean)
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(pred.variance)
    return PredictiveSet.interval(pred.mean - half, pred.mean + half)


def interquantile_glm(
    glm: GaussianLinearModel,
    x_obs: np.ndarray,
    m: Mask,
    beta_level: float,
    gamma_level: float,
) -> float:
    """Distance between the gamma and beta predictive quantiles.

    For a Gaussian predictive law this is (z_gamma - z_beta) * sd; it does
    not depend on x_obs, which is accepted for interface symmetry.
    """
    if not beta_level <= 0.5 <= gamma_level:
        raise ConfigurationError(
            f"need beta_level <= 1/2 <= gamma_level, got ({beta_level}, {gamma_level})"
        )
    pred = glm_predictive(glm, x_obs, m)
    if beta_level == gamma_level:
        return 0.0
    z_gamma = normal_quantile(gamma_level) if gamma_level < 1 else math.inf
    z_beta = normal_quantile(beta_level) if beta_level > 0 else -math.inf
    return (z_gamma - z_beta) * math.sqrt(pred.variance)


def variance_isotone_check(Sigma: np.ndarray, m: Mask, m2: Mask) -> float:
    """Certificate that conditioning on fewer coordinates inflates variance.

    For nested patterns m <= m2, returns the smallest eigenvalue of

        Sigma_cond(m2) - pad(Sigma_cond(m))

    where pad embeds the smaller conditional covariance into the mis(m2)
    index order with zeros elsewhere. A value >= -1e-8 certifies the
    positive-semidefinite ordering at float tolerance.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if not mask_subset(m, m2):
        raise ConfigurationError("patterns must be nested: mask_subset(m, m2)")
    if Sigma.shape != (m.d, m.d):
        raise DimensionError("covariance shape does not match the mask length")
    _, big = _solve_observed_block(Sigma, m2)
    _, small = _solve_observed_block(Sigma, m)
    padded = np.zeros_like(big)
    pos = np.searchsorted(m2.mis, m.mis)
    padded[np.ix_(pos, pos)] = small
    diff = big - padded
    if diff.shape == (0, 0):
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0])


class HardnessBound(NamedTuple):
    delta: float
    loose_bound: float  # rho * sqrt(n + 1)


def hardness_delta(rho: float, n: int, variant: str = "general") -> HardnessBound:
    """Hardness slack Delta_{m,n} for pattern probability rho and n points.

    Any distribution-free method must output uninformative sets on pattern m
    with probability at least 1 - alpha - Delta. The ``general`` form uses
    1 - rho^2/2 inside the power; ``y-ind-m`` (response independent of the
    mask) sharpens it to 1 - 2 rho^2 and requires rho <= 1/sqrt(2).
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigurationError(f"pattern probability must be in [0, 1], got {rho}")
    if n < 0 or int(n) != n:
        raise ConfigurationError(f"n must be a nonnegative integer, got {n}")
    if variant == "general":
        inner = 1.0 - rho * rho / 2.0
    elif variant == "y-ind-m":
        if rho > 1.0 / _SQRT2 + 1e-12:
            raise ConfigurationError(
                f"variant y-ind-m requires rho <= 1/sqrt(2), got {rho}"
            )
        inner = max(1.0 - 2.0 * rho * rho, 0.0)
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    val = 2.0 * (1.0 - inner ** (n + 1))
    val = min(max(val, 0.0), 2.0)
    return HardnessBound(math.sqrt(val), rho * math.sqrt(n + 1.0))


def hetero_model_variances(
    sigma2: float, tau2: float, beta: float
) -> tuple[float, float]:
    """Variance split of the heteroskedastic model Y = beta*X + X*xi.

    With X ~ N(0, sigma2) and xi ~ N(0, tau2) independent of the mask:
    returns (E[Var(Y | X, M=0)], Var(Y | M=1)) = (tau2*sigma2,
    (beta^2 + tau2)*sigma2). Averaged conditional variance when X is seen,
    total variance when it is hidden.
    """
    if sigma2 <= 0 or tau2 <= 0:
        raise ConfigurationError("variances must be positive")
    return tau2 * sigma2, (beta * beta + tau2) * sigma2
