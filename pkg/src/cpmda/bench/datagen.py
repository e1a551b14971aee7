"""Synthetic data for the benchmark scenarios.

Features are Gaussian with mean one and equicorrelated covariance
phi * 11^T + (1 - phi) * I. The linear-model scenarios draw y = beta^T x + eps;
the y-dep-m scenario makes the response depend on the mask itself, which is
exactly what breaks mask-conditional validity for imputation pipelines.
"""

from __future__ import annotations

import numpy as np

from cpmda.core import ConfigurationError, IncompleteDataset, Mask, masks_to_array
from cpmda.missingness import apply_mechanism
from cpmda.oracle import GaussianLinearModel

from cpmda.bench.config import ExperimentConfig


def glm_covariance(d: int, phi: float) -> np.ndarray:
    if not 0.0 <= phi < 1.0:
        raise ConfigurationError(
            f"phi must be in [0, 1); phi = {phi} gives a singular covariance"
        )
    return phi * np.ones((d, d)) + (1.0 - phi) * np.eye(d)


def glm_model(config: ExperimentConfig) -> GaussianLinearModel:
    """The generating model as an oracle object (mean vector of ones)."""
    return GaussianLinearModel(
        beta=np.array(config.beta),
        sigma2_eps=config.sigma2_eps,
        mu=np.ones(config.d),
        Sigma=glm_covariance(config.d, config.phi),
    )


def gen_glm_dataset(
    config: ExperimentConfig, seed, n: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Complete features and responses: X ~ N(1, Sigma), y = beta^T x + eps."""
    rng = np.random.default_rng(seed)
    n = config.n_pool if n is None else n
    Sigma = glm_covariance(config.d, config.phi)
    L = np.linalg.cholesky(Sigma)
    X = 1.0 + rng.standard_normal((n, config.d)) @ L.T
    eps = rng.standard_normal(n) * np.sqrt(config.sigma2_eps)
    y = X @ np.array(config.beta) + eps
    return X, y


def ydepm_response(
    X: np.ndarray, bits: np.ndarray, eps: np.ndarray
) -> np.ndarray:
    """y = x1 1{m1=0} + 2 x1 1{m1=1} + 3 x2 1{m2=1, m3=1} + eps.

    Uses the underlying feature values whether or not they are masked; the
    mask enters the regression function directly.
    """
    m1 = bits[:, 0].astype(float)
    m23 = (bits[:, 1] & bits[:, 2]).astype(float)
    return X[:, 0] * (1.0 - m1) + 2.0 * X[:, 0] * m1 + 3.0 * X[:, 1] * m23 + eps


def gen_ydepm_dataset(
    config: ExperimentConfig, seed, n: int | None = None
) -> IncompleteDataset:
    """Masks are i.i.d. Bernoulli(0.2) per coordinate; the response follows
    the mask-dependent formula above."""
    if config.d != 3:
        raise ConfigurationError("the y-dep-m scenario is defined for d = 3")
    rng = np.random.default_rng(seed)
    n = config.n_pool if n is None else n
    Sigma = glm_covariance(3, config.phi)
    L = np.linalg.cholesky(Sigma)
    X = 1.0 + rng.standard_normal((n, 3)) @ L.T
    bits = rng.random((n, 3)) < 0.2
    eps = rng.standard_normal(n) * np.sqrt(config.sigma2_eps)
    y = ydepm_response(X, bits, eps)
    return IncompleteDataset(values=X, missing=bits, y=y)


def _draw_features(config: ExperimentConfig, rng, n: int) -> np.ndarray:
    Sigma = glm_covariance(config.d, config.phi)
    L = np.linalg.cholesky(Sigma)
    return 1.0 + rng.standard_normal((n, config.d)) @ L.T


def _size_masks(d: int, size: int, n: int, rng) -> np.ndarray:
    """Uniform masks of a fixed missing count: the law of M given its size
    under any exchangeable per-entry mechanism (MCAR in particular)."""
    bits = np.zeros((n, d), dtype=bool)
    for i in range(n):
        bits[i, rng.permutation(d)[:size]] = True
    return bits


TestGroup = tuple[np.ndarray, np.ndarray, np.ndarray]  # values, missing, y


def build_conditional_testset(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[tuple[str, str], TestGroup]:
    """Marginal and mask-conditional test groups, keyed by (kind, label).

    glm-mcar conditions on mask size (0 through d-1, the sizes that leave at
    least one coordinate observed); the mechanism scenarios and y-dep-m
    condition on the full pattern. Each conditional group has exactly
    n_per_pattern rows with the mask imposed.
    """
    rng = np.random.default_rng(rng)
    groups: dict[tuple[str, str], TestGroup] = {}
    beta = np.array(config.beta)
    sd_eps = np.sqrt(config.sigma2_eps)

    def glm_y(X: np.ndarray) -> np.ndarray:
        return X @ beta + rng.standard_normal(X.shape[0]) * sd_eps

    # marginal group: fresh rows through the scenario's own mask distribution
    n_m = config.n_test_marginal
    if config.scenario == "y-dep-m":
        X = _draw_features(config, rng, n_m)
        bits = rng.random((n_m, 3)) < 0.2
        y = ydepm_response(X, bits, rng.standard_normal(n_m) * sd_eps)
    else:
        X = _draw_features(config, rng, n_m)
        bits = masks_to_array(apply_mechanism(X, config.mechanism, rng))
        y = glm_y(X)
    groups[("marginal", "")] = (X, bits, y)

    n_p = config.n_per_pattern
    if config.scenario == "glm-mcar":
        for size in range(config.d):
            X = _draw_features(config, rng, n_p)
            bits = _size_masks(config.d, size, n_p, rng)
            groups[("size", str(size))] = (X, bits, glm_y(X))
    elif config.scenario == "glm-marginal-mechanism":
        mcols = config.mechanism.missing_cols
        for sub in range(1 << len(mcols)):
            bits_row = np.zeros(config.d, dtype=bool)
            for i, c in enumerate(mcols):
                if (sub >> i) & 1:
                    bits_row[c] = True
            X = _draw_features(config, rng, n_p)
            bits = np.tile(bits_row, (n_p, 1))
            key = str(Mask.from_bits(bits_row.astype(int)))
            groups[("pattern", key)] = (X, bits, glm_y(X))
    else:  # y-dep-m: the 7 patterns that leave at least one coordinate observed
        for sub in range(7):
            bits_row = np.array([(sub >> i) & 1 for i in range(3)], dtype=bool)
            X = _draw_features(config, rng, n_p)
            bits = np.tile(bits_row, (n_p, 1))
            y = ydepm_response(X, bits, rng.standard_normal(n_p) * sd_eps)
            groups[("pattern", str(Mask.from_bits(bits_row.astype(int))))] = (X, bits, y)
    return groups
