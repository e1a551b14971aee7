"""Conformal prediction with missing covariates: mask-aware scores,
calibration subsampling, imputation, quantile regression, and Gaussian
linear model oracles for benchmarking coverage and length.
"""

from cpmda.core import (
    ConfigurationError,
    DimensionError,
    IncompleteDataset,
    Mask,
    NumericError,
    PredictiveSet,
    SplitIndices,
    mask_subset,
    obs_values,
    over_mask,
    split_train_cal,
)

__all__ = [
    "ConfigurationError",
    "DimensionError",
    "IncompleteDataset",
    "Mask",
    "NumericError",
    "PredictiveSet",
    "SplitIndices",
    "mask_subset",
    "obs_values",
    "over_mask",
    "split_train_cal",
]

__version__ = "0.1.0"
