from __future__ import annotations

from typing import Dict

import numpy as np

from ..volume import Mask3D, Volume3D
from .discretize import DEFAULT_BINS, EmptyRegionError, bin_values

NAMES = (
    "10Percentile",
    "90Percentile",
    "Maximum",
    "Mean",
    "Median",
    "MeanAbsoluteDeviation",
    "RootMeanSquared",
    "Entropy",
    "Kurtosis",
)


def first_order_values(x: np.ndarray, n_bins: int = DEFAULT_BINS) -> Dict[str, float]:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyRegionError("first-order statistics need at least one voxel")
    mean = x.mean()
    dev = x - mean
    m2 = np.mean(dev**2)
    m4 = np.mean(dev**4)
    bins, n_levels, _ = bin_values(x, n_bins)
    p = np.bincount(bins, minlength=n_levels + 1)[1:] / x.size
    p = p[p > 0]
    return {
        "10Percentile": float(np.percentile(x, 10)),
        "90Percentile": float(np.percentile(x, 90)),
        "Maximum": float(x.max()),
        "Mean": float(mean),
        "Median": float(np.median(x)),
        "MeanAbsoluteDeviation": float(np.mean(np.abs(dev))),
        "RootMeanSquared": float(np.sqrt(np.mean(x * x))),
        "Entropy": float(-np.sum(p * np.log2(p))) + 0.0,
        # plain fourth standardised moment; zero-variance regions map to 0
        "Kurtosis": float(m4 / m2**2) if m2 > 0 else 0.0,
    }


def first_order(v: Volume3D, m: Mask3D, n_bins: int = DEFAULT_BINS) -> Dict[str, float]:
    if v.dims != m.dims:
        raise ValueError(f"dims mismatch: {v.dims} vs {m.dims}")
    return first_order_values(v.data[m.data.astype(bool)], n_bins)
