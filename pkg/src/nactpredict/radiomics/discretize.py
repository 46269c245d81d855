from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..volume import Mask3D, Volume3D, bounding_box

DEFAULT_BINS = 32


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class DiscretizedRegion:
    """Grey levels of a masked region, cropped to the mask's bounding box.

    ``levels`` holds 0 outside the mask and a bin index in ``1..n_levels``
    inside it.
    """

    levels: np.ndarray
    n_levels: int
    edges: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    @property
    def n_voxels(self) -> int:
        return int(np.count_nonzero(self.levels))

    @property
    def mask(self) -> np.ndarray:
        return self.levels > 0


def bin_values(values: np.ndarray, n_bins: int):
    """Equal-width binning over [min, max]; returns (bins, n_levels, edges)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.ones(values.shape, dtype=np.int64), 1, np.array([lo, hi])
    bins = np.floor(n_bins * (values - lo) / (hi - lo)).astype(np.int64) + 1
    bins = np.minimum(bins, n_bins)
    edges = lo + (hi - lo) * np.arange(n_bins + 1) / n_bins
    return bins, n_bins, edges


def discretize(v: Volume3D, m: Mask3D, n_bins: int = DEFAULT_BINS) -> DiscretizedRegion:
    if v.dims != m.dims:
        raise ValueError(f"dims mismatch: {v.dims} vs {m.dims}")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    box = bounding_box(m)
    if box is None:
        raise EmptyRegionError("cannot discretize an empty region")
    sl = box.slices()
    inside = m.data[sl].astype(bool)
    bins, n_levels, edges = bin_values(v.data[sl][inside], n_bins)
    levels = np.zeros(inside.shape, dtype=np.int64)
    levels[inside] = bins
    return DiscretizedRegion(levels, n_levels, edges, v.spacing)
