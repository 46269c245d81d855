"""Shape descriptors from voxel centres.

Max2DDiameterRow is the largest in-plane distance between boundary voxels that
share a y index; Max2DDiameterColumn the same for a shared x index.
"""

from __future__ import annotations

from typing import Dict

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import pdist

from ..volume import Mask3D
from .discretize import EmptyRegionError

NAMES = ("LeastAxisLength", "Flatness", "Maximum2DDiameterColumn", "Maximum2DDiameterRow")

_FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside the mask or grid."""
    mask = mask.astype(bool)
    interior = ndimage.binary_erosion(mask, _FACE_NEIGHBOURS, border_value=0)
    return mask & ~interior


def _max_planar_diameter(points: np.ndarray, axis: int) -> float:
    """points: (n, 4) rows of (ix, iy, iz) index + physical xyz columns 3:."""
    best = 0.0
    keys = points[:, axis]
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    phys = points[order, 3:]
    splits = np.flatnonzero(np.diff(keys)) + 1
    for group in np.split(phys, splits):
        if len(group) > 1:
            best = max(best, float(pdist(group).max()))
    return best


def shape(m: Mask3D) -> Dict[str, float]:
    data = m.data.astype(bool)
    idx = np.argwhere(data)
    if len(idx) == 0:
        raise EmptyRegionError("shape features need a non-empty mask")
    spacing = np.asarray(m.spacing)
    coords = idx * spacing
    centred = coords - coords.mean(axis=0)
    cov = centred.T @ centred / len(coords)
    eig = np.sort(np.clip(np.linalg.eigvalsh(cov), 0.0, None))[::-1]
    flatness = float(np.sqrt(eig[2] / eig[0])) if eig[0] > 0 else 0.0

    b_idx = np.argwhere(boundary_voxels(data))
    pts = np.hstack([b_idx, b_idx * spacing])
    return {
        "LeastAxisLength": float(4.0 * np.sqrt(eig[2])),
        "Flatness": flatness,
        "Maximum2DDiameterColumn": _max_planar_diameter(pts, 0),
        "Maximum2DDiameterRow": _max_planar_diameter(pts, 1),
    }
