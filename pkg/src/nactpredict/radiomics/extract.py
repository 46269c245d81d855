from __future__ import annotations

import csv
import os
from typing import Dict, Iterable, Mapping, Tuple, Union

from ..volume import Mask3D, Volume3D, bounding_box, crop
from . import firstorder, geometry, texture
from .discretize import DEFAULT_BINS, discretize

FeatureVector = Dict[str, float]

SHAPE_FEATURES = tuple(f"shape_{n}" for n in geometry.NAMES)
TEXTURE_FEATURES = (
    tuple(f"firstorder_{n}" for n in firstorder.NAMES)
    + tuple(f"glcm_{n}" for n in texture.GLCM_NAMES)
    + tuple(f"glrlm_{n}" for n in texture.GLRLM_NAMES)
    + tuple(f"glszm_{n}" for n in texture.GLSZM_NAMES)
    + tuple(f"ngtdm_{n}" for n in texture.NGTDM_NAMES)
    + tuple(f"gldm_{n}" for n in texture.GLDM_NAMES)
)
FEATURE_NAMES: Tuple[str, ...] = SHAPE_FEATURES + TEXTURE_FEATURES


def _prefixed(prefix: str, values: Mapping[str, float]) -> FeatureVector:
    return {f"{prefix}_{k}": float(v) for k, v in values.items()}


def texture_features(v: Volume3D, m: Mask3D, n_bins: int = DEFAULT_BINS) -> FeatureVector:
    """First-order and all texture families over ``m``; zeros for an empty mask."""
    box = bounding_box(m)
    if box is None:
        return dict.fromkeys(TEXTURE_FEATURES, 0.0)
    v, m = crop(v, box), crop(m, box)
    region = discretize(v, m, n_bins)
    out: FeatureVector = {}
    out.update(_prefixed("firstorder", firstorder.first_order(v, m, n_bins)))
    out.update(_prefixed("glcm", texture.glcm_features(region)))
    out.update(_prefixed("glrlm", texture.glrlm_features(region)))
    out.update(_prefixed("glszm", texture.glszm_features(region)))
    out.update(_prefixed("ngtdm", texture.ngtdm_features(region)))
    out.update(_prefixed("gldm", texture.gldm_features(region)))
    return {k: out[k] for k in TEXTURE_FEATURES}


def shape_features(m: Mask3D) -> FeatureVector:
    box = bounding_box(m)
    if box is None:
        return dict.fromkeys(SHAPE_FEATURES, 0.0)
    return _prefixed("shape", geometry.shape(crop(m, box)))


def extract_all(v: Volume3D, texture_mask: Mask3D, geometry_mask: Mask3D,
                n_bins: int = DEFAULT_BINS) -> FeatureVector:
    """Shape of ``geometry_mask`` followed by intensity/texture over ``texture_mask``."""
    if v.dims != texture_mask.dims or v.dims != geometry_mask.dims:
        raise ValueError("volume and masks must share dims")
    out = shape_features(geometry_mask)
    out.update(texture_features(v, texture_mask, n_bins))
    return out


def write_feature_csv(rows: Iterable[Tuple[str, FeatureVector]], path: Union[str, os.PathLike],
                      names: Iterable[str] = FEATURE_NAMES) -> None:
    names = list(names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", *names])
        for pid, fv in rows:
            w.writerow([pid, *(repr(float(fv[n])) for n in names)])
