from .discretize import DEFAULT_BINS, DiscretizedRegion, EmptyRegionError, discretize
from .extract import (
    FEATURE_NAMES,
    SHAPE_FEATURES,
    TEXTURE_FEATURES,
    extract_all,
    shape_features,
    texture_features,
    write_feature_csv,
)
from .firstorder import first_order
from .geometry import shape
from .texture import glcm_features, gldm_features, glrlm_features, glszm_features, ngtdm_features

__all__ = [
    "DEFAULT_BINS",
    "DiscretizedRegion",
    "EmptyRegionError",
    "FEATURE_NAMES",
    "SHAPE_FEATURES",
    "TEXTURE_FEATURES",
    "discretize",
    "extract_all",
    "first_order",
    "glcm_features",
    "gldm_features",
    "glrlm_features",
    "glszm_features",
    "ngtdm_features",
    "shape",
    "shape_features",
    "texture_features",
    "write_feature_csv",
]
