"""Volume and mask containers, MetaImage I/O, bounding boxes and resampling.

Arrays are stored with shape ``(nx, ny, nz)`` and indexed ``data[x, y, z]``.
On disk the payload is x-fastest, i.e. Fortran order of that array.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]

_ELEMENT_TYPES = {"MET_FLOAT": np.dtype("<f4"), "MET_UCHAR": np.dtype("u1")}


class MetaImageError(ValueError):
    """Raised for malformed or unsupported MetaImage files."""


@dataclass(frozen=True)
class Volume3D:
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D grid, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        _check_spacing(self.spacing)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)


@dataclass(frozen=True)
class Mask3D:
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3D grid, got shape {data.shape}")
        if data.dtype != np.uint8:
            if not np.all((data == 0) | (data == 1)):
                raise ValueError("mask values must be 0 or 1")
            data = data.astype(np.uint8)
        elif data.size and data.max() > 1:
            raise ValueError("mask values must be 0 or 1")
        _check_spacing(self.spacing)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)

    @property
    def count(self) -> int:
        return int(self.data.sum(dtype=np.int64))

    def is_empty(self) -> bool:
        return not self.data.any()

    @classmethod
    def empty_like(cls, other: Union["Volume3D", "Mask3D"]) -> "Mask3D":
        return cls(np.zeros(other.dims, dtype=np.uint8), other.spacing)


Grid = Union[Volume3D, Mask3D]


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive voxel-index box."""

    min: Dims
    max: Dims

    @property
    def shape(self) -> Dims:
        return tuple(b - a + 1 for a, b in zip(self.min, self.max))

    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(a, b + 1) for a, b in zip(self.min, self.max))


def _check_spacing(spacing):
    if len(spacing) != 3 or not all(float(s) > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")


# ---------------------------------------------------------------------------
# MetaImage I/O
# ---------------------------------------------------------------------------


def _parse_header(path: Path) -> dict:
    header = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise MetaImageError(f"{path}:{lineno}: expected 'Key = Value', got {line!r}")
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
    return header


def load_metaimage(path: Union[str, os.PathLike]) -> Grid:
    """Read a ``.mhd`` header plus its raw payload.

    MET_FLOAT payloads come back as `Volume3D`, MET_UCHAR as `Mask3D`.
    """
    path = Path(path)
    header = _parse_header(path)
    for key in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if key not in header:
            raise MetaImageError(f"{path}: missing header key {key}")
    try:
        ndims = int(header["NDims"])
        dims = tuple(int(v) for v in header["DimSize"].split())
        spacing = tuple(float(v) for v in header.get("ElementSpacing", "1 1 1").split())
    except ValueError as exc:
        raise MetaImageError(f"{path}: malformed numeric header field ({exc})") from None
    if ndims != 3 or len(dims) != 3 or len(spacing) != 3:
        raise MetaImageError(f"{path}: only 3D images are supported (NDims={ndims}, DimSize={dims})")
    if min(dims) < 1:
        raise MetaImageError(f"{path}: DimSize must be positive, got {dims}")
    etype = header["ElementType"]
    if etype not in _ELEMENT_TYPES:
        raise MetaImageError(f"{path}: unsupported ElementType {etype}")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise MetaImageError(f"{path}: big-endian payloads are not supported")
    dtype = _ELEMENT_TYPES[etype]

    raw_path = path.parent / header["ElementDataFile"]
    payload = raw_path.read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise MetaImageError(
            f"{raw_path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    if etype == "MET_UCHAR":
        return Mask3D(data.copy(), spacing)
    return Volume3D(data.astype(np.float64), spacing)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_metaimage(grid: Grid, path: Union[str, os.PathLike]) -> None:
    """Write ``path`` (header) and a sibling ``.raw`` payload."""
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    if isinstance(grid, Mask3D):
        etype, payload = "MET_UCHAR", grid.data.astype(np.uint8)
    else:
        etype, payload = "MET_FLOAT", grid.data.astype("<f4")
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "DimSize = " + " ".join(str(n) for n in grid.dims),
        "ElementSpacing = " + " ".join(_fmt(s) for s in grid.spacing),
        f"ElementType = {etype}",
        f"ElementDataFile = {raw_path.name}",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    raw_path.write_bytes(payload.tobytes(order="F"))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def bounding_box(mask: Mask3D) -> Optional[BoundingBox]:
    """Tightest box around the 1-voxels, or ``None`` for an all-zero mask."""
    idx = np.nonzero(mask.data)
    if idx[0].size == 0:
        return None
    lo = tuple(int(i.min()) for i in idx)
    hi = tuple(int(i.max()) for i in idx)
    return BoundingBox(lo, hi)


def crop(grid: Grid, box: BoundingBox, margin: int = 0) -> Grid:
    """Sub-grid over ``box`` grown by ``margin`` voxels, clamped to the grid."""
    lo = [max(0, a - margin) for a in box.min]
    hi = [min(n - 1, b + margin) for b, n in zip(box.max, grid.dims)]
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    return type(grid)(grid.data[sl].copy(), grid.spacing)


# ---------------------------------------------------------------------------
# Resampling (corner-aligned: src = dst * (n_src - 1) / (n_dst - 1))
# ---------------------------------------------------------------------------


def _source_coords(n_src: int, n_dst: int) -> np.ndarray:
    if n_dst == 1:
        return np.zeros(1)
    return np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))


def _rescaled_spacing(grid: Grid, target: Sequence[int]) -> Spacing:
    return tuple(s * n / m for s, n, m in zip(grid.spacing, grid.dims, target))


def _check_target(target_dims) -> Dims:
    target = tuple(int(n) for n in target_dims)
    if len(target) != 3 or min(target) < 1:
        raise ValueError(f"target dims must be three positive ints, got {target_dims}")
    return target


def resample_array(data: np.ndarray, target_dims: Sequence[int], order: int = 1) -> np.ndarray:
    """Separable corner-aligned resampling of a raw 3D array.

    ``order=1`` is trilinear, ``order=0`` nearest neighbour (round half up).
    """
    target = _check_target(target_dims)
    out = np.asarray(data, dtype=np.float64)
    for axis, m in enumerate(target):
        n = out.shape[axis]
        if n == m:
            continue
        coords = _source_coords(n, m)
        if order == 0:
            idx = np.minimum(np.floor(coords + 0.5).astype(np.intp), n - 1)
            out = np.take(out, idx, axis=axis)
            continue
        i0 = np.minimum(np.floor(coords).astype(np.intp), n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        frac = coords - i0
        shape = [1, 1, 1]
        shape[axis] = m
        frac = frac.reshape(shape)
        out = np.take(out, i0, axis=axis) * (1.0 - frac) + np.take(out, i1, axis=axis) * frac
    return out


def resize_trilinear(volume: Volume3D, target_dims: Sequence[int]) -> Volume3D:
    target = _check_target(target_dims)
    if target == volume.dims:
        return Volume3D(volume.data.copy(), volume.spacing)
    data = resample_array(volume.data, target, order=1)
    # guard against round-off escaping the input range
    data = np.clip(data, volume.data.min(), volume.data.max())
    return Volume3D(data, _rescaled_spacing(volume, target))


def resize_nearest(mask: Mask3D, target_dims: Sequence[int]) -> Mask3D:
    target = _check_target(target_dims)
    if target == mask.dims:
        return Mask3D(mask.data.copy(), mask.spacing)
    data = resample_array(mask.data, target, order=0).astype(np.uint8)
    return Mask3D(data, _rescaled_spacing(mask, target))


def dilate(mask: Mask3D, iterations: int) -> Mask3D:
    """Binary dilation with the 26-neighbourhood."""
    if iterations <= 0 or mask.is_empty():
        return mask
    struct = np.ones((3, 3, 3), dtype=bool)
    data = ndimage.binary_dilation(mask.data.astype(bool), struct, iterations=iterations)
    return Mask3D(data.astype(np.uint8), mask.spacing)
