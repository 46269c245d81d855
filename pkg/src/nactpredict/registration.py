"""Deformable registration of a baseline volume onto an endpoint volume.

The displacement field ``u`` maps target coordinates to source coordinates:
``warped(x) = source(x + u(x))``. It is estimated per image pair by minimising

    -ncc(warp(source, u), target, roi) + w_level * smoothness(u)
        [ - soft_dice(warp(source_guide, u), target_guide) ]

over a coarse-to-fine pyramid with backtracking gradient descent.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from . import _kernels
from .volume import Mask3D, Volume3D, dilate, load_metaimage, resample_array, save_metaimage

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DisplacementField:
    """Offsets in voxel units of the grid they were estimated on, shape (3, nx, ny, nz)."""

    data: np.ndarray
    history: Tuple[Tuple[float, ...], ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"displacement field must have shape (3, nx, ny, nz), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("displacement field contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape[1:])

    @classmethod
    def zeros(cls, dims) -> "DisplacementField":
        return cls(np.zeros((3,) + tuple(dims)))


@dataclass
class RegistrationConfig:
    levels: int = 4
    smoothness_weights: Tuple[float, ...] = (96.0, 48.0, 24.0, 16.0)  # coarse -> fine
    iterations_per_level: Union[int, Tuple[int, ...]] = 100
    step_size: float = 0.5  # voxels, largest per-iteration update at the current level
    mask_guided: bool = True
    working_dims: Tuple[int, int, int] = (128, 128, 128)
    roi_dilation: int = 3
    mask_weight: float = 1.0
    max_halvings: int = 10
    gradient_sigma: float = 2.0  # voxels; Gaussian preconditioning of the descent direction, 0 disables

    def __post_init__(self):
        self.smoothness_weights = tuple(float(w) for w in self.smoothness_weights)
        self.working_dims = tuple(int(n) for n in self.working_dims)
        if self.levels < 1 or len(self.smoothness_weights) != self.levels:
            raise ValueError("levels must equal the number of smoothness weights")
        if any(w <= 0 for w in self.smoothness_weights):
            raise ValueError("smoothness weights must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if isinstance(self.iterations_per_level, (list, tuple)):
            self.iterations_per_level = tuple(int(i) for i in self.iterations_per_level)
            if len(self.iterations_per_level) != self.levels:
                raise ValueError("iterations_per_level list must have one entry per level")
        if min(self.iterations()) < 0:
            raise ValueError("iterations_per_level must be non-negative")

    def iterations(self) -> Tuple[int, ...]:
        if isinstance(self.iterations_per_level, tuple):
            return self.iterations_per_level
        return (int(self.iterations_per_level),) * self.levels

    @classmethod
    def from_dict(cls, d: dict) -> "RegistrationConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown registration config keys: {sorted(unknown)}")
        return cls(**known)


# ---------------------------------------------------------------------------
# Similarity, regularisation, warping
# ---------------------------------------------------------------------------


def _check_dims(a, b):
    if tuple(a.shape[-3:]) != tuple(b.shape[-3:]):
        raise ValueError(f"dims mismatch: {a.shape[-3:]} vs {b.shape[-3:]}")


def _ncc_arrays(a: np.ndarray, b: np.ndarray, roi: Optional[np.ndarray]):
    """Return (ncc, d ncc / d a) for raw arrays; gradient is zero outside the roi."""
    if roi is not None:
        sel = roi.astype(bool)
        av, bv = a[sel], b[sel]
    else:
        av, bv = a.ravel(), b.ravel()
    if av.size == 0:
        return 0.0, np.zeros_like(a)
    A = av - av.mean()
    B = bv - bv.mean()
    saa = float(np.dot(A, A))
    sbb = float(np.dot(B, B))
    if saa <= 1e-300 or sbb <= 1e-300:
        return 0.0, np.zeros_like(a)
    denom = np.sqrt(saa * sbb)
    r = float(np.dot(A, B)) / denom
    g = B / denom - r * A / saa
    grad = np.zeros_like(a)
    if roi is not None:
        grad[sel] = g
    else:
        grad = g.reshape(a.shape)
    return r, grad


def ncc(a: Volume3D, b: Volume3D, roi: Optional[Mask3D] = None) -> float:
    """Global Pearson correlation of intensities over ``roi`` (whole grid if None)."""
    _check_dims(a.data, b.data)
    if roi is not None:
        _check_dims(a.data, roi.data)
    r, _ = _ncc_arrays(a.data, b.data, None if roi is None else roi.data)
    return float(np.clip(r, -1.0, 1.0))


def _smoothness_and_grad(u: np.ndarray, want_grad: bool = True):
    n_vox = int(np.prod(u.shape[1:]))
    norm = 1.0 / (3.0 * n_vox)
    total = 0.0
    grad = np.zeros_like(u) if want_grad else None
    for axis in (1, 2, 3):
        d = np.diff(u, axis=axis)
        total += float(np.sum(d * d))
        if want_grad:
            lo = [slice(None)] * 4
            hi = [slice(None)] * 4
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            grad[tuple(lo)] -= 2.0 * norm * d
            grad[tuple(hi)] += 2.0 * norm * d
    return total * norm, grad


def smoothness_penalty(u: DisplacementField) -> float:
    """Mean over voxels and components of the squared forward-difference gradient."""
    return _smoothness_and_grad(u.data, want_grad=False)[0]


def _warp_array(src: np.ndarray, u: np.ndarray, want_grad: bool = False):
    _check_dims(src, u)
    out, grad = _kernels.trilinear_sample(np.ascontiguousarray(src, dtype=np.float64),
                                          np.ascontiguousarray(u), want_grad)
    return (out, grad) if want_grad else out


def warp_trilinear(v: Volume3D, u: DisplacementField) -> Volume3D:
    _check_dims(v.data, u.data)
    return Volume3D(_warp_array(v.data, u.data), v.spacing)


def warp_nearest(m: Mask3D, u: DisplacementField) -> Mask3D:
    _check_dims(m.data, u.data)
    out = _kernels.nearest_sample(np.ascontiguousarray(m.data), np.ascontiguousarray(u.data))
    return Mask3D(out, m.spacing)


def dice(a: Mask3D, b: Mask3D) -> float:
    _check_dims(a.data, b.data)
    sa, sb = a.count, b.count
    if sa + sb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.data.astype(bool) & b.data.astype(bool)))
    return 2.0 * inter / (sa + sb)


def _soft_dice_and_grad(a: np.ndarray, b: np.ndarray):
    s = float(a.sum() + b.sum())
    if s <= 0:
        return 1.0, np.zeros_like(a)
    inter = float(np.sum(a * b))
    d = 2.0 * inter / s
    return d, 2.0 * b / s - d / s


# ---------------------------------------------------------------------------
# Objective at one pyramid level
# ---------------------------------------------------------------------------


@dataclass
class _Level:
    source: np.ndarray
    target: np.ndarray
    weight: float
    roi: Optional[np.ndarray] = None
    source_guide: Optional[np.ndarray] = None
    target_guide: Optional[np.ndarray] = None
    mask_weight: float = 1.0

    def loss(self, u: np.ndarray, want_grad: bool = False):
        if want_grad:
            warped, dwarp = _warp_array(self.source, u, True)
        else:
            warped = _warp_array(self.source, u)
        r, dr = _ncc_arrays(warped, self.target, self.roi)
        smooth, dsmooth = _smoothness_and_grad(u, want_grad)
        loss = -r + self.weight * smooth
        grad = None
        if want_grad:
            grad = -dr[None] * dwarp + self.weight * dsmooth
        if self.source_guide is not None:
            if want_grad:
                wm, dwm = _warp_array(self.source_guide, u, True)
            else:
                wm = _warp_array(self.source_guide, u)
            sd, dsd = _soft_dice_and_grad(wm, self.target_guide)
            loss -= self.mask_weight * sd
            if want_grad:
                grad -= self.mask_weight * dsd[None] * dwm
        return (loss, grad) if want_grad else loss


def registration_loss(source: Volume3D, target: Volume3D, u: DisplacementField, weight: float,
                      roi: Optional[Mask3D] = None, source_guide: Optional[Mask3D] = None,
                      target_guide: Optional[Mask3D] = None, mask_weight: float = 1.0):
    """Single-level objective and its analytic gradient with respect to ``u``."""
    level = _Level(
        source.data, target.data, weight,
        None if roi is None else roi.data,
        None if source_guide is None else source_guide.data.astype(np.float64),
        None if target_guide is None else target_guide.data.astype(np.float64),
        mask_weight,
    )
    return level.loss(u.data, want_grad=True)


def _direction(grad: np.ndarray, sigma: float) -> np.ndarray:
    # smoothing with a positive-definite kernel keeps this a descent direction
    if sigma > 0:
        grad = np.stack([ndimage.gaussian_filter(g, sigma, mode="nearest") for g in grad])
    norm = np.sqrt(np.max(np.sum(grad * grad, axis=0)))
    return grad / norm if norm > 0 else None


def _descend(level: _Level, u: np.ndarray, iterations: int, step: float, max_halvings: int,
             sigma: float = 0.0):
    loss, grad = level.loss(u, want_grad=True)
    if not np.isfinite(loss):
        raise RegistrationError("non-finite registration loss")
    history = [loss]
    alpha = step
    for _ in range(iterations):
        direction = _direction(grad, sigma)
        if direction is None:
            break
        accepted = False
        for _ in range(max_halvings + 1):
            trial = u - alpha * direction
            trial_loss = level.loss(trial)
            if not np.isfinite(trial_loss):
                raise RegistrationError("non-finite registration loss; step size diverged")
            if trial_loss < loss:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        u = trial
        loss, grad = level.loss(u, want_grad=True)
        history.append(loss)
        alpha = min(step, alpha * 1.5)
    return u, history


def _level_dims(working: Sequence[int], factor: int):
    return tuple(max(2, int(round(n / factor))) for n in working)


def _downsample(data: np.ndarray, dims, factor: int) -> np.ndarray:
    if factor > 1:
        data = ndimage.gaussian_filter(np.asarray(data, dtype=np.float64), sigma=0.5 * factor, mode="nearest")
    return resample_array(data, dims, order=1)


def upsample_field(u: np.ndarray, dims) -> np.ndarray:
    """Trilinear upsampling with offsets rescaled to the finer voxel units."""
    out = np.empty((3,) + tuple(dims))
    for c in range(3):
        n_src, n_dst = u.shape[c + 1], dims[c]
        scale = (n_dst - 1) / (n_src - 1) if n_src > 1 else 1.0
        out[c] = resample_array(u[c], dims, order=1) * scale
    return out


def register(source: Volume3D, target: Volume3D, cfg: Optional[RegistrationConfig] = None,
             source_mask_guide: Optional[Mask3D] = None,
             target_mask_guide: Optional[Mask3D] = None) -> DisplacementField:
    """Estimate the field aligning ``source`` to ``target`` at ``cfg.working_dims``.

    Inputs of other sizes are resized internally. The returned field carries the
    per-level loss history (one tuple per level).
    """
    cfg = cfg or RegistrationConfig()
    working = cfg.working_dims
    src = resample_array(source.data, working, order=1)
    tgt = resample_array(target.data, working, order=1)
    guided = cfg.mask_guided and source_mask_guide is not None and target_mask_guide is not None
    if guided:
        sg = resample_array(source_mask_guide.data, working, order=0)
        tg = resample_array(target_mask_guide.data, working, order=0)

    u = None
    history: List[Tuple[float, ...]] = []
    for level, (weight, iters) in enumerate(zip(cfg.smoothness_weights, cfg.iterations())):
        factor = 2 ** (cfg.levels - 1 - level)
        dims = _level_dims(working, factor) if factor > 1 else working
        lvl = _Level(_downsample(src, dims, factor), _downsample(tgt, dims, factor), weight,
                     mask_weight=cfg.mask_weight)
        if guided:
            lvl.source_guide = _downsample(sg, dims, factor)
            lvl.target_guide = _downsample(tg, dims, factor)
            union = Mask3D(((lvl.source_guide >= 0.5) | (lvl.target_guide >= 0.5)).astype(np.uint8))
            lvl.roi = dilate(union, cfg.roi_dilation).data
            if not lvl.roi.any():
                lvl.roi = None
        u = np.zeros((3,) + dims) if u is None else upsample_field(u, dims)
        u, hist = _descend(lvl, u, iters, cfg.step_size, cfg.max_halvings, cfg.gradient_sigma)
        log.debug("level %d dims %s: loss %.6f -> %.6f in %d steps", level, dims, hist[0], hist[-1], len(hist) - 1)
        history.append(tuple(hist))
    return DisplacementField(u, tuple(history))


# ---------------------------------------------------------------------------
# Field I/O
# ---------------------------------------------------------------------------


def save_field(u: DisplacementField, stem: Union[str, os.PathLike]) -> List[Path]:
    """Write ``<stem>_ux.mhd``, ``<stem>_uy.mhd``, ``<stem>_uz.mhd``."""
    stem = Path(stem)
    paths = []
    for c, suffix in enumerate(("_ux", "_uy", "_uz")):
        p = stem.with_name(stem.name + suffix + ".mhd")
        save_metaimage(Volume3D(u.data[c]), p)
        paths.append(p)
    return paths


def load_field(stem: Union[str, os.PathLike]) -> DisplacementField:
    stem = Path(stem)
    comps = []
    for suffix in ("_ux", "_uy", "_uz"):
        comps.append(load_metaimage(stem.with_name(stem.name + suffix + ".mhd")).data)
    return DisplacementField(np.stack(comps))
