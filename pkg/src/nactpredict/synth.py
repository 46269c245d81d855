"""Deterministic phantom cohorts with known deformations and label-coupled texture.

Each patient has a baseline volume with an ellipsoidal tumour inside an
ellipsoidal "breast", and an endpoint volume built in baseline space and then
warped by a smooth random field. At the endpoint the original tumour site is
replaced by treated tissue whose appearance depends on a latent response
score (coupled to the label), and a shrunken residual tumour with
label-independent texture is drawn at the same centre. Responders may have no
residual at all.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .longitudinal import Clinical, PatientRecord
from .registration import DisplacementField, save_field, smoothness_penalty, warp_nearest, warp_trilinear
from .volume import Mask3D, Volume3D, save_metaimage

# class-conditional marker rates, (PCR, no-PCR), from the cohort summary table
_SPAG5_RATE = (142 / 167, 153 / 431)
_ER_RATE = (66 / 167, 263 / 431)
_HER2_RATE = (92 / 167, 105 / 431)
_STAGE_PROBS = ((0.25, 0.40, 0.25, 0.10), (0.15, 0.35, 0.30, 0.20))


@dataclass
class SynthConfig:
    n_patients: int = 200
    dims: Tuple[int, int, int] = (48, 48, 48)
    seed: int = 0
    pcr_prevalence: float = 0.279
    disappear_fraction: float = 0.3
    shrink_responder: Tuple[float, float] = (0.45, 0.85)
    shrink_nonresponder: Tuple[float, float] = (0.45, 0.85)
    deformation_amplitude: float = 2.0  # voxels, max |u|
    deformation_smoothness: float = 6.0  # Gaussian sigma of the field, voxels
    field_smoothness_bound: float = 0.1  # cap on the true field's diffusion penalty
    texture_coupling: float = 1.0
    baseline_coupling: float = 0.3
    spag5_rate: Tuple[float, float] = _SPAG5_RATE
    er_rate: Tuple[float, float] = _ER_RATE
    her2_rate: Tuple[float, float] = _HER2_RATE
    missing_rate: float = 0.0

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        if min(self.dims) < 32:
            raise ValueError("phantom dims must be >= 32")
        probs = [self.pcr_prevalence, self.disappear_fraction, self.missing_rate,
                 *self.spag5_rate, *self.er_rate, *self.her2_rate]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.field_smoothness_bound <= 0:
            raise ValueError("field_smoothness_bound must be positive")
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")


@dataclass
class PhantomTruth:
    field: DisplacementField
    site_mask: Mask3D  # baseline tumour warped by the true field
    shrink: float
    response: float
    disappeared: bool
    breast_A: Mask3D
    breast_B: Mask3D
    smoothness: float = 0.0


@dataclass
class Phantom:
    record: PatientRecord
    truth: PhantomTruth


def _grid(dims):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")


def _ellipsoid(dims, centre, radii) -> np.ndarray:
    x, y, z = _grid(dims)
    r2 = ((x - centre[0]) / radii[0]) ** 2 + ((y - centre[1]) / radii[1]) ** 2 + ((z - centre[2]) / radii[2]) ** 2
    return (r2 <= 1.0).astype(np.uint8)


def _texture(rng, dims, corr_length: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(dims), corr_length, mode="wrap")
    return (n - n.mean()) / n.std()


def smooth_random_field(rng, dims, amplitude: float, sigma: float) -> DisplacementField:
    comps = [ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="wrap") for _ in range(3)]
    u = np.stack(comps)
    peak = np.sqrt(np.max(np.sum(u * u, axis=0)))
    if peak > 0:
        u *= amplitude / peak
    return DisplacementField(u)


def _labels(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    n_pos = int(round(cfg.pcr_prevalence * cfg.n_patients))
    y = np.zeros(cfg.n_patients, dtype=int)
    y[:n_pos] = 1
    return rng.permutation(y)


def _clinical(rng, label: int, cfg: SynthConfig) -> Clinical:
    k = 0 if label == 1 else 1
    er = int(rng.random() < cfg.er_rate[k])
    her2 = int(rng.random() < cfg.her2_rate[k])
    spag5 = int(rng.random() < cfg.spag5_rate[k])
    stage = int(rng.choice(4, p=_STAGE_PROBS[k]) + 1)
    values = dict(er=er, her2=her2, spag5=spag5, tnm_stage=stage)
    if cfg.missing_rate > 0:
        for key in list(values):
            if rng.random() < cfg.missing_rate:
                values[key] = None
    return Clinical(**values)


def generate_patient(cfg: SynthConfig, index: int, label: int) -> Phantom:
    rng = np.random.default_rng([cfg.seed, index])
    dims = cfg.dims
    D = np.array(dims, dtype=np.float64)

    breast_centre = D / 2 + rng.uniform(-0.03, 0.03, 3) * D
    breast_radii = D * rng.uniform(0.36, 0.42, 3)
    breast = _ellipsoid(dims, breast_centre, breast_radii)
    tissue = ndimage.gaussian_filter(rng.standard_normal(dims), D.min() / 10, mode="nearest")
    tissue = (tissue - tissue.mean()) / tissue.std()

    tumour_radii = D * rng.uniform(0.09, 0.13, 3)
    tumour_centre = breast_centre + rng.uniform(-0.12, 0.12, 3) * D
    tumour = _ellipsoid(dims, tumour_centre, tumour_radii)

    # baseline: weakly label-coupled tumour texture
    aggressiveness = rng.normal(cfg.baseline_coupling * label, 1.0)
    corr_a = float(np.clip(1.0 + 0.25 * aggressiveness, 0.5, 2.0))
    vol_a = 5.0 + breast * (60.0 + 12.0 * tissue)
    vol_a = np.where(tumour == 1, 140.0 + 20.0 * _texture(rng, dims, corr_a), vol_a)
    vol_a = vol_a + rng.normal(0.0, 2.0, dims)

    # endpoint, in baseline space
    c = cfg.texture_coupling
    response = float(rng.beta(2.0 + 3.0 * c * label, 2.0 + 3.0 * c * (1 - label)))
    site_corr = 1.0 + 2.0 * response
    site = 140.0 - 60.0 * response + (20.0 - 8.0 * response) * _texture(rng, dims, site_corr)
    lo, hi = cfg.shrink_responder if label == 1 else cfg.shrink_nonresponder
    shrink = float(rng.uniform(lo, hi))
    disappeared = bool(label == 1 and rng.random() < cfg.disappear_fraction)
    residual = np.zeros(dims, dtype=np.uint8) if disappeared else _ellipsoid(dims, tumour_centre, tumour_radii * shrink)
    residual &= tumour
    residual_corr = float(rng.uniform(0.8, 1.4))
    pre_b = 5.0 + breast * (60.0 + 12.0 * tissue)
    pre_b = np.where(tumour == 1, site, pre_b)
    pre_b = np.where(residual == 1, 140.0 + 20.0 * _texture(rng, dims, residual_corr), pre_b)
    gain = rng.uniform(0.85, 1.15)
    pre_b = gain * pre_b + rng.normal(0.0, 2.0, dims)

    u = smooth_random_field(rng, dims, cfg.deformation_amplitude, cfg.deformation_smoothness)
    penalty = smoothness_penalty(u)
    if penalty > cfg.field_smoothness_bound:
        # the penalty is quadratic in u
        u = DisplacementField(u.data * np.sqrt(cfg.field_smoothness_bound / penalty))
        penalty = smoothness_penalty(u)
    vol_b = warp_trilinear(Volume3D(pre_b), u)
    mask_b = warp_nearest(Mask3D(residual), u)
    mask_a = Mask3D(tumour)
    breast_a = Mask3D(breast)

    record = PatientRecord(
        id=f"P{index:04d}",
        volume_A=Volume3D(vol_a),
        mask_A=mask_a,
        volume_B=vol_b,
        mask_B=mask_b,
        clinical=_clinical(rng, label, cfg),
        label=int(label),
        guide_A=breast_a,
        guide_B=warp_nearest(breast_a, u),
    )
    truth = PhantomTruth(
        field=u,
        site_mask=warp_nearest(mask_a, u),
        shrink=shrink,
        response=response,
        disappeared=disappeared,
        breast_A=breast_a,
        breast_B=record.guide_B,
        smoothness=penalty,
    )
    return Phantom(record, truth)


def generate(cfg: SynthConfig, threads: int = 1) -> List[Phantom]:
    labels = _labels(cfg)
    jobs = list(enumerate(labels))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda j: generate_patient(cfg, j[0], int(j[1])), jobs))
    return [generate_patient(cfg, i, int(y)) for i, y in jobs]


def write_cohort(phantoms: List[Phantom], out_dir: Union[str, os.PathLike], cfg: Optional[SynthConfig] = None) -> Path:
    """Persist volumes, masks and fields; returns the manifest path."""
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    manifest, truth = [], {}
    for ph in phantoms:
        r, t = ph.record, ph.truth
        paths = {}
        for key, grid in (("volume_A", r.volume_A), ("mask_A", r.mask_A), ("volume_B", r.volume_B),
                          ("mask_B", r.mask_B), ("guide_A", r.guide_A), ("guide_B", r.guide_B)):
            p = img_dir / f"{r.id}_{key}.mhd"
            save_metaimage(grid, p)
            paths[key] = str(p.relative_to(out))
        entry = {"id": r.id, **paths, **r.clinical.as_dict(), "label": r.label}
        manifest.append(entry)
        stem = img_dir / f"{r.id}_gtfield"
        save_field(t.field, stem)
        site = img_dir / f"{r.id}_site.mhd"
        save_metaimage(t.site_mask, site)
        truth[r.id] = {
            "field": str(stem.relative_to(out)),
            "site_mask": str(site.relative_to(out)),
            "shrink": t.shrink,
            "response": t.response,
            "disappeared": t.disappeared,
            "field_smoothness": t.smoothness,
        }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    meta = {"config": asdict(cfg) if cfg is not None else None, "patients": truth}
    (out / "ground_truth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return manifest_path
