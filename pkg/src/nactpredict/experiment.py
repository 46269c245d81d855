"""In-memory phantom experiments shared by scripts/ and the acceptance suite."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .evaluation import CVPlan, run_experiment
from .longitudinal import FeatureTable, PatientFeatures, measure_patient, warp_mask_to_endpoint
from .radiomics import DEFAULT_BINS
from .registration import RegistrationConfig, dice, register, warp_nearest
from .synth import Phantom, SynthConfig, _labels, generate, generate_patient
from .volume import Volume3D

# native 48^3 cohort phantoms; the finest levels dominate runtime, so they get fewer steps
COHORT_REGISTRATION = RegistrationConfig(working_dims=(48, 48, 48), iterations_per_level=(100, 80, 40, 20))

# 128^3 registration-recovery pairs with large smooth deformations
RECOVERY_PHANTOMS = SynthConfig(n_patients=10, dims=(128, 128, 128), seed=0, deformation_amplitude=12.0,
                                deformation_smoothness=16.0)
RECOVERY_REGISTRATION = RegistrationConfig(iterations_per_level=(100, 100, 50, 20))


@dataclass
class CohortRun:
    phantoms: List[Phantom]
    measured: List[PatientFeatures]
    tables: Dict[str, FeatureTable]
    site_dice: np.ndarray  # warped baseline mask vs true site, per patient
    seconds: float


def measure_cohort(phantoms: Sequence[Phantom], reg: RegistrationConfig = COHORT_REGISTRATION,
                   n_bins: int = DEFAULT_BINS, threads: int = 1) -> CohortRun:
    t0 = time.time()

    def one(ph):
        r = ph.record
        u = register(r.volume_A, r.volume_B, reg, r.guide_A, r.guide_B)
        site = warp_mask_to_endpoint(r.mask_A, u, r.volume_B.dims)
        return measure_patient(r, u, n_bins), dice(site, ph.truth.site_mask)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, phantoms))
    else:
        out = [one(ph) for ph in phantoms]
    measured = [m for m, _ in out]
    tables = {v: FeatureTable.from_rows([m.row(v) for m in measured]) for v in ("with", "without", "baseline")}
    return CohortRun(list(phantoms), measured, tables, np.array([d for _, d in out]), time.time() - t0)


def cohort_experiment(synth: SynthConfig = SynthConfig(), reg: RegistrationConfig = COHORT_REGISTRATION,
                      plan: CVPlan = CVPlan(), methods=("auto",), models=("lr",), threads: int = 1,
                      phantoms: Optional[List[Phantom]] = None):
    phantoms = phantoms if phantoms is not None else generate(synth, threads)
    run = measure_cohort(phantoms, reg, threads=threads)
    report = run_experiment(run.tables, plan, methods, models,
                            pairs=(("with", "without"), ("without", "baseline"), ("with", "baseline")),
                            threads=threads)
    return run, report


def registration_recovery(synth: SynthConfig = RECOVERY_PHANTOMS, reg: RegistrationConfig = RECOVERY_REGISTRATION,
                          threads: int = 1) -> List[dict]:
    """Register each phantom pair; Dice of the warped baseline breast mask against the endpoint one."""
    labels = _labels(synth)

    def one(i):
        ph = generate_patient(synth, i, int(labels[i]))
        r = ph.record
        t0 = time.time()
        u = register(r.volume_A, r.volume_B, reg, r.guide_A, r.guide_B)
        return {"id": r.id, "dice_before": dice(r.guide_A, r.guide_B),
                "dice_after": dice(warp_nearest(r.guide_A, u), r.guide_B),
                "site_dice": dice(warp_nearest(r.mask_A, u), ph.truth.site_mask),
                "seconds": time.time() - t0}

    idx = range(synth.n_patients)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, idx))
    return [one(i) for i in idx]


def translation_probe(shift: float = 3.0, n: int = 64, reg: Optional[RegistrationConfig] = None) -> np.ndarray:
    """Register two blob images offset by ``shift`` voxels along x; returns the median recovered offset."""
    x, y, z = np.meshgrid(*(np.arange(n, dtype=np.float64),) * 3, indexing="ij")
    c = n / 64.0

    def image(dx):
        xs = x + dx
        return (0.5 * xs / c + 80 * np.exp(-((xs - 30 * c) ** 2 + (y - 34 * c) ** 2 + (z - 30 * c) ** 2) / (2 * (8 * c) ** 2))
                + 40 * np.exp(-((xs - 40 * c) ** 2 + (y - 20 * c) ** 2 + (z - 40 * c) ** 2) / (2 * (5 * c) ** 2)))

    reg = reg or RegistrationConfig(working_dims=(n, n, n), mask_guided=False)
    u = register(Volume3D(image(0.0)), Volume3D(image(shift)), reg)
    return np.median(u.data.reshape(3, -1), axis=1)
