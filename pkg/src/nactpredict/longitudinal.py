"""Per-patient model rows from paired baseline (A) / endpoint (B) scans.

Three row layouts share the clinical block:

* ``without``: texture deltas (A-B)/A where B is measured over the endpoint
  tumour mask (all-zero texture when no tumour remains).
* ``with``: texture deltas where B is measured over the baseline tumour mask
  warped into endpoint space, i.e. the original tumour site.
* ``baseline``: timepoint-A shape and texture only.

Both longitudinal layouts take geometry from the true endpoint mask.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .radiomics import DEFAULT_BINS, SHAPE_FEATURES, TEXTURE_FEATURES, shape_features, texture_features
from .registration import DisplacementField, warp_nearest
from .volume import Mask3D, Volume3D, load_metaimage, resize_nearest

FeatureVector = Dict[str, float]

CLINICAL_FEATURES = ("clinical_er", "clinical_her2", "clinical_spag5", "clinical_tnm_stage")
BINARY_FEATURES = ("clinical_er", "clinical_her2", "clinical_spag5")

DELTA_FEATURES = tuple(f"delta_{n}" for n in TEXTURE_FEATURES)
ENDPOINT_SHAPE = tuple(f"B_{n}" for n in SHAPE_FEATURES)
LONGITUDINAL_SCHEMA = DELTA_FEATURES + ENDPOINT_SHAPE + CLINICAL_FEATURES
BASELINE_SCHEMA = tuple(f"A_{n}" for n in SHAPE_FEATURES + TEXTURE_FEATURES) + CLINICAL_FEATURES

FLAG_REGISTRATION_FAILED = "registration_failed"


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Clinical:
    er: Optional[int] = None
    her2: Optional[int] = None
    spag5: Optional[int] = None
    tnm_stage: Optional[int] = None

    def as_dict(self) -> dict:
        return {"er": self.er, "her2": self.her2, "spag5": self.spag5, "tnm_stage": self.tnm_stage}


@dataclass
class PatientRecord:
    id: str
    volume_A: Volume3D
    mask_A: Mask3D
    volume_B: Volume3D
    mask_B: Mask3D
    clinical: Clinical
    label: int
    guide_A: Optional[Mask3D] = None  # breast masks, used only to guide registration
    guide_B: Optional[Mask3D] = None


@dataclass
class FeatureRow:
    id: str
    features: FeatureVector
    label: int
    flags: Tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Feature combination
# ---------------------------------------------------------------------------


def delta(a: Mapping[str, float], b: Mapping[str, float]) -> FeatureVector:
    """Elementwise relative change (a - b) / a; 0 where |a| < 1e-12."""
    if list(a) != list(b):
        raise SchemaError("delta needs identical feature schemas")
    out = {}
    for k, av in a.items():
        out[k] = 0.0 if abs(av) < 1e-12 else (av - b[k]) / av
    return out


def encode_clinical(clinical: Clinical) -> FeatureVector:
    """Binary markers as 0/1, stage as an ordinal; missing values become NaN."""
    out = {}
    for name, key in zip(CLINICAL_FEATURES, ("er", "her2", "spag5", "tnm_stage")):
        value = getattr(clinical, key)
        if value is None:
            out[name] = math.nan
            continue
        value = int(value)
        if key == "tnm_stage":
            if not 1 <= value <= 4:
                raise ValueError(f"tnm_stage must be in 1..4, got {value}")
        elif value not in (0, 1):
            raise ValueError(f"{key} must be 0 or 1, got {value}")
        out[name] = float(value)
    return out


def _prefixed(prefix, fv):
    return {f"{prefix}{k}": v for k, v in fv.items()}


def warp_mask_to_endpoint(mask_a: Mask3D, field: DisplacementField, target_dims) -> Mask3D:
    """Baseline mask -> working grid -> warped -> endpoint native grid (nearest throughout)."""
    working = resize_nearest(mask_a, field.dims)
    warped = warp_nearest(working, field)
    return resize_nearest(warped, target_dims)


@dataclass
class PatientFeatures:
    """Raw per-timepoint measurements from which every row layout is assembled."""

    id: str
    label: int
    clinical: FeatureVector
    shape_A: FeatureVector
    texture_A: FeatureVector
    shape_B: FeatureVector
    texture_B: FeatureVector
    texture_B_site: Optional[FeatureVector] = None
    flags: Tuple[str, ...] = ()

    def row(self, layout: str) -> FeatureRow:
        if layout == "baseline":
            feats = {**_prefixed("A_", self.shape_A), **_prefixed("A_", self.texture_A)}
        elif layout in ("without", "with"):
            tex_b = self.texture_B
            if layout == "with" and self.texture_B_site is not None:
                tex_b = self.texture_B_site
            feats = {**_prefixed("delta_", delta(self.texture_A, tex_b)), **_prefixed("B_", self.shape_B)}
        else:
            raise ValueError(f"unknown row layout {layout!r}")
        feats.update(self.clinical)
        flags = self.flags if layout == "with" else ()
        return FeatureRow(self.id, feats, self.label, flags)


def measure_patient(p: PatientRecord, field: Optional[DisplacementField] = None,
                    n_bins: int = DEFAULT_BINS) -> PatientFeatures:
    flags = ()
    site = None
    if field is not None:
        warped = warp_mask_to_endpoint(p.mask_A, field, p.volume_B.dims)
        if warped.is_empty():
            flags = (FLAG_REGISTRATION_FAILED,)
        else:
            site = texture_features(p.volume_B, warped, n_bins)
    return PatientFeatures(
        id=p.id,
        label=int(p.label),
        clinical=encode_clinical(p.clinical),
        shape_A=shape_features(p.mask_A),
        texture_A=texture_features(p.volume_A, p.mask_A, n_bins),
        shape_B=shape_features(p.mask_B),
        texture_B=texture_features(p.volume_B, p.mask_B, n_bins),
        texture_B_site=site,
        flags=flags,
    )


def features_without_registration(p: PatientRecord, n_bins: int = DEFAULT_BINS) -> FeatureRow:
    return measure_patient(p, None, n_bins).row("without")


def features_with_registration(p: PatientRecord, field: DisplacementField,
                               n_bins: int = DEFAULT_BINS) -> FeatureRow:
    """Endpoint texture over the warped baseline site; falls back (flagged) if the warp is empty."""
    return measure_patient(p, field, n_bins).row("with")


# ---------------------------------------------------------------------------
# Cohort tables
# ---------------------------------------------------------------------------


@dataclass
class FeatureTable:
    ids: List[str]
    names: List[str]
    X: np.ndarray
    y: np.ndarray
    flags: List[Tuple[str, ...]] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.ids), len(self.names))
        self.y = np.asarray(self.y, dtype=int)
        if not self.flags:
            self.flags = [()] * len(self.ids)
        if len(set(self.ids)) != len(self.ids):
            raise SchemaError("duplicate patient ids in feature table")

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureRow]) -> "FeatureTable":
        rows = sorted(rows, key=lambda r: r.id)
        if not rows:
            raise SchemaError("no rows")
        names = list(rows[0].features)
        for r in rows:
            if list(r.features) != names:
                raise SchemaError(f"row {r.id} has a different feature schema")
        X = np.array([[r.features[n] for n in names] for r in rows], dtype=np.float64)
        return cls([r.id for r in rows], names, X, [r.label for r in rows], [tuple(r.flags) for r in rows])

    def select(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.names.index(n) for n in names]
        return FeatureTable(list(self.ids), list(names), self.X[:, idx], self.y.copy(), list(self.flags))

    def to_csv(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", *self.names, "label", "flags"])
            for pid, x, y, f in zip(self.ids, self.X, self.y, self.flags):
                w.writerow([pid, *(repr(float(v)) for v in x), int(y), ";".join(f)])

    @classmethod
    def from_csv(cls, path: Union[str, os.PathLike]) -> "FeatureTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[0] != "patient_id" or header[-2:] != ["label", "flags"]:
            raise SchemaError(f"{path}: expected patient_id, features..., label, flags columns")
        names = header[1:-2]
        ids, X, y, flags = [], [], [], []
        for lineno, r in enumerate(rows[1:], 2):
            if len(r) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} cells, got {len(r)}")
            ids.append(r[0])
            X.append([float(v) for v in r[1:-2]])
            y.append(int(r[-2]))
            flags.append(tuple(f for f in r[-1].split(";") if f))
        return cls(ids, names, np.array(X).reshape(len(ids), len(names)), y, flags)


# ---------------------------------------------------------------------------
# Manifest and precomputed embeddings
# ---------------------------------------------------------------------------

_MANIFEST_KEYS = ("id", "volume_A", "mask_A", "volume_B", "mask_B", "er", "her2", "spag5", "tnm_stage", "label")


@dataclass
class ManifestEntry:
    """File references for one patient; `load` reads the images."""

    id: str
    paths: Dict[str, Path]
    clinical: Clinical
    label: int

    def load(self) -> PatientRecord:
        grids = {k: load_metaimage(p) for k, p in self.paths.items()}
        for key in ("volume_A", "volume_B"):
            if not isinstance(grids[key], Volume3D):
                raise SchemaError(f"patient {self.id}: {key} must be a MET_FLOAT image")
        for key in ("mask_A", "mask_B", "guide_A", "guide_B"):
            if key in grids and not isinstance(grids[key], Mask3D):
                raise SchemaError(f"patient {self.id}: {key} must be a MET_UCHAR mask")
        return PatientRecord(self.id, grids["volume_A"], grids["mask_A"], grids["volume_B"], grids["mask_B"],
                             self.clinical, self.label, grids.get("guide_A"), grids.get("guide_B"))


def load_manifest(path: Union[str, os.PathLike]) -> List[ManifestEntry]:
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise SchemaError(f"{path}: manifest must be a JSON list")
    out, seen = [], set()
    for i, e in enumerate(entries):
        missing = [k for k in _MANIFEST_KEYS if k not in e]
        if missing:
            raise SchemaError(f"{path}: entry {i} missing keys {missing}")
        if e["id"] in seen:
            raise SchemaError(f"{path}: duplicate id {e['id']}")
        seen.add(e["id"])
        paths = {k: path.parent / e[k] for k in ("volume_A", "mask_A", "volume_B", "mask_B", "guide_A", "guide_B")
                 if e.get(k)}
        if int(e["label"]) not in (0, 1):
            raise SchemaError(f"{path}: entry {e['id']} label must be 0 or 1")
        clinical = Clinical(e["er"], e["her2"], e["spag5"], e["tnm_stage"])
        encode_clinical(clinical)  # range check
        out.append(ManifestEntry(str(e["id"]), paths, clinical, int(e["label"])))
    return out


def import_embeddings(path: Union[str, os.PathLike]) -> Dict[str, FeatureVector]:
    """Read precomputed deep-feature vectors: an id column then fixed-width numeric columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    names = header[1:]
    if not names:
        raise SchemaError(f"{path}: no feature columns")
    out: Dict[str, FeatureVector] = {}
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise SchemaError(f"{path}:{lineno}: ragged row ({len(r)} cells, header has {len(header)})")
        pid = r[0]
        if pid in out:
            raise SchemaError(f"{path}:{lineno}: duplicate id {pid}")
        try:
            values = [float(v) for v in r[1:]]
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in values):
            raise SchemaError(f"{path}:{lineno}: non-finite value")
        out[pid] = dict(zip(names, values))
    return out


def embedding_rows(emb_a: Mapping[str, FeatureVector], emb_b: Mapping[str, FeatureVector],
                   clinical: Mapping[str, Clinical], labels: Mapping[str, int]) -> List[FeatureRow]:
    """Delta rows from imported timepoint-A/B embeddings plus clinical covariates."""
    rows = []
    for pid in sorted(emb_a):
        if pid not in emb_b:
            raise SchemaError(f"patient {pid} has no endpoint embedding")
        feats = _prefixed("delta_", delta(emb_a[pid], emb_b[pid]))
        feats.update(encode_clinical(clinical[pid]))
        rows.append(FeatureRow(pid, feats, int(labels[pid])))
    return rows
