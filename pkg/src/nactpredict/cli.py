"""Batch pipeline: synth | register | extract | train-eval | pipeline.

Stages persist their outputs under ``--out`` so later stages can be rerun
without repeating registration:

    out/cohort/            synthetic cohort (synth)
    out/fields/            <id>_ux/_uy/_uz.mhd displacement fields (register)
    out/registration.csv   per-patient Dice before/after (register)
    out/features_*.csv     with / without / baseline feature tables (extract)
    out/report.json|csv    evaluation report (train-eval)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .evaluation import AUTO, CVPlan, EvalReport, run_experiment
from .longitudinal import (
    FeatureTable,
    ManifestEntry,
    SchemaError,
    load_manifest,
    measure_patient,
    warp_mask_to_endpoint,
)
from .models import MODEL_KINDS
from .radiomics import DEFAULT_BINS
from .registration import RegistrationConfig, dice, load_field, register, save_field
from .selection import SELECTION_METHODS
from .synth import SynthConfig, generate, write_cohort

log = logging.getLogger("nactpredict")

VARIANTS = ("with", "without", "baseline")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    manifest: Optional[str] = None
    out: str = "out"
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    n_bins: int = DEFAULT_BINS
    methods: Tuple[str, ...] = SELECTION_METHODS
    models: Tuple[str, ...] = MODEL_KINDS
    cv: CVPlan = field(default_factory=CVPlan)
    pairs: Tuple[Tuple[str, str], ...] = (("with", "without"), ("without", "baseline"))
    synth: SynthConfig = field(default_factory=SynthConfig)
    threads: int = 1

    def validate(self, need_manifest: bool = False) -> None:
        for i, m in enumerate(self.methods):
            if m not in SELECTION_METHODS and m != AUTO:
                raise ConfigError(f"config field 'methods[{i}]': unknown selection method {m!r}")
        for i, m in enumerate(self.models):
            if m not in MODEL_KINDS:
                raise ConfigError(f"config field 'models[{i}]': unknown model kind {m!r}")
        for i, pair in enumerate(self.pairs):
            if len(pair) != 2 or any(v not in VARIANTS for v in pair):
                raise ConfigError(f"config field 'pairs[{i}]': expected two of {VARIANTS}")
        if self.n_bins < 1:
            raise ConfigError("config field 'n_bins': must be >= 1")
        if self.threads < 1:
            raise ConfigError("config field 'threads': must be >= 1")
        if need_manifest:
            if not self.manifest:
                raise ConfigError("config field 'manifest': required for this subcommand")
            if not Path(self.manifest).is_file():
                raise ConfigError(f"config field 'manifest': file not found: {self.manifest}")

    def to_dict(self) -> dict:
        return asdict(self)


def _sub(cls, value, name):
    if isinstance(value, cls):
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"config field {name!r}: expected an object")
    unknown = set(value) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"config field {name!r}: unknown keys {sorted(unknown)}")
    try:
        return cls(**value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field {name!r}: {e}") from None


def config_from_dict(d: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = dict(d)
    if "registration" in kw:
        kw["registration"] = _sub(RegistrationConfig, kw["registration"], "registration")
    if "cv" in kw:
        kw["cv"] = _sub(CVPlan, kw["cv"], "cv")
    if "synth" in kw:
        kw["synth"] = _sub(SynthConfig, kw["synth"], "synth")
    for key in ("methods", "models"):
        if key in kw:
            if not isinstance(kw[key], list) or not kw[key]:
                raise ConfigError(f"config field {key!r}: expected a nonempty list")
            kw[key] = tuple(kw[key])
    if "pairs" in kw:
        kw["pairs"] = tuple(tuple(p) for p in kw["pairs"])
    if kw.get("manifest") and base_dir is not None and not os.path.isabs(kw["manifest"]):
        kw["manifest"] = str(base_dir / kw["manifest"])
    cfg = PipelineConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    try:
        return config_from_dict(d, path.parent)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


# ---------------------------------------------------------------- stages


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def stage_synth(cfg: PipelineConfig, out: Path) -> Path:
    phantoms = generate(cfg.synth, threads=cfg.threads)
    manifest = write_cohort(phantoms, out / "cohort", cfg.synth)
    log.info("synth: %d patients -> %s", len(phantoms), manifest)
    return manifest


def _field_stem(out: Path, pid: str) -> Path:
    return out / "fields" / f"{pid}_field"


def stage_register(cfg: PipelineConfig, out: Path, entries: List[ManifestEntry]) -> List[dict]:
    (out / "fields").mkdir(parents=True, exist_ok=True)

    def one(entry):
        p = entry.load()
        u = register(p.volume_A, p.volume_B, cfg.registration, p.guide_A, p.guide_B)
        save_field(u, _field_stem(out, p.id))
        warped = warp_mask_to_endpoint(p.mask_A, u, p.volume_B.dims)
        return {"id": p.id, "dice_before": dice(p.mask_A, p.mask_B), "dice_after": dice(warped, p.mask_B),
                "final_loss": u.history[-1][-1] if u.history and u.history[-1] else float("nan")}

    rows = _map(one, entries, cfg.threads)
    with open(out / "registration.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "dice_before", "dice_after", "final_loss"])
        for r in rows:
            w.writerow([r["id"], repr(r["dice_before"]), repr(r["dice_after"]), repr(r["final_loss"])])
            log.info("register %s: tumour-mask Dice %.4f -> %.4f", r["id"], r["dice_before"], r["dice_after"])
    return rows


def stage_extract(cfg: PipelineConfig, out: Path, entries: List[ManifestEntry]) -> Dict[str, FeatureTable]:
    def one(entry):
        p = entry.load()
        stem = _field_stem(out, p.id)
        if not Path(f"{stem}_ux.mhd").is_file():
            raise FileNotFoundError(f"no registration field for patient {p.id} at {stem}_ux.mhd; run 'register' first")
        return measure_patient(p, load_field(stem), cfg.n_bins)

    measured = _map(one, entries, cfg.threads)
    tables = {}
    for v in VARIANTS:
        tables[v] = FeatureTable.from_rows([m.row(v) for m in measured])
        tables[v].to_csv(out / f"features_{v}.csv")
    failed = [m.id for m in measured if m.flags]
    if failed:
        log.warning("registration produced an empty warped site for %s; endpoint mask used instead", failed)
    log.info("extract: %d patients, %d features (with/without), %d (baseline)", len(measured),
             len(tables["with"].names), len(tables["baseline"].names))
    return tables


def load_tables(out: Path) -> Dict[str, FeatureTable]:
    tables = {}
    for v in VARIANTS:
        p = out / f"features_{v}.csv"
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found; run 'extract' first")
        tables[v] = FeatureTable.from_csv(p)
    return tables


def stage_train_eval(cfg: PipelineConfig, out: Path, tables: Optional[Dict[str, FeatureTable]] = None) -> EvalReport:
    tables = tables if tables is not None else load_tables(out)
    needed = sorted({v for pair in cfg.pairs for v in pair} | {"with", "without"})
    report = run_experiment({v: tables[v] for v in needed}, cfg.cv, cfg.methods, cfg.models, cfg.pairs,
                            threads=cfg.threads)
    report.write(out)
    print(report.table())
    return report


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nactpredict", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=("synth", "register", "extract", "train-eval", "pipeline"))
    ap.add_argument("--config", help="pipeline config JSON")
    ap.add_argument("--out", help="output directory (overrides config 'out')")
    ap.add_argument("--seed", type=int, help="overrides the synth seed and offsets the CV seeds")
    ap.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.out:
        cfg.out = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.synth.seed = args.seed
        cfg.cv.seeds = tuple(args.seed + i for i in range(len(cfg.cv.seeds)))
    cfg.validate()
    return cfg


def run(cfg: PipelineConfig, command: str) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "synth":
        stage_synth(cfg, out)
        return 0
    if command == "pipeline" and not cfg.manifest:
        cfg.manifest = str(stage_synth(cfg, out))
    if command in ("register", "extract", "pipeline"):
        cfg.validate(need_manifest=True)
        entries = load_manifest(cfg.manifest)
        if command in ("register", "pipeline"):
            stage_register(cfg, out, entries)
        if command == "register":
            return 0
        tables = stage_extract(cfg, out, entries)
        if command == "extract":
            return 0
        stage_train_eval(cfg, out, tables)
        return 0
    stage_train_eval(cfg, out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return run(cfg, args.command)
    except (ConfigError, SchemaError, FileNotFoundError, ValueError, RuntimeError, OSError) as e:
        print(f"nactpredict {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
