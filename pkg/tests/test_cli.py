import csv
import json

import numpy as np
import pytest

from nactpredict.cli import ConfigError, config_from_dict, load_config, main
from nactpredict.volume import Mask3D, Volume3D, save_metaimage

SMALL = {
    "registration": {"working_dims": [32, 32, 32], "iterations_per_level": [20, 20, 10, 5]},
    "methods": ["chi2"],
    "models": ["lr"],
    "cv": {"seeds": [0, 1], "k_grid": [5, 10]},
    "synth": {"n_patients": 20, "dims": [32, 32, 32], "pcr_prevalence": 0.4},
}


def _write(path, d):
    path.write_text(json.dumps(d))
    return path


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError, match="models\\[1\\]"):
        config_from_dict({"models": ["lr", "xgb"]})
    with pytest.raises(ConfigError, match="registration"):
        config_from_dict({"registration": {"levels": 3}})
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"colour": "red"})
    with pytest.raises(ConfigError, match="invalid JSON"):
        (tmp_path / "c.json").write_text("{")
        load_config(tmp_path / "c.json")


def test_manifest_resolved_relative_to_config(tmp_path):
    (tmp_path / "m.json").write_text("[]")
    cfg = load_config(_write(tmp_path / "c.json", {"manifest": "m.json"}))
    assert cfg.manifest == str(tmp_path / "m.json")


def test_unknown_model_nonzero_exit(tmp_path, capsys):
    code = main(["train-eval", "--config", str(_write(tmp_path / "c.json", {"models": ["xgb"]})),
                 "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code != 0 and "models[0]" in err and "xgb" in err


def test_missing_features_nonzero_exit(tmp_path, capsys):
    assert main(["train-eval", "--out", str(tmp_path)]) != 0
    assert "features_with.csv" in capsys.readouterr().err


def test_register_identical_volumes_logs_unit_dice(tmp_path):
    rng = np.random.default_rng(0)
    vol = Volume3D(100 + 10 * rng.normal(size=(32, 32, 32)))
    m = np.zeros((32, 32, 32), np.uint8)
    m[10:20, 12:22, 8:18] = 1
    for key, grid in (("vA", vol), ("vB", vol), ("mA", Mask3D(m)), ("mB", Mask3D(m))):
        save_metaimage(grid, tmp_path / f"{key}.mhd")
    _write(tmp_path / "manifest.json", [{"id": "X1", "volume_A": "vA.mhd", "mask_A": "mA.mhd", "volume_B": "vB.mhd",
                                         "mask_B": "mB.mhd", "er": 1, "her2": 0, "spag5": 1, "tnm_stage": 2,
                                         "label": 1}])
    cfg = _write(tmp_path / "c.json", {"manifest": "manifest.json", **{k: SMALL[k] for k in ("registration",)}})
    assert main(["register", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "registration.csv") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["dice_before"]) == 1.0 and float(row["dice_after"]) == 1.0
    assert (tmp_path / "o" / "fields" / "X1_field_ux.mhd").is_file()


@pytest.mark.slow
def test_pipeline_smoke_and_thread_determinism(tmp_path):
    cfg = _write(tmp_path / "c.json", SMALL)
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(report["rows"]) == 2 * 5 * 3  # seeds x folds x variants
    for name in ("features_with.csv", "features_without.csv", "features_baseline.csv", "registration.csv"):
        assert (tmp_path / "a" / name).is_file()
    assert main(["train-eval", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "3"]) == 0
    first = (tmp_path / "a" / "report.json").read_bytes()
    assert json.loads(first) == report
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    assert (tmp_path / "b" / "report.json").read_bytes() == first
