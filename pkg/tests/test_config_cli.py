import json

import pytest

from asca.cli import main
from asca.config import RunConfig, load_config, profile_defaults, read_config
from asca.errors import ConfigError
from asca.metrics import MetricReport

SMALL = {"seed": 5, "corpus": {"n_digit": 4, "n_plain": 4, "fewshot_pool": 4, "strokes_per_key": 6},
         "noise": {"calibrate": False, "presets": {"low": 0.0, "high": 0.05}, "samples_per_probe": 4}}


def test_phone_defaults():
    cfg = load_config({"profile": "phone", "paths": {"recordings": "rec"}})
    assert (cfg.mel.n_mels, cfg.mel.n_fft, cfg.mel.hop_length) == (64, 1024, 300)
    assert cfg.augment.shift_fraction == 0.3 and cfg.augment.masks_per_axis == 2
    assert cfg.noise.presets == {"low": 0.012, "medium": 0.024, "high": 0.06}
    assert not cfg.noise.calibrate


def test_zoom_and_direct_defaults():
    assert load_config({"profile": "zoom", "paths": {"recordings": "r"}}).mel.hop_length == 226
    assert load_config({"profile": "zoom", "variant": "direct", "paths": {"recordings": "r"}}).mel.hop_length == 64
    assert profile_defaults("phone", "direct")["mel"]["n_mels"] == 224


def test_round_trip(tmp_path):
    cfg = load_config({"profile": "phone", "seed": 9, "paths": {"recordings": "rec"}})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_json()))
    again = read_config(path)
    assert again == cfg and again.digest() == cfg.digest()
    assert load_config({"config": cfg.to_json(), "config_hash": cfg.digest()}) == cfg


def test_all_problems_reported():
    with pytest.raises(ConfigError) as info:
        load_config({"bogus": 1, "mel": {"n_mels": -3, "wat": 2}, "seed": -1, "backend": {"kinds": ["magic"]}})
    problems = info.value.problems
    for needle in ("bogus: unknown key", "mel.wat: unknown key", "mel.n_mels", "seed", "magic"):
        assert any(needle in p for p in problems), needle


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError):
        read_config(path)


def test_defaults_are_valid():
    assert load_config({}) == load_config(RunConfig().to_json())


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["pipeline", "--config", str(cfg), "--out", str(root / "out")]) == 0
    (run_dir,) = (root / "out").iterdir()
    return run_dir


def test_pipeline_artifacts(small_run):
    for rel in ("dataset/manifest.json", "features/features.amat", "features/labels.json", "model/model.json",
                "model/split.json", "evaluation.json", "transcripts/attack_low.jsonl", "transcripts/fewshot_high.jsonl",
                "transcripts/corrected_dictionary_high.jsonl", "reports/uncorrected_low.json", "report.txt",
                "report.json", "manifest.json"):
        assert (small_run / rel).exists(), rel
    manifest = json.loads((small_run / "manifest.json").read_text())
    assert manifest["seed"] == 5 and small_run.name == f"run-{manifest['config_hash'][:12]}"
    for stage in ("segment", "featurize", "train", "evaluate", "attack", "correct", "score", "report"):
        assert stage in manifest["artifacts"]
    assert "calibrate" not in manifest["artifacts"]


def test_pipeline_reports(small_run):
    oracle = MetricReport.from_json(json.loads((small_run / "reports" / "oracle_high.json").read_text()))
    assert oracle.summary["char_accuracy"]["mean"] == 1.0
    assert oracle.metadata["backend"] == "oracle" and oracle.metadata["failed"] == 0
    table = (small_run / "report.txt").read_text()
    assert "1.000 ± 0.000" in table
    low = json.loads((small_run / "report.json").read_text())["uncorrected/low"]
    high = json.loads((small_run / "report.json").read_text())["uncorrected/high"]
    assert low["char_accuracy"]["mean"] > high["char_accuracy"]["mean"]
    line = json.loads((small_run / "transcripts" / "attack_low.jsonl").read_text().splitlines()[0])
    assert {"truth", "predicted", "noise_level", "eta", "seed"} <= set(line)


def test_stage_rerun_from_manifest(small_run, capsys):
    out = str(small_run.parent)
    assert main(["report", "--config", str(small_run / "manifest.json"), "--out", out]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith((small_run / "report.txt").read_text())


def test_config_error_exit(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mel": {"hop_length": 0}, "nope": True}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error" and err["error"] == "ConfigError" and len(err["problems"]) == 2


def test_missing_upstream_exit(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "segment" in json.loads(capsys.readouterr().err)["message"]


def test_unknown_preset_exit(small_run, capsys):
    code = main(["attack", "--config", str(small_run / "manifest.json"), "--out", str(small_run.parent),
                 "--preset", "phone-extreme"])
    assert code == 2
