"""Command-line driver for the attack pipeline.

Each subcommand reads the artifacts of earlier stages from the run directory
``<out>/run-<config hash>`` and writes only its own outputs::

    segment    recordings -> dataset/manifest.json (+ clips)
    featurize  dataset -> features/features.amat, labels.json (+ PNG previews)
    train      dataset -> model/ (centroids + metadata)
    evaluate   model + dataset -> evaluation.json
    calibrate  model + dataset -> calibration.json (noise factor per level)
    attack     corpus + model -> transcripts/attack_<level>.jsonl
    correct    transcripts -> transcripts/corrected_<backend>_<level>.jsonl
    score      transcripts -> reports/<backend>_<level>.json
    report     reports -> report.txt, report.json
    pipeline   all of the above in order
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import attack as attack_mod
from .calibration import TARGET_ACCURACY, calibrate_eta
from .classifier import (AugmentSpec, estimate_confusion, evaluate as evaluate_model, extend_with_space,
                         featurize_clips, load_model, save_model, train_centroid)
from .config import load_config
from .correction import BackendConfig, correct_batch, make_backend
from .dataset import (Split, load_dataset, load_recordings, save_dataset, select_sentences, normalize_sentence,
                      stratified_split, synth_sentences, synth_wordlist, write_synth_recordings)
from .errors import AscaError, ConfigError
from .io import write_matrix, write_png
from .metrics import MetricReport, format_table, score_transcripts
from .rng import derive_seed, generator
from .signal import NOISE_PRESETS, NoiseSpec, SegmentationConfig
from .spectrogram import MelConfig

log = logging.getLogger("asca")

LEVELS = ("low", "medium", "high")
STAGES = ("segment", "featurize", "train", "evaluate", "calibrate", "attack", "correct", "score", "report")
# evaluation runs after calibration so it can report the calibrated levels too
PIPELINE_ORDER = ("segment", "featurize", "train", "calibrate", "evaluate", "attack", "correct", "score", "report")
_STAGE_STREAM = {name: i + 1 for i, name in enumerate(STAGES)}
BASELINE = "uncorrected"


def _dump(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


class Run:
    """Configuration plus the content-addressed run directory it owns."""

    def __init__(self, cfg, out, presets=()):
        self.cfg = cfg
        self.hash = cfg.digest()
        self.dir = Path(out) / f"run-{self.hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.preset_override = list(presets)

    def seed(self, stage):
        return derive_seed(self.cfg.seed, _STAGE_STREAM[stage])

    def path(self, *parts):
        return self.dir.joinpath(*parts)

    # -- configuration views
    def mel_config(self):
        return MelConfig(**asdict(self.cfg.mel))

    def seg_config(self):
        seg = asdict(self.cfg.segmentation)
        if seg["clip_length"] is None:
            seg["clip_length"] = self.mel_config().clip_length
        return SegmentationConfig(**seg)

    def augment(self):
        return AugmentSpec(seed=self.seed("train"), **asdict(self.cfg.augment))

    # -- manifest
    def record(self, stage, artifacts, extra=None):
        path = self.path("manifest.json")
        manifest = json.loads(path.read_text()) if path.exists() else {}
        manifest.update({"config": self.cfg.to_json(), "config_hash": self.hash, "seed": self.cfg.seed})
        manifest.setdefault("artifacts", {})[stage] = {k: str(Path(v).relative_to(self.dir)) for k, v in artifacts.items()}
        if extra:
            manifest.update(extra)
        _dump(path, manifest)

    # -- upstream artifacts
    def dataset(self):
        path = self.path("dataset", "manifest.json")
        if not path.exists():
            raise AscaError("no dataset in this run; run `segment` first")
        return load_dataset(path)

    def model(self):
        if not self.path("model", "model.json").exists():
            raise AscaError("no model in this run; run `train` first")
        return load_model(self.path("model"))

    def noise_levels(self):
        """Level -> eta, from --preset, config presets, or calibration.json."""
        if self.preset_override:
            levels = {}
            for name in self.preset_override:
                if name not in NOISE_PRESETS:
                    raise ConfigError([f"--preset: unknown preset {name!r}; known: {sorted(NOISE_PRESETS)}"])
                levels[name.rsplit("-", 1)[1]] = NOISE_PRESETS[name]
            return levels
        if not self.cfg.noise.calibrate:
            return {lvl: float(NOISE_PRESETS[v] if isinstance(v, str) else v)
                    for lvl, v in self.cfg.noise.presets.items()}
        path = self.path("calibration.json")
        if not path.exists():
            raise AscaError("noise levels are calibrated; run `calibrate` first")
        return {lvl: res["eta"] for lvl, res in json.loads(path.read_text())["levels"].items()}

    def sentences(self):
        """Evaluation, calibration-probe and few-shot sentence sets, pairwise disjoint."""
        c, probe_n = self.cfg.corpus, self.cfg.noise.samples_per_probe
        seed = self.seed("attack")
        if self.cfg.paths.corpus:
            lines = Path(self.cfg.paths.corpus).read_text(encoding="utf-8").splitlines()
        else:
            extra = probe_n + c.fewshot_pool
            lines = synth_sentences(c.n_digit + extra, c.n_plain + extra, seed)
        evaluation = select_sentences(lines, c.n_digit, c.n_plain, seed)
        taken = set(evaluation.sentences)
        rest = sorted({normalize_sentence(s) for s in lines} - taken - {""})
        rest = [rest[i] for i in generator(seed, 1).permutation(len(rest))]
        return list(evaluation.sentences), rest[:probe_n], rest[probe_n:probe_n + c.fewshot_pool]

    def wordlist(self):
        if self.cfg.paths.wordlist:
            return tuple(w for w in Path(self.cfg.paths.wordlist).read_text().split() if w)
        if self.cfg.paths.corpus:
            _, probe, fewshot = self.sentences()
            return tuple(sorted({w for s in probe + fewshot for w in s.split()}))
        return tuple(synth_wordlist())


# ---------------------------------------------------------------- stages

def cmd_segment(run, args):
    cfg = run.cfg
    seg = run.seg_config()
    if cfg.paths.recordings:
        recordings = Path(cfg.paths.recordings)
    else:
        recordings = run.path("recordings")
        write_synth_recordings(recordings, run.seed("segment"), cfg.corpus.strokes_per_key, cfg.mel.sample_rate_hz)
        seg = SegmentationConfig(**{**asdict(seg), "expected_segments": cfg.corpus.strokes_per_key})
    ds = load_recordings(recordings, cfg.profile, seg)
    manifest = save_dataset(ds, run.path("dataset"))
    run.record("segment", {"dataset": manifest})
    log.info("segmented %d clips from %s", len(ds), recordings)
    return {"items": len(ds)}


def cmd_featurize(run, args):
    ds = run.dataset()
    cfg = run.mel_config()
    images = featurize_clips(ds.clips(), cfg)
    out = run.path("features")
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "features.amat", images.reshape(len(ds), -1))
    _dump(out / "labels.json", {"labels": ds.labels, "shape": list(cfg.shape)})
    for i in range(min(getattr(args, "png", 0) or 0, len(ds))):
        write_png(out / f"{i:04d}_{ds.labels[i]}.png", images[i])
    run.record("featurize", {"features": out / "features.amat", "labels": out / "labels.json"})
    return {"features": list(images.shape)}


def cmd_train(run, args):
    ds = run.dataset()
    split = stratified_split(ds, run.cfg.test_fraction, run.seed("train"))
    model = train_centroid(ds, split, run.mel_config(), run.augment())
    save_model(model, run.path("model"))
    _dump(run.path("model", "split.json"), {"train": list(split.train), "test": list(split.test)})
    clean_acc, _ = evaluate_model(model, ds, split, NoiseSpec(0.0, run.seed("evaluate")))
    run.record("train", {"model": run.path("model", "model.json"), "split": run.path("model", "split.json")},
               {"clean_test_accuracy": clean_acc})
    log.info("clean test accuracy %.4f", clean_acc)
    return {"clean_test_accuracy": clean_acc}


def _split(run):
    data = json.loads(run.path("model", "split.json").read_text())
    return Split(tuple(data["train"]), tuple(data["test"]))


def cmd_evaluate(run, args):
    ds, model, split = run.dataset(), run.model(), _split(run)
    try:
        levels = run.noise_levels()
    except AscaError:
        levels = {}
    results = {}
    for name, eta in [("clean", 0.0)] + sorted(levels.items(), key=lambda kv: LEVELS.index(kv[0])):
        acc, cm = evaluate_model(model, ds, split, NoiseSpec(eta, run.seed("evaluate")))
        results[name] = {"eta": eta, "accuracy": acc, "confusion": cm.to_json()}
    path = _dump(run.path("evaluation.json"), results)
    run.record("evaluate", {"evaluation": path})
    return {k: v["accuracy"] for k, v in results.items()}


def cmd_calibrate(run, args):
    ds, model = run.dataset(), run.model()
    _, probe, _ = run.sentences()
    n = run.cfg.noise
    probe_fn = attack_mod.AudioProbe(model, ds)
    cache, levels = {}, {}
    for level, target in TARGET_ACCURACY.items():
        res = calibrate_eta(target, n.tolerance, n.eta_bounds, probe, probe_fn, run.seed("calibrate"),
                            n.max_iterations, raise_on_failure=False, cache=cache)
        if not res.converged:
            log.warning("level %s did not converge: accuracy %.4f for target %.2f", level, res.achieved_accuracy, target)
        levels[level] = res.to_json()
    path = _dump(run.path("calibration.json"), {"levels": levels, "probe_sentences": len(probe)})
    run.record("calibrate", {"calibration": path}, {"calibration": levels})
    return {lvl: r["eta"] for lvl, r in levels.items()}


def _attack(run, sentences, level, eta, seed):
    ds, model = run.dataset(), run.model()
    if run.cfg.attack_path == "audio":
        return attack_mod.AudioProbe(model, ds).transcripts(eta, sentences, seed, level)
    cm = extend_with_space(estimate_confusion(model, ds, eta, derive_seed(seed, 7), repeats=2))
    return attack_mod.attack_channel(sentences, cm, level, seed, eta)


def cmd_attack(run, args):
    evaluation, _, fewshot = run.sentences()
    artifacts, summary = {}, {}
    for level, eta in run.noise_levels().items():
        seed = derive_seed(run.seed("attack"), LEVELS.index(level))
        transcripts = _attack(run, evaluation, level, eta, seed)
        pool = _attack(run, fewshot, level, eta, derive_seed(seed, 1))
        artifacts[f"attack_{level}"] = attack_mod.write_transcripts(
            _mk(run.path("transcripts", f"attack_{level}.jsonl")), transcripts)
        artifacts[f"fewshot_{level}"] = attack_mod.write_transcripts(
            run.path("transcripts", f"fewshot_{level}.jsonl"), pool)
        summary[level] = attack_mod.mean_accuracy(transcripts)
    run.record("attack", artifacts)
    return summary


def _mk(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def _backend_config(run, kind):
    b = run.cfg.backend
    return BackendConfig(
        kind=kind, base_url=b.base_url, model=b.model, path=b.path, token_env=b.token_env,
        timeout_s=b.timeout_s, max_concurrent=b.max_concurrent, max_retries=b.max_retries,
        backoff_s=b.backoff_s, temperature=b.temperature,
        wordlist=run.wordlist() if kind == "dictionary" else (),
        audit_log=str(run.path("transcripts", f"audit_{kind}.jsonl")) if b.audit_log else None,
    )


def cmd_correct(run, args):
    artifacts = {}
    for level in run.noise_levels():
        transcripts = attack_mod.read_transcripts(run.path("transcripts", f"attack_{level}.jsonl"))
        pool = attack_mod.read_transcripts(run.path("transcripts", f"fewshot_{level}.jsonl"))
        for kind in run.cfg.backend.kinds:
            bcfg = _backend_config(run, kind)
            backend = make_backend(bcfg)
            concurrency = bcfg.max_concurrent if kind == "remote" else 1
            fixed = correct_batch(backend, transcripts, pool, run.cfg.backend.k,
                                  derive_seed(run.seed("correct"), LEVELS.index(level)), concurrency)
            artifacts[f"{kind}_{level}"] = attack_mod.write_transcripts(
                run.path("transcripts", f"corrected_{kind}_{level}.jsonl"), fixed)
    run.record("correct", artifacts)
    return {"files": len(artifacts)}


def _report_for(transcripts, target, backend, level, eta):
    failed = sum(1 for t in transcripts if target == "corrected" and t.corrected is None)
    if failed:
        # backend failures fall back to the uncorrected prediction and are counted
        transcripts = [replace(t, corrected=t.predicted) if t.corrected is None else t for t in transcripts]
    return score_transcripts(transcripts, target, {"backend": backend, "noise_level": level, "eta": eta,
                                                    "failed": failed})


def cmd_score(run, args):
    artifacts = {}
    for level, eta in run.noise_levels().items():
        attacked = attack_mod.read_transcripts(run.path("transcripts", f"attack_{level}.jsonl"))
        rep = _report_for(attacked, "predicted", BASELINE, level, eta)
        artifacts[f"{BASELINE}_{level}"] = _write_report(run, BASELINE, level, rep)
        for kind in run.cfg.backend.kinds:
            fixed = attack_mod.read_transcripts(run.path("transcripts", f"corrected_{kind}_{level}.jsonl"))
            artifacts[f"{kind}_{level}"] = _write_report(run, kind, level, _report_for(fixed, "corrected", kind, level, eta))
    run.record("score", artifacts)
    return {"reports": len(artifacts)}


def _write_report(run, backend, level, report):
    path = _mk(run.path("reports", f"{backend}_{level}.json"))
    path.write_text(report.dumps())
    return path


def cmd_report(run, args):
    reports = {}
    for path in sorted(run.path("reports").glob("*.json")):
        rep = MetricReport.from_json(json.loads(path.read_text()))
        reports[(rep.metadata["backend"], rep.metadata["noise_level"])] = rep
    if not reports:
        raise AscaError("no metric reports in this run; run `score` first")
    table = format_table(reports)
    run.path("report.txt").write_text(table)
    summary = {f"{b}/{lvl}": rep.summary for (b, lvl), rep in sorted(reports.items())}
    path = _dump(run.path("report.json"), summary)
    run.record("report", {"table": run.path("report.txt"), "summary": path})
    print(table, end="")
    return {"reports": len(reports)}


def cmd_pipeline(run, args):
    out = {}
    skip_calibration = not run.cfg.noise.calibrate or bool(run.preset_override)
    for stage in PIPELINE_ORDER:
        if stage == "calibrate" and skip_calibration:
            continue
        out[stage] = COMMANDS[stage](run, args)
    return out


COMMANDS = {
    "segment": cmd_segment, "featurize": cmd_featurize, "train": cmd_train, "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate, "attack": cmd_attack, "correct": cmd_correct, "score": cmd_score,
    "report": cmd_report, "pipeline": cmd_pipeline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="asca", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run config JSON (or a run manifest.json)")
        p.add_argument("--seed", type=int, help="override the run seed (unsigned 64-bit)")
        p.add_argument("--preset", action="append", default=[], help="noise preset, e.g. phone-low (repeatable)")
        p.add_argument("--out", default="runs", help="base output directory")
        p.add_argument("--backend", action="append", default=[], help="corrector backend kind (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "featurize":
            p.add_argument("--png", type=int, default=0, help="export the first N images as PNG")
    return parser


def resolve_config(args):
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if "config" in raw and "config_hash" in raw:
        raw = raw["config"]
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.backend:
        raw.setdefault("backend", {})["kinds"] = list(args.backend)
    return load_config(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(cfg, args.out, args.preset)
        result = COMMANDS[args.command](run, args)
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"status": "error", "error": "ConfigError", "problems": exc.problems}) + "\n")
        return 2
    except (AscaError, ValueError, OSError) as exc:
        sys.stderr.write(json.dumps({"status": "error", "error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    sys.stdout.write(json.dumps({"status": "ok", "command": args.command, "run_dir": str(run.dir),
                                 "result": result}, sort_keys=True, default=float) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
