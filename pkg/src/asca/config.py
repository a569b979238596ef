"""Run configuration: one JSON document, validated in full before anything runs."""

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .calibration import DEFAULT_SAMPLES_PER_PROBE, DEFAULT_TOLERANCE
from .dataset import PROFILES
from .errors import ConfigError
from .signal import NOISE_PRESETS, TIMESHIFT_FRACTION
from .spectrogram import MASKS_PER_AXIS, MAX_MASK_FRACTION, MEL_PRESETS


@dataclass
class MelSection:
    n_mels: int = 64
    n_fft: int = 1024
    hop_length: int = 300
    sample_rate_hz: int = 44_100
    fmin: float = 0.0
    fmax: float | None = None
    target_width: int = 64


@dataclass
class SegmentationSection:
    expected_segments: int = 25
    energy_window: int = 1024
    energy_hop: int = 256
    min_separation: float = 0.1
    clip_length: int | None = None
    threshold: float = 0.1
    refine: bool = True


@dataclass
class AugmentSection:
    noise_eta: float = 0.0
    shift_fraction: float = 0.0
    mask_fraction: float = 0.1
    masks_per_axis: int = MASKS_PER_AXIS


@dataclass
class PathsSection:
    recordings: str | None = None
    corpus: str | None = None
    wordlist: str | None = None


@dataclass
class CorpusSection:
    n_digit: int = 100
    n_plain: int = 100
    fewshot_pool: int = 60
    strokes_per_key: int = 25


@dataclass
class NoiseSection:
    calibrate: bool = True
    presets: dict = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE
    eta_bounds: list = field(default_factory=lambda: [0.0, 0.2])
    samples_per_probe: int = DEFAULT_SAMPLES_PER_PROBE
    max_iterations: int = 30


@dataclass
class BackendSection:
    kinds: list = field(default_factory=lambda: ["echo", "dictionary", "oracle"])
    base_url: str | None = None
    model: str | None = None
    path: str = "/chat/completions"
    token_env: str | None = None
    timeout_s: float = 30.0
    max_concurrent: int = 4
    max_retries: int = 3
    backoff_s: float = 0.5
    temperature: float = 0.0
    k: int = 2
    audit_log: bool = False


@dataclass
class RunConfig:
    profile: str = "synthetic"
    variant: str = "baseline"
    seed: int = 0
    test_fraction: float = 0.2
    attack_path: str = "audio"
    mel: MelSection = field(default_factory=MelSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    paths: PathsSection = field(default_factory=PathsSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    backend: BackendSection = field(default_factory=BackendSection)

    def to_json(self):
        return asdict(self)

    def digest(self):
        return config_hash(self.to_json())


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def profile_defaults(profile, variant="baseline"):
    """Config dict seeded from the hyperparameter table for ``profile``."""
    if profile not in PROFILES:
        raise ConfigError([f"profile: unknown profile {profile!r}"])
    if variant not in ("baseline", "direct"):
        raise ConfigError([f"variant: expected 'baseline' or 'direct', got {variant!r}"])
    mel_key = profile if variant == "baseline" else f"{'phone' if profile == 'synthetic' else profile}-direct"
    mel = asdict(MEL_PRESETS[mel_key])
    mel["fmax"] = None
    # a centroid averages shifted images into a blur, so the synthetic fixture trains unshifted
    shift = TIMESHIFT_FRACTION.get(profile, 0.0)
    mask = MAX_MASK_FRACTION["baseline" if variant == "baseline" else "transformer"]
    presets = {}
    if profile in ("phone", "zoom"):
        presets = {level: NOISE_PRESETS[f"{profile}-{level}"] for level in ("low", "medium", "high")}
    return {
        "profile": profile,
        "variant": variant,
        "mel": mel,
        "augment": {"noise_eta": 0.0, "shift_fraction": shift, "mask_fraction": mask, "masks_per_axis": MASKS_PER_AXIS},
        "noise": {"calibrate": profile == "synthetic", "presets": presets},
    }


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "presets":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data, prefix, problems):
    if not isinstance(data, dict):
        problems.append(f"{prefix or 'config'}: expected an object")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            problems.append(f"{prefix}{key}: unknown key")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.", problems)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _validate(cfg, problems):
    def need(cond, msg):
        try:
            ok = cond()
        except (TypeError, ValueError, AttributeError):
            ok = False
        if not ok:
            problems.append(msg)

    need(lambda: cfg.profile in PROFILES, f"profile: unknown profile {cfg.profile!r}")
    need(lambda: cfg.variant in ("baseline", "direct"), f"variant: unknown variant {cfg.variant!r}")
    need(lambda: isinstance(cfg.seed, int) and 0 <= cfg.seed < 1 << 64, "seed: must be an unsigned 64-bit integer")
    need(lambda: isinstance(cfg.test_fraction, (int, float)) and 0 < cfg.test_fraction < 1, "test_fraction: must lie in (0, 1)")
    need(lambda: cfg.attack_path in ("audio", "channel"), "attack_path: expected 'audio' or 'channel'")
    for name in ("n_mels", "n_fft", "hop_length", "sample_rate_hz", "target_width"):
        v = getattr(cfg.mel, name, None)
        need(lambda: isinstance(v, int) and v > 0, f"mel.{name}: must be a positive integer")
    need(lambda: 0 <= cfg.augment.shift_fraction <= 1, "augment.shift_fraction: must lie in [0, 1]")
    need(lambda: 0 <= cfg.augment.mask_fraction <= 1, "augment.mask_fraction: must lie in [0, 1]")
    need(lambda: cfg.augment.noise_eta >= 0, "augment.noise_eta: must be >= 0")
    need(lambda: cfg.corpus.n_digit >= 0 and cfg.corpus.n_plain >= 0, "corpus: sentence counts must be >= 0")
    need(lambda: cfg.corpus.strokes_per_key >= 2, "corpus.strokes_per_key: must be >= 2")
    need(lambda: cfg.noise.tolerance > 0, "noise.tolerance: must be positive")
    need(lambda: isinstance(cfg.noise.eta_bounds, list) and len(cfg.noise.eta_bounds) == 2
         and 0 <= cfg.noise.eta_bounds[0] < cfg.noise.eta_bounds[1], "noise.eta_bounds: need [low, high] with 0 <= low < high")
    need(lambda: cfg.noise.samples_per_probe >= 1, "noise.samples_per_probe: must be >= 1")
    need(lambda: isinstance(cfg.noise.presets, dict), "noise.presets: expected an object")
    presets = cfg.noise.presets if isinstance(cfg.noise.presets, dict) else {}
    for level, eta in presets.items():
        need(lambda: level in ("low", "medium", "high"), f"noise.presets.{level}: unknown noise level")
        need(lambda: isinstance(eta, str) and eta in NOISE_PRESETS or isinstance(eta, (int, float)) and eta >= 0,
             f"noise.presets.{level}: expected a preset name or a non-negative number")
    need(lambda: cfg.noise.calibrate or cfg.noise.presets, "noise: either calibrate or give presets")
    need(lambda: isinstance(cfg.backend.kinds, list) and cfg.backend.kinds, "backend.kinds: expected a non-empty list")
    for kind in cfg.backend.kinds if isinstance(cfg.backend.kinds, list) else []:
        need(lambda: kind in ("remote", "oracle", "echo", "dictionary"), f"backend.kinds: unknown backend {kind!r}")
    if "remote" in cfg.backend.kinds:
        need(lambda: bool(cfg.backend.base_url and cfg.backend.model), "backend: remote needs base_url and model")
    need(lambda: cfg.backend.max_concurrent >= 1, "backend.max_concurrent: must be >= 1")
    need(lambda: cfg.backend.k >= 0, "backend.k: must be >= 0")
    if cfg.profile != "synthetic":
        need(lambda: cfg.paths.recordings is not None, "paths.recordings: required for recorded profiles")


def load_config(data):
    """Build a RunConfig from a dict (profile defaults filled in), reporting every problem at once."""
    if isinstance(data, dict) and "config" in data and "config_hash" in data:
        data = data["config"]  # a run manifest
    if not isinstance(data, dict):
        raise ConfigError(["config: expected a JSON object"])
    profile = data.get("profile", "synthetic")
    variant = data.get("variant", "baseline")
    try:
        merged = _merge(profile_defaults(profile, variant), data)
    except ConfigError:
        merged = data
    problems = []
    cfg = _build(RunConfig, merged, "", problems)
    _validate(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def read_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
    return load_config(data)
