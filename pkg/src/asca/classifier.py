"""Nearest-centroid keystroke classifier and the 37-symbol confusion channel.

Any object with a ``mel_config`` attribute and a ``predict_batch(images)``
method returning key indices (0..35, ordered a-z then 0-9) can stand in for
:class:`CentroidModel` in the attack and calibration code.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .dataset import ALPHABET, KEY_INDEX, KEYS
from .errors import AlphabetError, DimensionMismatchError
from .io import read_matrix, write_matrix
from .rng import generator
from .signal import add_noise_array, draw_shift, shift_array
from .spectrogram import MelConfig, MelSpectrogram, featurize, mask_array

ROW_TOLERANCE = 1e-9


class KeystrokeClassifier(Protocol):
    mel_config: MelConfig

    def predict_batch(self, images: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class AugmentSpec:
    """Training-time augmentation chain: noise -> shift -> mel -> mask."""

    noise_eta: float = 0.0
    shift_fraction: float = 0.0
    mask_fraction: float = 0.0
    masks_per_axis: int = 2
    seed: int = 0

    @property
    def active(self):
        return self.noise_eta > 0 or self.shift_fraction > 0 or (self.mask_fraction > 0 and self.masks_per_axis > 0)


def featurize_clips(clips, mel_cfg, augment=None):
    """Mel images for raw clips, applying ``augment`` per item in order."""
    clips = np.asarray(clips, dtype=np.float64)
    if augment is None or not augment.active:
        return featurize(clips, mel_cfg)
    rng = generator(augment.seed)
    prepared = np.empty_like(clips)
    for i, clip in enumerate(clips):
        x = add_noise_array(clip, augment.noise_eta, rng)
        prepared[i] = shift_array(x, draw_shift(x.size, augment.shift_fraction, rng))
    images = featurize(prepared, mel_cfg)
    if augment.mask_fraction > 0 and augment.masks_per_axis > 0:
        for image in images:
            mask_array(image, augment.mask_fraction, augment.masks_per_axis, rng)
    return images


@dataclass(frozen=True, eq=False)
class CentroidModel:
    centroids: np.ndarray
    mel_config: MelConfig
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        n_features = self.mel_config.n_mels * self.mel_config.target_width
        if c.shape != (len(KEYS), n_features):
            raise DimensionMismatchError(f"centroids must have shape {(len(KEYS), n_features)}, got {c.shape}")
        object.__setattr__(self, "centroids", c)

    def distances(self, images):
        x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        if x.shape[1] != self.centroids.shape[1]:
            raise DimensionMismatchError(f"feature length {x.shape[1]} != model {self.centroids.shape[1]}")
        sq = (x * x).sum(1)[:, None] - 2.0 * x @ self.centroids.T + (self.centroids ** 2).sum(1)[None, :]
        return np.sqrt(np.maximum(sq, 0.0))

    def predict_batch(self, images):
        # argmin returns the first minimum, i.e. the earliest label on ties
        return self.distances(images).argmin(axis=1)

    def as_linear(self):
        """Equivalent linear scorer: argmax(W x + b) is the nearest centroid."""
        return 2.0 * self.centroids, -(self.centroids ** 2).sum(1)


def train_centroid(ds, split, mel_cfg, augment_spec=None):
    labels = ds.label_indices()
    train = np.asarray(split.train, dtype=np.int64)
    counts = np.bincount(labels[train], minlength=len(KEYS)) if train.size else np.zeros(len(KEYS), int)
    empty = [KEYS[i] for i in np.flatnonzero(counts == 0)]
    if empty:
        raise ValueError(f"classes without training items: {empty}")
    features = featurize_clips(ds.clips(train), mel_cfg, augment_spec).reshape(train.size, -1)
    centroids = np.zeros((len(KEYS), features.shape[1]))
    np.add.at(centroids, labels[train], features)
    centroids /= counts[:, None]
    meta = {"train_items": int(train.size), "augment": asdict(augment_spec) if augment_spec else None}
    return CentroidModel(centroids, mel_cfg, meta)


def predict(m, spec):
    """(label, -distance) of the nearest centroid."""
    if not isinstance(spec, MelSpectrogram):
        raise TypeError("expected a MelSpectrogram")
    if spec.values.shape != m.mel_config.shape:
        raise DimensionMismatchError(f"spectrogram {spec.values.shape} != model {m.mel_config.shape}")
    d = m.distances(spec.values[None])[0]
    k = int(d.argmin())
    return KEYS[k], -float(d[k])


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Row-stochastic (true x predicted) matrix over ``labels``."""

    rows: np.ndarray
    labels: str = ALPHABET

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.float64)
        n = len(self.labels)
        if r.shape != (n, n):
            raise ValueError(f"confusion matrix must be {n}x{n}, got {r.shape}")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("confusion entries must be finite and non-negative")
        if np.max(np.abs(r.sum(1) - 1.0)) > ROW_TOLERANCE:
            raise ValueError("confusion rows must sum to 1")
        object.__setattr__(self, "rows", r)

    @property
    def diagonal(self):
        return np.diag(self.rows)

    def accuracy_for(self, text):
        """Expected per-character accuracy of ``text`` through this channel."""
        idx = _encode(text, self.labels)
        return float(self.diagonal[idx].mean()) if idx.size else 1.0

    def to_json(self):
        return {"labels": self.labels, "rows": self.rows.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["rows"]), obj["labels"])


def identity_channel(labels=ALPHABET):
    return ConfusionMatrix(np.eye(len(labels)), labels)


def confusion_from_predictions(true_idx, pred_idx):
    """36-class confusion matrix normalised by per-class counts."""
    counts = np.zeros((len(KEYS), len(KEYS)))
    np.add.at(counts, (np.asarray(true_idx), np.asarray(pred_idx)), 1.0)
    totals = counts.sum(1)
    missing = [KEYS[i] for i in np.flatnonzero(totals == 0)]
    if missing:
        raise ValueError(f"classes without test items: {missing}")
    return ConfusionMatrix(counts / totals[:, None], KEYS)


def noisy_predictions(model, clips, eta, rng):
    noisy = np.stack([add_noise_array(c, eta, rng) for c in clips]) if len(clips) else clips
    return model.predict_batch(featurize(noisy, model.mel_config))


def evaluate(m, ds, split, noise_spec):
    """Accuracy and 36x36 confusion on the test side after waveform noise."""
    test = np.asarray(split.test, dtype=np.int64)
    if test.size == 0:
        raise ValueError("empty test split")
    truth = ds.label_indices()[test]
    pred = noisy_predictions(m, ds.clips(test), noise_spec.eta, generator(noise_spec.seed))
    return float(np.mean(pred == truth)), confusion_from_predictions(truth, pred)


def estimate_confusion(model, ds, eta, seed, repeats=1):
    """36x36 confusion over every clip of ``ds``, each seen ``repeats`` times with fresh noise."""
    rng = generator(seed)
    truth = np.tile(ds.label_indices(), repeats)
    clips = ds.clips()
    pred = np.concatenate([noisy_predictions(model, clips, eta, rng) for _ in range(repeats)])
    return confusion_from_predictions(truth, pred)


def extend_with_space(cm36, mode="mean-diagonal"):
    """Add the SPACE symbol to a 36-class confusion matrix.

    SPACE is recognised with the mean per-class accuracy; its remaining mass is
    spread evenly over the 36 keys.  No key is ever predicted as SPACE.
    """
    if mode != "mean-diagonal":
        raise ValueError(f"unknown space mode {mode!r}")
    rows = np.asarray(cm36.rows if isinstance(cm36, ConfusionMatrix) else cm36, dtype=np.float64)
    n = len(KEYS)
    if rows.shape != (n, n) or np.any(rows < 0) or np.max(np.abs(rows.sum(1) - 1.0)) > ROW_TOLERANCE:
        raise ValueError("expected a row-stochastic 36x36 matrix")
    hit = float(np.mean(np.diag(rows)))
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = rows
    out[n, :n] = (1.0 - hit) / n
    out[n, n] = hit
    out /= out.sum(1, keepdims=True)
    return ConfusionMatrix(out, ALPHABET)


def _encode(text, labels):
    index = KEY_INDEX if labels == ALPHABET else {c: i for i, c in enumerate(labels)}
    try:
        return np.fromiter((index[c] for c in text), dtype=np.int64, count=len(text))
    except KeyError as exc:
        raise AlphabetError(f"character {exc.args[0]!r} is outside the channel alphabet") from None


def simulate_channel(cm, text, seed):
    """Substitute each character by a draw from its confusion row."""
    idx = _encode(text, cm.labels)
    if idx.size == 0:
        return ""
    u = generator(seed).random(idx.size)
    cumulative = np.cumsum(cm.rows, axis=1)
    # index of the first cumulative bound above u; clamp guards float round-off in the last entry
    out = np.minimum((cumulative[idx] <= u[:, None]).sum(axis=1), len(cm.labels) - 1)
    return "".join(cm.labels[j] for j in out)


def save_model(model, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    shape = model.mel_config.shape
    for k, key in enumerate(KEYS):
        write_matrix(root / f"centroid_{key}.amat", model.centroids[k].reshape(shape))
    meta = {"mel_config": asdict(model.mel_config), "training_meta": model.training_meta,
            "labels": KEYS, "format": "centroid-v1"}
    (root / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return root


def load_model(root):
    root = Path(root)
    meta = json.loads((root / "model.json").read_text())
    cfg = MelConfig(**meta["mel_config"])
    centroids = np.stack([read_matrix(root / f"centroid_{key}.amat").ravel() for key in KEYS])
    return CentroidModel(centroids, cfg, meta.get("training_meta", {}))
