"""Mel-spectrogram images and time/frequency masking."""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .rng import generator
from .signal import DEFAULT_SAMPLE_RATE_HZ, Waveform

POWER_FLOOR = 1e-10
DB_FLOOR = 10.0 * np.log10(POWER_FLOOR)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 64
    n_fft: int = 1024
    hop_length: int = 300
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ
    fmin: float = 0.0
    fmax: float | None = None
    target_width: int = 64

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate_hz / 2)
        problems = []
        for name in ("n_mels", "n_fft", "hop_length", "sample_rate_hz", "target_width"):
            if int(getattr(self, name)) <= 0:
                problems.append(f"{name} must be positive")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate_hz / 2:
            problems.append("need 0 <= fmin < fmax <= sample_rate/2")
        if self.n_fft < self.n_mels:
            problems.append("n_fft must be >= n_mels")
        if self.hop_length > self.n_fft:
            problems.append("hop_length must be <= n_fft")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def clip_length(self):
        """Samples that yield exactly ``target_width`` centre-padded frames."""
        return self.hop_length * (self.target_width - 1)

    @property
    def shape(self):
        return (self.n_mels, self.target_width)


# 64x64 images for the convolutional baseline, 224x224 for the direct-transformation
# variant fed to vision transformers.
MEL_PRESETS = {
    "phone": MelConfig(n_mels=64, n_fft=1024, hop_length=300, target_width=64),
    "phone-direct": MelConfig(n_mels=224, n_fft=1024, hop_length=85, target_width=224),
    "zoom": MelConfig(n_mels=64, n_fft=1024, hop_length=226, target_width=64),
    "zoom-direct": MelConfig(n_mels=224, n_fft=1024, hop_length=64, target_width=224),
}
MEL_PRESETS["synthetic"] = MEL_PRESETS["phone"]

MAX_MASK_FRACTION = {"baseline": 0.1, "transformer": 0.03}
MASKS_PER_AXIS = 2


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    values: np.ndarray
    config: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.config.shape:
            raise ValueError(f"spectrogram shape {values.shape} does not match config {self.config.shape}")
        if values.size and (values.min() < 0 or values.max() > 1):
            raise ValueError("spectrogram values must lie in [0, 1]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MaskSpec:
    max_mask_fraction: float = 0.1
    masks_per_axis: int = MASKS_PER_AXIS
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_mask_fraction <= 1:
            raise ValueError("max_mask_fraction must lie in [0, 1]")
        if self.masks_per_axis < 0:
            raise ValueError("masks_per_axis must be non-negative")


_FILTERBANK_CACHE = {}


def mel_filterbank(cfg):
    """Triangular, area-normalised filters of shape (n_mels, n_fft // 2 + 1)."""
    key = (cfg.n_mels, cfg.n_fft, cfg.sample_rate_hz, cfg.fmin, cfg.fmax)
    if key in _FILTERBANK_CACHE:
        return _FILTERBANK_CACHE[key]
    bin_hz = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate_hz)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights *= (2.0 / (upper - lower))
    weights.setflags(write=False)
    _FILTERBANK_CACHE[key] = weights
    return weights


def band_centers_hz(cfg):
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    return edges[1:-1]


def power_spectrogram(clips, n_fft, hop_length):
    """Hann-windowed, zero centre-padded STFT power, shape (..., frames, n_fft//2+1).

    Computed in single precision; dB conversion downstream is float64.
    """
    pad = [(0, 0)] * (clips.ndim - 1) + [(n_fft // 2, n_fft // 2)]
    padded = np.pad(np.asarray(clips, dtype=np.float32), pad)
    frames = sliding_window_view(padded, n_fft, axis=-1)[..., ::hop_length, :]
    window = get_window("hann", n_fft, fftbins=True).astype(np.float32)
    spectrum = scipy.fft.rfft(frames * window, axis=-1)
    return np.square(spectrum.real) + np.square(spectrum.imag)


def _normalize(db):
    lo = db.min(axis=(-2, -1), keepdims=True)
    hi = db.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (db - lo) / safe, 0.0)


def featurize(clips, cfg, chunk=64):
    """Normalised mel images for a batch of equal-length clips, shape (n, n_mels, width)."""
    clips = np.atleast_2d(np.asarray(clips, dtype=np.float64))
    if clips.shape[-1] < cfg.hop_length:
        raise ValueError(f"clip of {clips.shape[-1]} samples is shorter than one hop ({cfg.hop_length})")
    fb32 = mel_filterbank(cfg).astype(np.float32)
    out = np.empty((clips.shape[0], cfg.n_mels, cfg.target_width))
    for start in range(0, clips.shape[0], chunk):
        power = power_spectrogram(clips[start:start + chunk], cfg.n_fft, cfg.hop_length)
        mel = np.matmul(power, fb32.T).transpose(0, 2, 1)
        db = 10.0 * np.log10(np.maximum(mel.astype(np.float64), POWER_FLOOR))
        frames = db.shape[-1]
        if frames >= cfg.target_width:
            db = db[..., : cfg.target_width]
        else:
            db = np.pad(db, [(0, 0), (0, 0), (0, cfg.target_width - frames)], constant_values=DB_FLOOR)
        out[start:start + chunk] = _normalize(db)
    return out


def mel_spectrogram(w, cfg):
    if not isinstance(w, Waveform):
        raise TypeError("expected a Waveform")
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(f"sample rate {w.sample_rate_hz} Hz does not match config {cfg.sample_rate_hz} Hz")
    return MelSpectrogram(featurize(w.samples[None, :], cfg)[0], cfg)


def mask_array(image, max_mask_fraction, masks_per_axis, rng):
    """Zero out random row and column bands of a single image, in place."""
    rows, cols = image.shape[-2:]
    for axis_len, is_rows in ((cols, False), (rows, True)):
        limit = int(np.floor(max_mask_fraction * axis_len))
        for _ in range(masks_per_axis):
            width = int(rng.integers(0, limit + 1))
            start = int(rng.integers(0, axis_len - width + 1))
            if is_rows:
                image[..., start:start + width, :] = 0.0
            else:
                image[..., :, start:start + width] = 0.0
    return image


def mask_augment(s, m):
    values = s.values.copy()
    if m.max_mask_fraction > 0 and m.masks_per_axis > 0:
        mask_array(values, m.max_mask_fraction, m.masks_per_axis, generator(m.seed))
    return replace(s, values=values)
