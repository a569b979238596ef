"""Waveforms, additive Gaussian noise, time shifting and keystroke segmentation."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SegmentationError
from .rng import generator

DEFAULT_SAMPLE_RATE_HZ = 44_100

# Waveform noise factors for the Low/Medium/High levels of each recording setup.
NOISE_PRESETS = {
    "phone-low": 0.012,
    "phone-medium": 0.024,
    "phone-high": 0.06,
    "zoom-low": 0.1,
    "zoom-medium": 0.5,
    "zoom-high": 1.0,
}

# Default fraction of the clip length a training example may be shifted by.
TIMESHIFT_FRACTION = {"phone": 0.3, "zoom": 0.4}


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains NaN or Inf")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples):
        return Waveform(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class NoiseSpec:
    eta: float
    seed: int = 0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"noise factor must be >= 0, got {self.eta}")
        if int(self.seed) < 0 or int(self.seed) >= 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def preset(cls, name, seed=0):
        try:
            return cls(NOISE_PRESETS[name], seed)
        except KeyError:
            raise ValueError(f"unknown noise preset {name!r}; known: {sorted(NOISE_PRESETS)}") from None


@dataclass(frozen=True)
class SegmentationConfig:
    expected_segments: int = 25
    energy_window: int = 1024
    energy_hop: int = 256
    min_separation: float = 0.1
    clip_length: int = 18_900
    # peaks must rise this fraction of the way from the median envelope to its maximum
    threshold: float = 0.1
    # centre each clip on the loudest sample near its energy frame instead of the frame midpoint
    refine: bool = True

    def __post_init__(self):
        for name in ("expected_segments", "energy_window", "energy_hop", "clip_length"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.energy_hop > self.energy_window:
            raise ValueError("energy_hop must not exceed energy_window")
        if not self.min_separation > 0:
            raise ValueError("min_separation must be positive")
        if not 0 <= self.threshold < 1:
            raise ValueError("threshold must be in [0, 1)")

    def check_rate(self, sample_rate_hz):
        if not self.min_separation * sample_rate_hz > self.energy_hop:
            raise ValueError("min_separation must span more than one energy hop")


def add_noise_array(samples, eta, rng):
    """``samples + eta * N(0, 1)`` drawing from an existing generator."""
    samples = np.asarray(samples, dtype=np.float64)
    noise = rng.standard_normal(samples.shape)
    if eta == 0:
        return samples.copy()
    return samples + eta * noise


def add_gaussian_noise(w, spec):
    """Additive white Gaussian noise scaled by ``spec.eta``; never clipped."""
    if spec.eta == 0:
        return w.with_samples(w.samples.copy())
    return w.with_samples(add_noise_array(w.samples, spec.eta, generator(spec.seed)))


def shift_array(samples, offset):
    """Translate by ``offset`` samples (positive = later), zero-filling the gap."""
    samples = np.asarray(samples, dtype=np.float64)
    out = np.zeros_like(samples)
    n = samples.shape[-1]
    if offset >= n or offset <= -n:
        return out
    if offset > 0:
        out[..., offset:] = samples[..., : n - offset]
    elif offset < 0:
        out[..., : n + offset] = samples[..., -offset:]
    else:
        out[...] = samples
    return out


def draw_shift(n, max_fraction, rng):
    limit = int(np.floor(max_fraction * n))
    return int(rng.integers(-limit, limit + 1))


def time_shift(w, max_fraction, seed):
    if not 0 <= max_fraction <= 1:
        raise ValueError(f"max_fraction must lie in [0, 1], got {max_fraction}")
    offset = draw_shift(len(w), max_fraction, generator(seed))
    return w.with_samples(shift_array(w.samples, offset))


def energy_envelope(w, window, hop):
    """Sum of DFT magnitudes of each rectangular frame."""
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty waveform")
    if window > samples.size:
        raise ValueError(f"window {window} longer than waveform ({samples.size} samples)")
    if window <= 0 or hop < 1:
        raise ValueError("window and hop must be positive")
    frames = sliding_window_view(samples, window)[::hop]
    out = np.empty(frames.shape[0])
    # chunked so long recordings do not allocate every spectrum at once
    step = 4096
    for start in range(0, frames.shape[0], step):
        out[start:start + step] = np.abs(np.fft.rfft(frames[start:start + step], axis=1)).sum(axis=1)
    return out


def pick_peaks(envelope, count, min_distance, threshold=0.1):
    """Greedy peak picking with non-maximum suppression.

    Returns up to ``count`` frame indices in temporal order.  Candidates are
    local maxima above ``median + threshold * (max - median)``; accepted in
    descending envelope order, each suppressing its neighbours closer than
    ``min_distance`` frames.
    """
    env = np.asarray(envelope, dtype=np.float64)
    if env.size == 0:
        return []
    top, median = env.max(), np.median(env)
    if top <= median:
        return []
    floor = median + threshold * (top - median)
    left = np.concatenate(([-np.inf], env[:-1]))
    right = np.concatenate((env[1:], [-np.inf]))
    candidates = np.flatnonzero((env >= left) & (env >= right) & (env > floor))
    order = candidates[np.argsort(-env[candidates], kind="stable")]
    accepted = []
    for idx in order:
        if all(abs(idx - a) >= min_distance for a in accepted):
            accepted.append(int(idx))
            if len(accepted) == count:
                break
    return sorted(accepted)


def extract_clip(samples, center, length):
    """``length`` samples centred on ``center``, zero-padded past the edges."""
    start = center - length // 2
    out = np.zeros(length)
    lo, hi = max(start, 0), min(start + length, samples.size)
    if hi > lo:
        out[lo - start:hi - start] = samples[lo:hi]
    return out


def peak_center(samples, frame, cfg):
    """Sample index a clip is centred on for envelope frame ``frame``."""
    start = frame * cfg.energy_hop
    if not cfg.refine:
        return start + cfg.energy_window // 2
    # frames overlap, so the strike may sit up to one hop outside the winning frame
    lo = max(start - cfg.energy_hop, 0)
    hi = min(start + cfg.energy_window + cfg.energy_hop, samples.size)
    return lo + int(np.argmax(np.abs(samples[lo:hi])))


def segment_keystrokes(w, cfg):
    """Split a recording of repeated keystrokes into ``cfg.expected_segments`` clips."""
    cfg.check_rate(w.sample_rate_hz)
    if len(w) < cfg.energy_window:
        raise SegmentationError(f"recording shorter than one energy window ({len(w)} samples)")
    env = energy_envelope(w, cfg.energy_window, cfg.energy_hop)
    min_distance = cfg.min_separation * w.sample_rate_hz / cfg.energy_hop
    peaks = pick_peaks(env, cfg.expected_segments, min_distance, cfg.threshold)
    if len(peaks) < cfg.expected_segments:
        raise SegmentationError(f"found {len(peaks)} keystroke peaks, expected {cfg.expected_segments}")
    centers = [peak_center(w.samples, p, cfg) for p in peaks]
    return [w.with_samples(extract_clip(w.samples, c, cfg.clip_length)) for c in centers]
