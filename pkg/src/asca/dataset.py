"""Keystroke datasets, sentence corpora and stratified splits."""

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientCorpusError, MissingKeyError, SegmentationError
from .io import read_wav, write_wav
from .rng import generator
from .spectrogram import hz_to_mel, mel_to_hz
from .signal import DEFAULT_SAMPLE_RATE_HZ, SegmentationConfig, Waveform, segment_keystrokes

KEYS = "abcdefghijklmnopqrstuvwxyz0123456789"
SPACE = " "
ALPHABET = KEYS + SPACE
KEY_INDEX = {k: i for i, k in enumerate(ALPHABET)}
PROFILES = ("phone", "zoom", "synthetic")


def key_index(symbol):
    return KEY_INDEX[symbol]


@dataclass(frozen=True, eq=False)
class KeystrokeDataset:
    items: tuple
    profile: str = "synthetic"

    def __post_init__(self):
        items = tuple((str(label), w) for label, w in self.items)
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        counts = defaultdict(int)
        rates = set()
        for label, w in items:
            if label not in KEYS:
                raise ValueError(f"{label!r} is not a trainable key")
            counts[label] += 1
            rates.add(w.sample_rate_hz)
        if len(rates) > 1:
            raise ValueError(f"mixed sample rates {sorted(rates)}")
        sparse = sorted(k for k, c in counts.items() if c < 2)
        if sparse:
            raise ValueError(f"labels with fewer than 2 items: {sparse}")
        object.__setattr__(self, "items", items)

    def __len__(self):
        return len(self.items)

    @property
    def labels(self):
        return [label for label, _ in self.items]

    @property
    def sample_rate_hz(self):
        return self.items[0][1].sample_rate_hz if self.items else DEFAULT_SAMPLE_RATE_HZ

    def label_indices(self):
        return np.array([KEY_INDEX[label] for label, _ in self.items], dtype=np.int64)

    def clips(self, indices=None):
        """Stack clip samples into an (n, length) array."""
        chosen = self.items if indices is None else [self.items[i] for i in indices]
        return np.stack([w.samples for _, w in chosen]) if chosen else np.empty((0, 0))

    def by_label(self):
        groups = defaultdict(list)
        for i, (label, _) in enumerate(self.items):
            groups[label].append(i)
        return {k: groups[k] for k in KEYS if k in groups}


@dataclass(frozen=True)
class Split:
    train: tuple
    test: tuple

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError("train and test overlap")


@dataclass(frozen=True)
class SentenceCorpus:
    sentences: tuple
    digit_count: int = 0
    plain_count: int = 0

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


# ---------------------------------------------------------------- synthetic audio

def _burst(key, rng, sample_rate_hz, length=12_288):
    """Onset click plus a damped narrow-band resonance whose centre rises with key order."""
    k = KEY_INDEX[key]
    # centres evenly spaced on the mel scale so every class spans a similar number of bands
    lo, hi = hz_to_mel(300.0), hz_to_mel(16_000.0)
    center = float(mel_to_hz(lo + (hi - lo) * k / (len(KEYS) - 1)))
    center *= 1.0 + rng.uniform(-0.01, 0.01)
    bandwidth = 0.02 * center
    spectrum = np.fft.rfft(rng.standard_normal(length))
    freqs = np.fft.rfftfreq(length, 1.0 / sample_rate_hz)
    spectrum *= np.exp(-0.5 * ((freqs - center) / bandwidth) ** 2)
    tone = np.fft.irfft(spectrum, length)
    tone /= np.max(np.abs(tone)) + 1e-12
    t = np.arange(length) / sample_rate_hz
    tau = 0.04 * (1.0 + rng.uniform(-0.2, 0.2))
    envelope = (1.0 - np.exp(-t / 0.0008)) * np.exp(-t / tau)
    amplitude = 0.5 * (1.0 + rng.uniform(-0.2, 0.2))
    out = amplitude * tone * envelope
    # broadband 1 ms click shared by all keys: the key bottoming out
    click = rng.standard_normal(44) * np.exp(-np.arange(44) / 10.0)
    out[:44] += 0.5 * click / np.max(np.abs(click))
    return out


def synth_recording(key, seed, strokes=25, spacing_s=0.5, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ,
                    hiss=1e-5):
    """A recording of ``strokes`` presses of ``key``; returns (Waveform, onset sample indices)."""
    rng = generator(seed, KEY_INDEX[key])
    lead = int(0.25 * sample_rate_hz)
    step = int(spacing_s * sample_rate_hz)
    total = lead + step * strokes + int(0.25 * sample_rate_hz)
    samples = hiss * rng.standard_normal(total)
    onsets = []
    for i in range(strokes):
        onset = lead + i * step + int(rng.integers(-int(0.002 * sample_rate_hz), int(0.002 * sample_rate_hz) + 1))
        burst = _burst(key, rng, sample_rate_hz)
        end = min(onset + burst.size, total)
        samples[onset:end] += burst[: end - onset]
        onsets.append(onset)
    return Waveform(samples, sample_rate_hz), onsets


def synth_dataset(seed, strokes_per_key=25, seg_cfg=None, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
    """36-class synthetic fixture built by segmenting synthetic recordings."""
    if strokes_per_key < 2:
        raise ValueError("strokes_per_key must be >= 2")
    base = seg_cfg or SegmentationConfig()
    cfg = SegmentationConfig(
        expected_segments=strokes_per_key,
        energy_window=base.energy_window,
        energy_hop=base.energy_hop,
        min_separation=base.min_separation,
        clip_length=base.clip_length,
        threshold=base.threshold,
        refine=base.refine,
    )
    items = []
    for key in KEYS:
        recording, _ = synth_recording(key, seed, strokes_per_key, sample_rate_hz=sample_rate_hz)
        items.extend((key, clip) for clip in segment_keystrokes(recording, cfg))
    return KeystrokeDataset(tuple(items), "synthetic")


def write_synth_recordings(root, seed, strokes=25, sample_rate_hz=DEFAULT_SAMPLE_RATE_HZ):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for key in KEYS:
        recording, _ = synth_recording(key, seed, strokes, sample_rate_hz=sample_rate_hz)
        write_wav(root / f"{key}.wav", recording.samples, sample_rate_hz)
    return root


# ---------------------------------------------------------------- persistence

def load_recordings(root_path, profile, seg_cfg):
    """Segment ``<symbol>.wav`` for every key under ``root_path``."""
    root = Path(root_path)
    missing = [k for k in KEYS if not (root / f"{k}.wav").is_file()]
    if missing:
        raise MissingKeyError(missing)
    items = []
    for key in KEYS:
        samples, rate = read_wav(root / f"{key}.wav")
        try:
            clips = segment_keystrokes(Waveform(samples, rate), seg_cfg)
        except SegmentationError as exc:
            raise SegmentationError(str(exc), key=key) from exc
        items.extend((key, clip) for clip in clips)
    return KeystrokeDataset(tuple(items), profile)


def save_dataset(ds, root):
    """Write clips as 64-bit float WAV plus a ``manifest.json`` index."""
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    counters = defaultdict(int)
    entries = []
    for label, w in ds.items:
        rel = f"clips/{label}_{counters[label]:03d}.wav"
        counters[label] += 1
        write_wav(root / rel, w.samples, w.sample_rate_hz, dtype=np.float64)
        entries.append({"label": label, "path": rel})
    manifest = {"profile": ds.profile, "sample_rate_hz": ds.sample_rate_hz, "items": entries}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    items = []
    for entry in manifest["items"]:
        samples, rate = read_wav(base / entry["path"])
        items.append((entry["label"], Waveform(samples, rate)))
    return KeystrokeDataset(tuple(items), manifest["profile"])


# ---------------------------------------------------------------- sentences

_OUTSIDE = re.compile(r"[^a-z0-9 ]")
_SPACES = re.compile(r" +")


def normalize_sentence(text):
    """Lowercase, keep only a-z, 0-9 and single spaces."""
    text = re.sub(r"\s", " ", text.lower())
    text = _OUTSIDE.sub("", text)
    return _SPACES.sub(" ", text).strip()


def has_digit(sentence):
    return any(c.isdigit() for c in sentence)


def select_sentences(lines, n_digit, n_plain, seed):
    seen = set()
    digit, plain = [], []
    for line in lines:
        s = normalize_sentence(line)
        if not s or s in seen:
            continue
        seen.add(s)
        (digit if has_digit(s) else plain).append(s)
    if n_digit < 0 or n_plain < 0:
        raise ValueError("requested counts must be non-negative")
    if len(digit) < n_digit or len(plain) < n_plain:
        raise InsufficientCorpusError(
            f"requested {n_digit} digit / {n_plain} plain sentences, "
            f"corpus has {len(digit)} / {len(plain)}")
    rng = generator(seed)
    chosen = [digit[i] for i in rng.choice(len(digit), n_digit, replace=False)]
    chosen += [plain[i] for i in rng.choice(len(plain), n_plain, replace=False)]
    return SentenceCorpus(tuple(chosen), n_digit, n_plain)


def load_corpus(path, n_digit, n_plain, seed):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return select_sentences(lines, n_digit, n_plain, seed)


_SUBJECTS = ["i", "we", "you", "they", "she", "he", "my friend", "the teacher", "our team",
             "the children", "my brother", "her mother", "the doctor", "the manager", "his sister"]
_VERBS = [
    ("walk to", "walked to", "will walk to"),
    ("visit", "visited", "will visit"),
    ("clean", "cleaned", "will clean"),
    ("paint", "painted", "will paint"),
    ("watch", "watched", "will watch"),
    ("open", "opened", "will open"),
    ("close", "closed", "will close"),
    ("leave", "left", "will leave"),
    ("find", "found", "will find"),
    ("build", "built", "will build"),
    ("read", "read", "will read"),
    ("carry", "carried", "will carry"),
    ("finish", "finished", "will finish"),
    ("start", "started", "will start"),
    ("check", "checked", "will check"),
    ("sell", "sold", "will sell"),
    ("bring", "brought", "will bring"),
    ("order", "ordered", "will order"),
]
_OBJECTS = ["the house", "the garden", "a letter", "the report", "the window", "the kitchen",
            "the market", "a new book", "the old car", "the office", "the small shop", "the museum",
            "the project", "the station", "a big table", "the school", "the river", "the library",
            "the bakery", "the meeting notes", "a fresh cake", "the green door", "the quiet park"]
_TIMES = ["today", "yesterday", "tomorrow", "every morning", "last week", "next month",
          "this evening", "after lunch", "before dinner", "on monday", "on friday", "at night"]
_NUMBER_PHRASES = ["at {h} pm", "at {h} am", "in {y}", "with {n} friends", "for {n} hours",
                   "in room {r}", "on day {d}", "after {n} minutes", "with {n} boxes", "by bus {r}"]


def synth_sentences(n_digit, n_plain, seed):
    """Tense-varied English sentences; the digit half each carries a number phrase."""
    rng = generator(seed)

    def sentence(with_digits):
        verb = _VERBS[rng.integers(len(_VERBS))][rng.integers(3)]
        words = [_SUBJECTS[rng.integers(len(_SUBJECTS))], verb, _OBJECTS[rng.integers(len(_OBJECTS))]]
        if with_digits:
            phrase = _NUMBER_PHRASES[rng.integers(len(_NUMBER_PHRASES))]
            words.append(phrase.format(h=rng.integers(1, 13), y=rng.integers(1990, 2031),
                                       n=rng.integers(2, 100), r=rng.integers(1, 500),
                                       d=rng.integers(1, 32)))
        if rng.random() < 0.7:
            words.append(_TIMES[rng.integers(len(_TIMES))])
        return " ".join(words)

    seen = set()
    digit, plain = [], []
    while len(digit) < n_digit or len(plain) < n_plain:
        want_digit = len(digit) < n_digit and (len(plain) >= n_plain or rng.random() < 0.5)
        s = sentence(want_digit)
        if s in seen:
            continue
        seen.add(s)
        (digit if want_digit else plain).append(s)
    return digit + plain


def synth_wordlist():
    words = set()
    for group in (_SUBJECTS, _OBJECTS, _TIMES):
        for phrase in group:
            words.update(phrase.split())
    for forms in _VERBS:
        for form in forms:
            words.update(form.split())
    for phrase in _NUMBER_PHRASES:
        words.update(w for w in phrase.split() if "{" not in w)
    return sorted(words)


# ---------------------------------------------------------------- splits

def stratified_split(ds, test_fraction, seed):
    """Per-class shuffle, then ``round(n_c * test_fraction)`` items of each class go to test."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = generator(seed)
    train, test = [], []
    for label, indices in ds.by_label().items():
        n = len(indices)
        n_test = int(np.floor(n * test_fraction + 0.5))
        if n_test >= n:
            raise ValueError(f"class {label!r} would have no training items")
        order = rng.permutation(n)
        test.extend(indices[i] for i in order[:n_test])
        train.extend(indices[i] for i in order[n_test:])
    return Split(tuple(sorted(train)), tuple(sorted(test)))
