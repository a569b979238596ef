"""Sentence-level attack simulation: audio path and confusion-channel path."""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .classifier import estimate_confusion, extend_with_space, simulate_channel
from .dataset import ALPHABET, KEY_INDEX, KEYS, SPACE
from .errors import AlphabetError
from .metrics import char_accuracy
from .rng import derive_seed, generator
from .signal import add_noise_array
from .spectrogram import featurize

NOISE_LEVELS = ("low", "medium", "high")
# stream id for the confusion estimate that backs the SPACE row
_SPACE_STREAM = 0x5BACE


@dataclass
class AttackTranscript:
    truth: str
    predicted: str
    corrected: str | None = None
    noise_level: str | None = None
    eta: float = 0.0
    seed: int = 0
    path: str = "channel"
    error: str | None = None

    def __post_init__(self):
        check_alphabet(self.truth)
        if len(self.predicted) != len(self.truth):
            raise ValueError("predicted and true sentences must have equal length")
        if self.path not in ("audio", "channel"):
            raise ValueError(f"unknown attack path {self.path!r}")

    def to_json(self):
        return asdict(self)


def check_alphabet(text):
    bad = sorted({c for c in text if c not in KEY_INDEX})
    if bad:
        raise AlphabetError(f"characters outside the keystroke alphabet: {bad!r}")


def _sentences(corpus):
    return list(getattr(corpus, "sentences", corpus))


def space_channel(model, ds, eta, seed, repeats=2):
    """37x37 channel whose SPACE row reflects the model's accuracy at ``eta``."""
    return extend_with_space(estimate_confusion(model, ds, eta, derive_seed(seed, _SPACE_STREAM), repeats))


def attack_sentence(sentence, pools, clips, model, eta, space_row_cum, rng):
    """Realise one sentence keystroke by keystroke; returns the predicted string."""
    out = [None] * len(sentence)
    batch, where = [], []
    for pos, ch in enumerate(sentence):
        if ch == SPACE:
            u = rng.random()
            j = min(int((space_row_cum <= u).sum()), len(ALPHABET) - 1)
            out[pos] = ALPHABET[j]
        else:
            pool = pools[ch]
            clip = clips[pool[int(rng.integers(len(pool)))]]
            batch.append(add_noise_array(clip, eta, rng))
            where.append(pos)
    if batch:
        pred = model.predict_batch(featurize(np.stack(batch), model.mel_config))
        for pos, k in zip(where, pred):
            out[pos] = KEYS[int(k)]
    return "".join(out)


def attack_audio(corpus, ds, model, eta, seed, noise_level=None, space_cm=None):
    """Type every sentence with noisy dataset clips and classify each keystroke.

    Clips are sampled with replacement per occurrence from the whole dataset;
    spaces have no audio and are drawn from the SPACE row of ``space_cm``
    (estimated from ``model`` at ``eta`` when not supplied).
    """
    sentences = _sentences(corpus)
    for s in sentences:
        check_alphabet(s)
    if not sentences:
        return []
    needed = {c for s in sentences for c in s if c != SPACE}
    pools = ds.by_label()
    absent = sorted(needed - set(pools))
    if absent:
        raise ValueError(f"dataset has no clips for {absent}")
    if space_cm is None and any(SPACE in s for s in sentences):
        space_cm = space_channel(model, ds, eta, seed)
    space_row = np.cumsum(space_cm.rows[KEY_INDEX[SPACE]]) if space_cm is not None else None
    clips = ds.clips()
    transcripts = []
    for i, sentence in enumerate(sentences):
        predicted = attack_sentence(sentence, pools, clips, model, eta, space_row, generator(seed, i))
        transcripts.append(AttackTranscript(sentence, predicted, None, noise_level, float(eta), int(seed), "audio"))
    return transcripts


def attack_channel(corpus, cm, eta_label, seed, eta=0.0):
    """Pass each sentence through the confusion channel ``cm``."""
    out = []
    for i, sentence in enumerate(_sentences(corpus)):
        check_alphabet(sentence)
        predicted = simulate_channel(cm, sentence, derive_seed(seed, i))
        out.append(AttackTranscript(sentence, predicted, None, eta_label, float(eta), int(seed), "channel"))
    return out


def mean_accuracy(transcripts, target="predicted"):
    scores = [char_accuracy(t.truth, getattr(t, target)) for t in transcripts]
    return float(np.mean(scores)) if scores else float("nan")


class AudioProbe:
    """Callable ``(eta, sentences, seed) -> mean character accuracy`` over the audio path."""

    def __init__(self, model, ds):
        self.model = model
        self.ds = ds
        self._space = {}

    def transcripts(self, eta, sentences, seed, noise_level=None):
        key = (float(eta), int(seed))
        if key not in self._space:
            self._space[key] = space_channel(self.model, self.ds, eta, seed)
        return attack_audio(sentences, self.ds, self.model, eta, seed, noise_level, self._space[key])

    def __call__(self, eta, sentences, seed):
        return mean_accuracy(self.transcripts(eta, sentences, seed))


def write_transcripts(path, transcripts):
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")
    return Path(path)


def read_transcripts(path):
    with open(path, encoding="utf-8") as fh:
        return [AttackTranscript(**json.loads(line)) for line in fh if line.strip()]
