import numpy as np
import pytest

from asca.attack import (AttackTranscript, attack_audio, attack_channel, mean_accuracy, read_transcripts,
                         space_channel, write_transcripts)
from asca.classifier import ConfusionMatrix, estimate_confusion, extend_with_space, identity_channel
from asca.dataset import synth_sentences
from asca.errors import AlphabetError

SENTENCES = synth_sentences(20, 20, seed=5)


def test_transcript_invariants():
    with pytest.raises(ValueError):
        AttackTranscript("abc", "ab")
    with pytest.raises(AlphabetError):
        AttackTranscript("Abc", "abc")
    with pytest.raises(ValueError):
        AttackTranscript("abc", "abc", path="radio")


def test_clean_audio_attack_is_accurate(model, synth_ds):
    transcripts = attack_audio(SENTENCES, synth_ds, model, 0.0, seed=1)
    assert len(transcripts) == len(SENTENCES)
    assert all(len(t.predicted) == len(t.truth) and t.path == "audio" for t in transcripts)
    assert mean_accuracy(transcripts) >= 0.95


def test_empty_corpus(model, synth_ds):
    assert attack_audio([], synth_ds, model, 0.01, seed=1) == []
    assert attack_channel([], identity_channel(), "low", seed=1) == []


def test_audio_attack_deterministic(model, synth_ds):
    a = attack_audio(SENTENCES, synth_ds, model, 0.01, seed=7, noise_level="medium")
    b = attack_audio(SENTENCES, synth_ds, model, 0.01, seed=7, noise_level="medium")
    assert a == b
    # supplying the SPACE channel explicitly matches the one estimated internally
    space_cm = space_channel(model, synth_ds, 0.01, 7)
    given = attack_audio(SENTENCES, synth_ds, model, 0.01, seed=7, space_cm=space_cm)
    assert [t.predicted for t in given] == [t.predicted for t in a]


def test_sentence_streams_independent_of_batch(model, synth_ds):
    space_cm = space_channel(model, synth_ds, 0.02, 3)
    whole = attack_audio(SENTENCES[:6], synth_ds, model, 0.02, seed=3, space_cm=space_cm)
    alone = [attack_audio([s], synth_ds, model, 0.02, seed=3, space_cm=space_cm)[0] for s in SENTENCES[:1]]
    assert alone[0] == whole[0]


def test_audio_attack_rejects_bad_alphabet(model, synth_ds):
    with pytest.raises(AlphabetError):
        attack_audio(["hello, world"], synth_ds, model, 0.0, seed=0)


def test_channel_identity_and_determinism():
    out = attack_channel(SENTENCES, identity_channel(), "low", seed=3)
    assert all(t.predicted == t.truth and t.noise_level == "low" for t in out)
    cm = extend_with_space(np.full((36, 36), 1 / 36))
    assert attack_channel(SENTENCES, cm, "high", 9) == attack_channel(SENTENCES, cm, "high", 9)


def test_channel_rejects_bad_alphabet():
    with pytest.raises(AlphabetError):
        attack_channel(["Caps"], identity_channel(), "low", seed=0)


def test_space_never_predicted_for_keys(model, synth_ds):
    out = attack_audio(["abcdefghij" * 3], synth_ds, model, 0.05, seed=2)
    assert " " not in out[0].predicted


def test_calibrated_high_hits_target(calibrated, probe):
    eta = calibrated.results["high"].eta
    assert abs(probe(eta, calibrated.fresh, 77) - 0.70) <= 0.02


def test_channel_at_calibrated_medium(calibrated, model, synth_ds):
    eta = calibrated.results["medium"].eta
    cm = extend_with_space(estimate_confusion(model, synth_ds, eta, seed=5, repeats=2))
    acc = mean_accuracy(attack_channel(calibrated.fresh, cm, "medium", seed=6, eta=eta))
    assert 0.83 <= acc <= 0.87


def test_monotone_degradation(calibrated, probe):
    accs = [probe(calibrated.results[level].eta, calibrated.fresh, 5) for level in ("low", "medium", "high")]
    assert accs[0] > accs[1] > accs[2]


def test_transcripts_jsonl_round_trip(tmp_path):
    ts = attack_channel(SENTENCES[:5], identity_channel(), "low", seed=1, eta=0.01)
    ts[0] = AttackTranscript(ts[0].truth, ts[0].predicted, "fixed", "low", 0.01, 1, "channel", None)
    path = write_transcripts(tmp_path / "t.jsonl", ts)
    assert read_transcripts(path) == ts
    assert len(path.read_text().splitlines()) == 5


def test_space_channel_is_stochastic(model, synth_ds):
    cm = space_channel(model, synth_ds, 0.02, 1)
    assert isinstance(cm, ConfusionMatrix)
    assert np.max(np.abs(cm.rows.sum(1) - 1)) <= 1e-9
    assert not cm.rows[:36, 36].any()
