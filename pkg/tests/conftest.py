import time
from types import SimpleNamespace

import pytest

from asca.attack import AudioProbe
from asca.calibration import calibrate_presets
from asca.classifier import AugmentSpec, train_centroid
from asca.dataset import has_digit, stratified_split, synth_dataset, synth_sentences
from asca.spectrogram import MEL_PRESETS


@pytest.fixture(scope="session")
def synth_ds():
    return synth_dataset(seed=0)


@pytest.fixture(scope="session")
def split(synth_ds):
    return stratified_split(synth_ds, 0.2, seed=1)


@pytest.fixture(scope="session")
def model(synth_ds, split):
    # the synthetic profile's baseline: table masking, no time shift
    return train_centroid(synth_ds, split, MEL_PRESETS["synthetic"], AugmentSpec(mask_fraction=0.1, seed=2))


def disjoint_sentences(exclude, n_digit, n_plain, seed):
    """Synthetic sentences, balanced by digit presence, none of which appear in ``exclude``."""
    exclude = set(exclude)
    pool = [s for s in synth_sentences(3 * n_digit, 3 * n_plain, seed) if s not in exclude]
    digit = [s for s in pool if has_digit(s)][:n_digit]
    plain = [s for s in pool if not has_digit(s)][:n_plain]
    assert len(digit) == n_digit and len(plain) == n_plain
    return digit + plain


@pytest.fixture(scope="session")
def probe(model, synth_ds):
    return AudioProbe(model, synth_ds)


@pytest.fixture(scope="session")
def calibrated(probe):
    """Low/Medium/High noise factors calibrated on 200 probe sentences, then re-measured on 200 fresh ones."""
    start = time.perf_counter()
    probe_sentences = synth_sentences(100, 100, seed=3)
    results = calibrate_presets(probe_sentences, probe, seed=11, eta_bounds=(0.0, 0.1), tolerance=0.005)
    fresh = disjoint_sentences(probe_sentences, 100, 100, seed=99)
    fresh_accuracy = {level: probe(r.eta, fresh, 1234) for level, r in results.items()}
    return SimpleNamespace(results=results, probe_sentences=probe_sentences, fresh=fresh,
                           fresh_accuracy=fresh_accuracy, elapsed_s=time.perf_counter() - start)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
