import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asca.errors import SegmentationError
from asca.rng import generator
from asca.signal import (NOISE_PRESETS, NoiseSpec, SegmentationConfig, Waveform, add_gaussian_noise,
                         draw_shift, energy_envelope, peak_center, pick_peaks, segment_keystrokes, shift_array, time_shift)

RATE = 44_100


def wave(samples, rate=RATE):
    return Waveform(np.asarray(samples, dtype=np.float64), rate)


def test_waveform_rejects_bad_input():
    with pytest.raises(ValueError):
        wave([])
    with pytest.raises(ValueError):
        wave([0.0, np.nan])
    with pytest.raises(ValueError):
        wave([0.0], rate=0)


def test_noise_zero_eta_is_bitwise_identity():
    w = wave(generator(3).standard_normal(1000))
    out = add_gaussian_noise(w, NoiseSpec(0.0, seed=99))
    assert out.samples.tobytes() == w.samples.tobytes()
    assert out.sample_rate_hz == w.sample_rate_hz


def test_noise_presets():
    assert NOISE_PRESETS["phone-low"] == 0.012
    assert NOISE_PRESETS["phone-medium"] == 0.024
    assert NOISE_PRESETS["phone-high"] == 0.06
    assert (NOISE_PRESETS["zoom-low"], NOISE_PRESETS["zoom-medium"], NOISE_PRESETS["zoom-high"]) == (0.1, 0.5, 1.0)
    assert NoiseSpec.preset("zoom-high", seed=4) == NoiseSpec(1.0, 4)


def test_noise_variance_on_silence():
    out = add_gaussian_noise(wave(np.zeros(100_000)), NoiseSpec(0.5, seed=11))
    assert 0.2375 <= out.samples.var() <= 0.2625


def test_noise_is_unclipped_and_matches_generator():
    w = wave(np.full(64, 0.99))
    out = add_gaussian_noise(w, NoiseSpec(2.0, seed=5))
    expected = w.samples + 2.0 * generator(5).standard_normal(64)
    np.testing.assert_array_equal(out.samples, expected)
    assert np.abs(out.samples).max() > 1.0


def test_noise_rejects_negative_eta():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1, 0)


@given(st.integers(0, 2**64 - 1), st.floats(0.001, 1.0), st.floats(1.01, 4.0))
@settings(max_examples=30, deadline=None)
def test_noise_reproducible_and_ordered(seed, eta, factor):
    w = wave(np.sin(np.arange(512) / 7.0))
    a = add_gaussian_noise(w, NoiseSpec(eta, seed))
    b = add_gaussian_noise(w, NoiseSpec(eta, seed))
    assert a.samples.tobytes() == b.samples.tobytes()
    louder = add_gaussian_noise(w, NoiseSpec(eta * factor, seed))
    assert np.mean((louder.samples - w.samples) ** 2) > np.mean((a.samples - w.samples) ** 2)


def test_time_shift_zero_fraction_is_identity():
    w = wave(generator(1).standard_normal(300))
    assert np.array_equal(time_shift(w, 0.0, seed=7).samples, w.samples)


def test_time_shift_forced_offset_moves_impulse():
    # find a seed whose draw is +7 for a 1000-sample signal at fraction 0.01 (limit 10)
    seed = next(s for s in range(10_000) if draw_shift(1000, 0.01, generator(s)) == 7)
    x = np.zeros(1000)
    x[100] = 1.0
    out = time_shift(wave(x), 0.01, seed).samples
    assert out[107] == 1.0
    assert np.count_nonzero(out) == 1


def test_time_shift_rejects_out_of_range():
    with pytest.raises(ValueError):
        time_shift(wave(np.ones(10)), 1.5, 0)


@given(st.integers(0, 2**32), st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_time_shift_offset_within_bounds(seed, frac):
    n = 257
    offset = draw_shift(n, frac, generator(seed))
    assert abs(offset) <= int(np.floor(frac * n))


@given(st.integers(-40, 40))
def test_shift_preserves_nonzero_multiset_when_nothing_falls_off(offset):
    x = np.zeros(200)
    x[60:140] = np.arange(1, 81, dtype=float)
    out = shift_array(x, offset)
    assert sorted(out[out != 0]) == sorted(x[x != 0])


def test_envelope_length_and_silence():
    env = energy_envelope(wave(np.zeros(5000)), 1024, 256)
    assert env.shape == ((5000 - 1024) // 256 + 1,)
    assert not env.any()


def test_envelope_linear_in_amplitude():
    t = np.arange(8000) / RATE
    full = energy_envelope(wave(np.sin(2 * np.pi * 440 * t)), 512, 128)
    half = energy_envelope(wave(0.5 * np.sin(2 * np.pi * 440 * t)), 512, 128)
    np.testing.assert_allclose(full, 2 * half, rtol=1e-9)


def test_envelope_peaks_at_click_frames():
    x = np.zeros(40_000)
    clicks = np.arange(4000, 40_000 - 1024, 8000)
    x[clicks] = 1.0
    hop, window = 256, 256
    env = energy_envelope(wave(x), window, hop)
    for c in clicks:
        assert env[c // hop] > 0
        # the click falls inside exactly the frame starting at floor(c/hop)*hop when window == hop
        assert env[c // hop] == env.max()


@given(st.lists(st.floats(-1, 1), min_size=64, max_size=300))
@settings(max_examples=40, deadline=None)
def test_envelope_sign_invariant(values):
    x = np.asarray(values)
    np.testing.assert_allclose(energy_envelope(wave(x), 32, 8), energy_envelope(wave(-x), 32, 8), atol=1e-12)


def test_envelope_errors():
    with pytest.raises(ValueError):
        energy_envelope(wave(np.ones(100)), 200, 10)


def test_pick_peaks_suppresses_neighbours():
    env = np.zeros(100)
    env[[10, 12, 50, 90]] = [5.0, 4.0, 3.0, 2.0]
    assert pick_peaks(env, 3, min_distance=5) == [10, 50, 90]


def _click_train(n_clicks=25, spacing_s=0.5, rate=RATE, seed=0):
    rng = generator(seed)
    x = 1e-4 * rng.standard_normal(int((n_clicks + 1) * spacing_s * rate))
    positions = [int((i + 0.5) * spacing_s * rate) for i in range(n_clicks)]
    for p in positions:
        burst = rng.standard_normal(400) * np.exp(-np.arange(400) / 80.0)
        x[p:p + 400] += 0.5 * burst
    return wave(x), positions


def test_segment_25_clicks():
    w, positions = _click_train()
    cfg = SegmentationConfig(clip_length=18_900)
    clips = segment_keystrokes(w, cfg)
    assert len(clips) == 25
    assert all(len(c) == 18_900 for c in clips)
    # each click lies inside its clip window: recompute centres from the peaks
    env = energy_envelope(w, cfg.energy_window, cfg.energy_hop)
    peaks = pick_peaks(env, 25, cfg.min_separation * RATE / cfg.energy_hop, cfg.threshold)
    for p, peak in zip(positions, peaks):
        centre = peak_center(w.samples, peak, cfg)
        assert centre - 18_900 // 2 <= p < centre + 18_900 // 2


def test_refined_centre_lands_on_strike():
    w, positions = _click_train()
    cfg = SegmentationConfig(clip_length=18_900)
    mid = SegmentationConfig(clip_length=18_900, refine=False)
    refined = segment_keystrokes(w, cfg)
    coarse = segment_keystrokes(w, mid)
    half = 18_900 // 2
    # refinement centres on the loudest sample, so each clip peaks exactly mid-clip
    assert all(int(np.argmax(np.abs(c.samples))) == half for c in refined)
    assert len(coarse) == 25


def test_segment_silence_raises():
    with pytest.raises(SegmentationError):
        segment_keystrokes(wave(np.zeros(RATE * 3)), SegmentationConfig())


def test_segment_too_few_peaks_raises():
    w, _ = _click_train(n_clicks=20)
    with pytest.raises(SegmentationError):
        segment_keystrokes(w, SegmentationConfig(expected_segments=25))


def test_segmentation_config_invariants():
    with pytest.raises(ValueError):
        SegmentationConfig(energy_window=128, energy_hop=256)
    with pytest.raises(ValueError):
        SegmentationConfig(min_separation=0.001).check_rate(RATE)
