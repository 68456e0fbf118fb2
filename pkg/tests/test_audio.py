import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.audio import (
    AudioError,
    AugmentConfig,
    MelConfig,
    Waveform,
    augment,
    extract_features,
    mel_center_frequencies,
    mel_filterbank,
    random_augmentation,
    spectral_flatness,
    synthetic_rir,
)

CFG = MelConfig()


def tone(freq, seconds=0.5, amp=0.1, sr=8000):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def test_frame_count_and_shape():
    w = Waveform(np.zeros(1000))
    fs = extract_features(w, CFG)
    assert fs.frames.shape == (1 + (1000 - 200) // 80, 20)
    assert fs.frame_shift == pytest.approx(0.01)
    assert fs.mel_fingerprint == CFG.fingerprint()


def test_silence_hits_the_log_floor():
    fs = extract_features(Waveform(np.zeros(800)), CFG)
    np.testing.assert_allclose(fs.frames, np.log(CFG.log_floor))


def test_tone_peaks_in_the_nearest_channel():
    fs = extract_features(tone(1000.0), CFG)
    centers = mel_center_frequencies(CFG)
    expected = int(np.argmin(np.abs(centers - 1000.0)))
    peaks = np.argmax(fs.frames, axis=1)
    assert np.all(np.abs(peaks - expected) <= 1)


def test_shifting_by_one_hop_shifts_features_by_one_frame():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, size=2000)
    full = extract_features(Waveform(x), CFG).frames
    shifted = extract_features(Waveform(x[CFG.hop_length:]), CFG).frames
    np.testing.assert_allclose(shifted, full[1:1 + shifted.shape[0]], atol=1e-10)


def test_filterbank_triangles():
    fb = mel_filterbank(CFG)
    assert fb.shape == (CFG.n_mels, CFG.n_fft // 2 + 1)
    assert fb.min() >= 0.0 and fb.max() <= 1.0 + 1e-12


def test_full_scale_frontend():
    cfg = MelConfig.full_scale()
    fs = extract_features(Waveform(np.zeros(16000), sample_rate=16000), cfg)
    assert fs.frames.shape == (98, 80)
    assert fs.mel_fingerprint != CFG.fingerprint()


def test_invalid_inputs():
    with pytest.raises(AudioError):
        extract_features(Waveform(np.zeros(100)), CFG)
    with pytest.raises(AudioError):
        extract_features(Waveform(np.zeros(1000), sample_rate=16000), CFG)
    with pytest.raises(AudioError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(AudioError):
        MelConfig(frame_length=80, hop_length=80).validate()


def test_clean_augmentation_is_identity():
    w = tone(440.0)
    out = augment(w, np.inf, np.array([1.0]), np.random.default_rng(0))
    np.testing.assert_array_equal(out.samples, w.samples)


def test_impulse_delay_shifts_the_signal():
    w = tone(440.0)
    out = augment(w, np.inf, np.array([0.0, 0.0, 1.0]), np.random.default_rng(0))
    np.testing.assert_allclose(out.samples[2:], w.samples[:-2], atol=1e-12)
    assert len(out) == len(w)


@pytest.mark.parametrize("snr_db", [5.0, 10.0, 20.0])
def test_noise_is_added_at_the_requested_snr(snr_db):
    w = tone(440.0)
    out = augment(w, snr_db, None, np.random.default_rng(3))
    noise = out.samples - w.samples
    measured = 10 * np.log10(np.sum(w.samples ** 2) / np.sum(noise ** 2))
    assert measured == pytest.approx(snr_db, abs=1e-6)


def test_augment_rejects_bad_requests():
    w = tone(440.0)
    with pytest.raises(AudioError):
        augment(w, np.nan, None, np.random.default_rng(0))
    with pytest.raises(AudioError):
        augment(Waveform(np.zeros(400)), 10.0, None, np.random.default_rng(0))


def test_augmented_output_stays_in_range():
    loud = Waveform(np.sign(np.sin(np.arange(4000) / 5.0)) * 0.99)
    out = augment(loud, 0.0, synthetic_rir(0.2, 8000, np.random.default_rng(1)), np.random.default_rng(2))
    assert np.max(np.abs(out.samples)) <= 1.0


def test_random_augmentation_disabled_returns_input():
    w = tone(440.0)
    assert random_augmentation(w, AugmentConfig(enabled=False), np.random.default_rng(0)) is w


def test_white_noise_is_flatter_than_a_tone():
    noise = Waveform(np.random.default_rng(0).uniform(-0.3, 0.3, size=4000))
    assert spectral_flatness(noise, CFG) > spectral_flatness(tone(440.0), CFG)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.integers(200, 1200), elements=st.floats(-1, 1, allow_nan=False)))
def test_features_are_always_finite(samples):
    assert np.all(np.isfinite(extract_features(Waveform(samples), CFG).frames))
