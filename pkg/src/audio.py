"""
Log-mel frontend and waveform augmentation (additive noise + reverberation).

Framing is uncentered: T = 1 + (num_samples - frame_length) // hop_length, so
shifting a waveform by one hop shifts its features by exactly one frame.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import signal

logger = logging.getLogger(__name__)


class AudioError(ValueError):
    """Raised for invalid waveforms, frontend configs or augmentation requests."""


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 8000
    frame_length: int = 200
    hop_length: int = 80
    n_mels: int = 20
    fmin: float = 0.0
    fmax: Optional[float] = None
    log_floor: float = 1e-6

    @classmethod
    def full_scale(cls) -> "MelConfig":
        """16 kHz, 25 ms / 10 ms framing, 80 channels."""
        return cls(sample_rate=16000, frame_length=400, hop_length=160, n_mels=80)

    @property
    def top_freq(self) -> float:
        return float(self.fmax) if self.fmax is not None else self.sample_rate / 2.0

    @property
    def n_fft(self) -> int:
        return int(2 ** np.ceil(np.log2(self.frame_length)))

    def validate(self) -> None:
        if not self.frame_length > self.hop_length > 0:
            raise AudioError(f"need frame_length > hop_length > 0, got {self.frame_length}/{self.hop_length}")
        if self.n_mels < 1:
            raise AudioError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0 <= self.fmin < self.top_freq <= self.sample_rate / 2.0:
            raise AudioError(f"need 0 <= fmin < fmax <= Nyquist, got {self.fmin}/{self.top_freq}")
        if self.log_floor <= 0:
            raise AudioError("log_floor must be positive")

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges the training-time augmentation draws from."""

    snr_db_range: Tuple[float, float] = (10.0, 30.0)
    rir_decay_range: Tuple[float, float] = (0.0, 0.2)
    enabled: bool = True


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_shift: float
    mel_fingerprint: str

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


# ---------------------------------------------------------------------------
# Frontend
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    points = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.top_freq), cfg.n_mels + 2)
    return mel_to_hz(points[1:-1])


@lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) triangular filters, peak 1 at each center."""
    cfg.validate()
    points = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.top_freq), cfg.n_mels + 2))
    bins = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    fb = np.zeros((cfg.n_mels, bins.size))
    for k in range(cfg.n_mels):
        lo, center, hi = points[k], points[k + 1], points[k + 2]
        rising = (bins - lo) / (center - lo)
        falling = (hi - bins) / (hi - center)
        fb[k] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def num_frames(num_samples: int, cfg: MelConfig) -> int:
    return 1 + (num_samples - cfg.frame_length) // cfg.hop_length


def stft_magnitude(samples: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """(T, n_fft // 2 + 1) magnitude spectrogram, Hann-windowed, uncentered."""
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.frame_length)[:: cfg.hop_length]
    window = signal.get_window("hann", cfg.frame_length, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=-1))


def extract_features(w: Waveform, cfg: MelConfig = MelConfig()) -> FeatureSequence:
    """Magnitude STFT -> mel filterbank -> log(max(x, floor))."""
    cfg.validate()
    if w.sample_rate != cfg.sample_rate:
        raise AudioError(f"waveform rate {w.sample_rate} Hz does not match mel config {cfg.sample_rate} Hz")
    if len(w) < cfg.frame_length:
        raise AudioError(f"waveform of {len(w)} samples is shorter than one frame ({cfg.frame_length})")
    mag = stft_magnitude(w.samples, cfg)
    mel = mag @ mel_filterbank(cfg).T
    frames = np.log(np.maximum(mel, cfg.log_floor))
    return FeatureSequence(frames=frames, frame_shift=cfg.hop_length / cfg.sample_rate,
                           mel_fingerprint=cfg.fingerprint())


def spectral_flatness(w: Waveform, cfg: MelConfig = MelConfig()) -> float:
    """Mean over frames of geometric / arithmetic mean of the power spectrum."""
    power = stft_magnitude(w.samples, cfg) ** 2 + 1e-12
    geo = np.exp(np.mean(np.log(power), axis=-1))
    arith = np.mean(power, axis=-1)
    return float(np.mean(geo / arith))


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def synthetic_rir(decay_s: float, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Direct path followed by an exponentially decaying Gaussian tail (-60 dB at decay_s)."""
    n = int(round(decay_s * sample_rate))
    if n <= 1:
        return np.ones(1)
    t = np.arange(1, n) / sample_rate
    tail = rng.standard_normal(n - 1) * np.exp(-6.908 * t / decay_s) * 0.3
    return np.concatenate([[1.0], tail])


def _convolve(samples: np.ndarray, rir: np.ndarray) -> np.ndarray:
    # direct method keeps short kernels (unit impulse, delays) exact
    method = "direct" if rir.size <= 32 else "fft"
    return signal.convolve(samples, rir, mode="full", method=method)[: samples.size]


def augment(
    w: Waveform,
    snr_db: float,
    rir: Optional[np.ndarray],
    rng: np.random.Generator,
) -> Waveform:
    """
    Reverberate then add white Gaussian noise at exactly `snr_db`.

    snr_db=+inf adds no noise. The result is peak-normalized only when it
    would clip.
    """
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise AudioError(f"snr_db must be finite or +inf, got {snr_db}")
    x = w.samples
    if rir is not None:
        rir = np.asarray(rir, dtype=np.float64)
        if rir.ndim != 1 or rir.size < 1:
            raise AudioError("rir must be a non-empty 1-D array")
        x = _convolve(x, rir)
    if np.isfinite(snr_db):
        signal_energy = float(np.sum(x * x))
        if signal_energy == 0.0:
            raise AudioError("cannot add noise at a finite SNR to an all-zero signal")
        noise = rng.standard_normal(x.size)
        noise *= np.sqrt(signal_energy / (float(np.sum(noise * noise)) * 10.0 ** (snr_db / 10.0)))
        x = x + noise
    else:
        x = np.array(x, dtype=np.float64, copy=True)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    return Waveform(x, w.sample_rate)


def random_augmentation(w: Waveform, cfg: AugmentConfig, rng: np.random.Generator) -> Waveform:
    """Draw an SNR and an RIR decay time from the configured ranges and apply augment."""
    if not cfg.enabled:
        return w
    snr = float(rng.uniform(*cfg.snr_db_range))
    decay = float(rng.uniform(*cfg.rir_decay_range))
    rir = synthetic_rir(decay, w.sample_rate, rng)
    return augment(w, snr, rir, rng)
