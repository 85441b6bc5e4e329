"""MFCC extraction and the fixed-size instance windows built on top of it.

Every stage reproduces the classic librosa-0.6 defaults explicitly: centred
reflect-padded frames, periodic Hann window, power spectrum, 128 Slaney mel
filters with area normalisation, dB conversion with an 80 dB dynamic range,
and an orthonormal DCT-II. Matrices are laid out frames x coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Hashable

import numpy as np

from .audio import CANONICAL_RATE, AudioBuffer
from .errors import EmptySignal, TooShort

INSTANCE_SECONDS = 5
ANCHOR_SECONDS = 1


@dataclass(frozen=True)
class MfccConfig:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    n_mfcc: int = 13
    sample_rate: int = CANONICAL_RATE
    fmin: float = 0.0
    fmax: float | None = None

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2.0)
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must be in (0, n_fft], got hop={self.hop} n_fft={self.n_fft}")
        if not 0 < self.n_mfcc <= self.n_mels:
            raise ValueError(f"n_mfcc must be in (0, n_mels], got {self.n_mfcc}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2.0:
            raise ValueError(f"need 0 <= fmin < fmax <= sr/2, got fmin={self.fmin} fmax={self.fmax}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    @property
    def instance_length(self) -> int:
        return self.n_frames(INSTANCE_SECONDS * self.sample_rate) * self.n_mfcc

    @property
    def anchor_length(self) -> int:
        return self.n_frames(ANCHOR_SECONDS * self.sample_rate) * self.n_mfcc


DEFAULT_CONFIG = MfccConfig()


@dataclass
class MfccMatrix:
    values: np.ndarray
    frame_rate: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def flatten(self) -> np.ndarray:
        """Frame-major (time outer, coefficient inner) vector."""
        return np.ascontiguousarray(self.values).reshape(-1)


@dataclass
class Instance:
    """A 5 s feature window, optionally paired with its speaker's anchor target."""

    input: np.ndarray
    speaker_id: Hashable
    source_offset_s: int = 0
    target: np.ndarray | None = None
    source: str = field(default="", compare=False)


def periodic_hann(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def stft_power(samples, cfg: MfccConfig = DEFAULT_CONFIG) -> np.ndarray:
    """|DFT|^2 of centred, Hann-windowed frames; shape (1 + len // hop, n_fft // 2 + 1)."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptySignal("cannot frame an empty signal")
    pad = cfg.n_fft // 2
    padded = np.pad(x, pad, mode="reflect") if x.size > 1 else np.pad(x, pad, mode="edge")
    n_frames = cfg.n_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)[::cfg.hop][:n_frames]
    spectrum = np.fft.rfft(frames * periodic_hann(cfg.n_fft), axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = hz / f_sp
    return np.where(hz >= min_log_hz,
                    min_log_mel + np.log(np.maximum(hz, min_log_hz) / min_log_hz) / logstep,
                    mel)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(mel >= min_log_mel,
                    min_log_hz * np.exp(logstep * (mel - min_log_mel)),
                    f_sp * mel)


def mel_band_edges(cfg: MfccConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz): filter r spans edges[r]..edges[r + 2], peaking at edges[r + 1]."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=8)
def _mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    edges = mel_band_edges(cfg)
    bins = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.n_bins)
    widths = np.diff(edges)
    ramps = edges[:, None] - bins[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def mel_filterbank(cfg: MfccConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Triangular Slaney filters, area-normalised; shape (n_mels, n_fft // 2 + 1)."""
    return _mel_filterbank(cfg)


def power_to_db(S, amin: float = 1e-10, top_db: float = 80.0) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    db = 10.0 * np.log10(np.maximum(S, amin))
    if db.size:
        db = np.maximum(db, db.max() - top_db)
    return db


@lru_cache(maxsize=8)
def dct_basis(n_out: int, n_in: int) -> np.ndarray:
    """Rows of the orthonormal DCT-II matrix, truncated to ``n_out`` coefficients."""
    samples = np.arange(1, 2 * n_in, 2, dtype=np.float64) * np.pi / (2.0 * n_in)
    basis = np.empty((n_out, n_in))
    basis[0] = 1.0 / np.sqrt(n_in)
    for i in range(1, n_out):
        basis[i] = np.cos(i * samples) * np.sqrt(2.0 / n_in)
    basis.setflags(write=False)
    return basis


def mfcc(buf, cfg: MfccConfig = DEFAULT_CONFIG) -> MfccMatrix:
    """MFCC matrix of a mono buffer (or bare sample array) at the configured rate."""
    if isinstance(buf, AudioBuffer):
        if buf.channels != 1:
            raise ValueError("mfcc expects mono audio")
        if buf.sample_rate != cfg.sample_rate:
            raise ValueError(f"audio at {buf.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
        samples = buf.samples
    else:
        samples = buf
    power = stft_power(samples, cfg)
    mel = power @ mel_filterbank(cfg).T
    log_mel = power_to_db(mel)
    coeffs = log_mel @ dct_basis(cfg.n_mfcc, cfg.n_mels).T
    return MfccMatrix(coeffs, cfg.frame_rate)


def _samples(buf) -> np.ndarray:
    return buf.samples if isinstance(buf, AudioBuffer) else np.asarray(buf, dtype=np.float64)


def extract_instances(buf, cfg: MfccConfig = DEFAULT_CONFIG, speaker_id=None,
                      source: str = "") -> list[Instance]:
    """Slide a 5 s window in 1 s steps; each slice gets its own MFCC pass."""
    x = _samples(buf)
    sr = cfg.sample_rate
    width = INSTANCE_SECONDS * sr
    out = []
    for k in range(x.shape[0] // sr - INSTANCE_SECONDS + 1):
        vec = mfcc(x[k * sr:k * sr + width], cfg).flatten()
        out.append(Instance(vec, speaker_id, k, source=source))
    return out


def extract_anchor_target(buf, cfg: MfccConfig = DEFAULT_CONFIG) -> np.ndarray:
    """MFCCs of the central second of an anchor-phoneme capture, flattened."""
    x = _samples(buf)
    sr = cfg.sample_rate
    if x.shape[0] < sr:
        raise TooShort(f"anchor capture has {x.shape[0]} samples, need at least {sr}")
    start = (x.shape[0] - sr) // 2
    return mfcc(x[start:start + sr], cfg).flatten()
