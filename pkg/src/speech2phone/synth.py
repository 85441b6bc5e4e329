"""Synthetic voices for tests and demos.

Each speaker is a harmonic stack with its own fundamental, vocal-tract
length (formant scaling), spectral tilt and one extra fixed resonance.
Readings string together short voiced "syllables" with random vowel
formants and pauses; the anchor capture holds a steady /a/.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioBuffer, write_wav
from .features import DEFAULT_CONFIG, Instance, MfccConfig, extract_anchor_target, extract_instances

# (F1, F2, F3) in Hz for a handful of vowels; "a" doubles as the anchor phoneme
VOWELS = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
}
FORMANT_BANDWIDTH = (90.0, 110.0, 170.0)


@dataclass(frozen=True)
class SyntheticSpeaker:
    speaker_id: str
    f0: float
    tract: float
    tilt: float
    resonance: float


def make_speakers(n: int, seed: int = 0, prefix: str = "spk") -> list[SyntheticSpeaker]:
    rng = np.random.default_rng(seed)
    f0s = np.linspace(85.0, 230.0, n) if n > 1 else np.array([140.0])
    f0s = f0s * rng.uniform(0.97, 1.03, n)
    order = rng.permutation(n)
    speakers = []
    for i in range(n):
        speakers.append(SyntheticSpeaker(
            speaker_id=f"{prefix}{i:02d}",
            f0=float(f0s[order[i]]),
            tract=float(rng.uniform(0.82, 1.22)),
            tilt=float(rng.uniform(-14.0, -6.0)),
            resonance=float(rng.uniform(2600.0, 4200.0)),
        ))
    return speakers


def _envelope(freqs, formants, spk: SyntheticSpeaker):
    amp = np.zeros_like(freqs)
    for f, bw in zip(formants, FORMANT_BANDWIDTH):
        amp += np.exp(-0.5 * ((freqs - f * spk.tract) / bw) ** 2)
    amp += 0.5 * np.exp(-0.5 * ((freqs - spk.resonance) / 250.0) ** 2)
    amp *= 10.0 ** (spk.tilt * np.log2(np.maximum(freqs, 50.0) / 100.0) / 20.0)
    return amp


def _voiced(spk: SyntheticSpeaker, formants, n: int, sr: int, rng, f0_scale: float = 1.0):
    t = np.arange(n) / sr
    f0 = spk.f0 * f0_scale * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 6.3)))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(min(sr / 2 - 500, 5500) // (spk.f0 * f0_scale * 1.05))
    harmonics = np.arange(1, n_harm + 1)
    amps = _envelope(harmonics * spk.f0 * f0_scale, formants, spk)
    x = np.sin(np.outer(phase, harmonics) + rng.uniform(0, 2 * np.pi, n_harm)) @ amps
    return x / (np.max(np.abs(x)) + 1e-12)


def synth_reading(spk: SyntheticSpeaker, seconds: float, seed: int = 0, sr: int = CANONICAL_RATE) -> np.ndarray:
    rng = np.random.default_rng(seed)
    total = int(round(seconds * sr))
    out = np.zeros(total)
    pos = 0
    names = list(VOWELS)
    while pos < total:
        n = int(rng.uniform(0.18, 0.40) * sr)
        vowel = VOWELS[names[rng.integers(len(names))]]
        seg = _voiced(spk, vowel, n, sr, rng, f0_scale=rng.uniform(0.9, 1.1))
        ramp = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / (0.02 * sr))
        end = min(total, pos + n)
        out[pos:end] = (0.5 * seg * ramp)[:end - pos]
        pos = end + int(rng.uniform(0.02, 0.12) * sr)
    out += 0.003 * rng.standard_normal(total)
    return np.clip(out, -1.0, 1.0)


def synth_anchor(spk: SyntheticSpeaker, seconds: float = 3.0, seed: int = 0, sr: int = CANONICAL_RATE) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sr))
    x = 0.5 * _voiced(spk, VOWELS["a"], n, sr, rng) + 0.003 * rng.standard_normal(n)
    return np.clip(x, -1.0, 1.0)


def speaker_instances(spk: SyntheticSpeaker, reading_seconds: float, seed: int = 0,
                      cfg: MfccConfig = DEFAULT_CONFIG) -> list[Instance]:
    """Instances of one synthetic speaker, each carrying the speaker's anchor target."""
    reading = synth_reading(spk, reading_seconds, seed, cfg.sample_rate)
    target = extract_anchor_target(synth_anchor(spk, 3.0, seed + 1, cfg.sample_rate), cfg)
    instances = extract_instances(reading, cfg, spk.speaker_id, source=f"synthetic:{spk.speaker_id}")
    for inst in instances:
        inst.target = target
    return instances


def corpus_instances(speakers, reading_seconds: float = 12.0, seed: int = 0,
                     cfg: MfccConfig = DEFAULT_CONFIG) -> list[Instance]:
    out = []
    for i, spk in enumerate(speakers):
        out += speaker_instances(spk, reading_seconds, seed * 1000 + 2 * i, cfg)
    return out


def write_corpus(directory, speakers, reading_seconds: float = 12.0, seed: int = 0,
                 sr: int = CANONICAL_RATE) -> Path:
    """Write reading/anchor WAVs for every speaker plus a ``manifest.tsv``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# path\tspeaker_id\tkind\tlanguage"]
    for i, spk in enumerate(speakers):
        s = seed * 1000 + 2 * i
        write_wav(directory / f"{spk.speaker_id}_reading.wav", AudioBuffer(synth_reading(spk, reading_seconds, s, sr), sr))
        write_wav(directory / f"{spk.speaker_id}_anchor.wav", AudioBuffer(synth_anchor(spk, 3.0, s + 1, sr), sr))
        lines.append(f"{spk.speaker_id}_reading.wav\t{spk.speaker_id}\treading\tsynthetic")
        lines.append(f"{spk.speaker_id}_anchor.wav\t{spk.speaker_id}\tanchor\tsynthetic")
    manifest = directory / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
