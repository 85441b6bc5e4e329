"""WAV I/O, channel mixing and band-limited resampling."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ChannelMismatch, EmptyAudio, MalformedContainer, UnsupportedEncoding

CANONICAL_RATE = 22050

RESAMPLE_TAPS = 64
RESAMPLE_CUTOFF = 0.95
KAISER_BETA = 7.0

_WAVE_PCM = 0x0001
_WAVE_FLOAT = 0x0003
_WAVE_EXTENSIBLE = 0xFFFE
# trailing 14 bytes shared by the KSDATAFORMAT_SUBTYPE_* GUIDs
_GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


@dataclass
class AudioBuffer:
    """Sample amplitudes in [-1, 1] at ``sample_rate`` Hz.

    Multichannel audio is stored interleaved; ``channels`` records the count
    so that :func:`to_mono` can fold it.
    """

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels < 1:
            raise ValueError(f"channels must be positive, got {self.channels}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[0] // self.channels

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate


def _parse_fmt(body: bytes) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise MalformedContainer("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", body)
    if tag == _WAVE_EXTENSIBLE:
        if len(body) < 40:
            raise MalformedContainer("WAVE_FORMAT_EXTENSIBLE fmt chunk shorter than 40 bytes")
        guid = body[24:40]
        if guid[2:] != _GUID_TAIL:
            raise UnsupportedEncoding("unrecognised WAVE_FORMAT_EXTENSIBLE sub-format")
        tag = struct.unpack_from("<H", guid)[0]
    if channels == 0 or rate == 0:
        raise MalformedContainer("fmt chunk declares zero channels or zero sample rate")
    if block_align != channels * (bits // 8) or bits % 8:
        raise MalformedContainer(f"inconsistent block_align {block_align} for {channels} x {bits}-bit")
    return tag, channels, rate, bits


def _decode(data: bytes, tag: int, bits: int) -> np.ndarray:
    if tag == _WAVE_PCM:
        if bits == 16:
            return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
        if bits == 24:
            raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
            ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
            return ints.astype(np.float64) / float(1 << 23)
        if bits == 32:
            return np.frombuffer(data, dtype="<i4").astype(np.float64) / float(1 << 31)
        raise UnsupportedEncoding(f"{bits}-bit PCM is not supported (16, 24, 32 only)")
    if tag == _WAVE_FLOAT:
        if bits != 32:
            raise UnsupportedEncoding(f"{bits}-bit float is not supported (32 only)")
        values = np.frombuffer(data, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise MalformedContainer("float samples contain NaN or infinity")
        return np.clip(values, -1.0, 1.0)
    raise UnsupportedEncoding(f"compressed or unknown WAVE format tag 0x{tag:04x}")


def load_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (PCM-16/24/32 or float-32) into an :class:`AudioBuffer`.

    Unknown chunks are skipped. Channels stay interleaved.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: not a RIFF/WAVE file")
    riff_size = struct.unpack_from("<I", blob, 4)[0]
    if riff_size + 8 > len(blob):
        raise MalformedContainer(f"{path}: RIFF size {riff_size} exceeds file length {len(blob)}")
    end = riff_size + 8

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= end:
        chunk_id = blob[pos:pos + 4]
        size = struct.unpack_from("<I", blob, pos + 4)[0]
        body_start = pos + 8
        if body_start + size > end:
            raise MalformedContainer(f"{path}: chunk {chunk_id!r} overruns the container")
        body = blob[body_start:body_start + size]
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            data = body
        pos = body_start + size + (size & 1)

    if fmt is None or data is None:
        raise MalformedContainer(f"{path}: missing {'fmt ' if fmt is None else 'data'} chunk")
    tag, channels, rate, bits = fmt
    if len(data) % (channels * bits // 8):
        raise MalformedContainer(f"{path}: data chunk is not a whole number of frames")
    samples = _decode(data, tag, bits)
    if samples.size == 0:
        raise EmptyAudio(f"{path}: no samples")
    return AudioBuffer(samples, rate, channels)


def write_wav(path, buf: AudioBuffer) -> None:
    """Write ``buf`` as 16-bit PCM (values are rounded and clipped to the code range)."""
    codes = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = codes.tobytes()
    block_align = 2 * buf.channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _WAVE_PCM, buf.channels, buf.sample_rate,
        buf.sample_rate * block_align, block_align, 16,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        if len(payload) & 1:
            fh.write(b"\x00")


def to_mono(buf: AudioBuffer, channels: int | None = None) -> AudioBuffer:
    """Average interleaved channels frame by frame."""
    channels = buf.channels if channels is None else channels
    if channels < 1:
        raise ChannelMismatch(f"channel count must be positive, got {channels}")
    if channels == 1:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate, 1)
    if len(buf) % channels:
        raise ChannelMismatch(f"{len(buf)} samples cannot be split into {channels} channels")
    frames = buf.samples.reshape(-1, channels)
    return AudioBuffer(frames.mean(axis=1), buf.sample_rate, 1)


@lru_cache(maxsize=16)
def _filter_table(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc, one row of ``RESAMPLE_TAPS`` weights per output phase."""
    taps = RESAMPLE_TAPS
    half = taps // 2
    lead = half - 1
    # cutoff in cycles per input sample, relative to the input Nyquist
    fc = RESAMPLE_CUTOFF * min(up, down) / down
    phase = np.arange(up, dtype=np.float64)[:, None] / up
    t = phase + lead - np.arange(taps, dtype=np.float64)[None, :]
    window = np.i0(KAISER_BETA * np.sqrt(np.clip(1.0 - (t / half) ** 2, 0.0, None))) / np.i0(KAISER_BETA)
    table = fc * np.sinc(fc * t) * window
    table /= table.sum(axis=1, keepdims=True)
    return table


def resample(buf: AudioBuffer, target_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """Polyphase windowed-sinc conversion of a mono buffer to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if buf.channels != 1:
        raise ChannelMismatch("resample expects mono audio; call to_mono first")
    if buf.sample_rate == target_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate)
    g = math.gcd(buf.sample_rate, target_rate)
    up, down = target_rate // g, buf.sample_rate // g
    n_out = -(-len(buf) * up // down)
    y = kernels.polyphase(buf.samples, _filter_table(up, down), up, down, n_out)
    return AudioBuffer(np.clip(y, -1.0, 1.0), target_rate)


def load_canonical(path, target_rate: int = CANONICAL_RATE) -> AudioBuffer:
    """load_wav -> to_mono -> resample: the pipeline's entry point for audio files."""
    return resample(to_mono(load_wav(path)), target_rate)
