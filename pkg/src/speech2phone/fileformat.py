"""Little-endian binary records with a trailing CRC-32, shared by model and database files."""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import CorruptedFile, MalformedFile


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, b: bytes):
        self._parts.append(bytes(b))

    def u16(self, v: int):
        self._parts.append(struct.pack("<H", v))

    def u32(self, v: int):
        self._parts.append(struct.pack("<I", v))

    def f32(self, arr):
        self._parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def text(self, s: str):
        b = s.encode("utf-8")
        if len(b) > 0xFFFF:
            raise ValueError("string too long for record")
        self.u16(len(b))
        self._parts.append(b)

    def finish(self) -> bytes:
        body = b"".join(self._parts)
        return body + struct.pack("<I", zlib.crc32(body))


class Reader:
    """Cursor over a record body.

    Short reads raise :class:`MalformedFile`; :meth:`done` then verifies that
    the body was consumed exactly and that the trailing CRC-32 matches. Use
    :meth:`parse` so that a parse failure on a file whose CRC is wrong is
    reported as corruption rather than as whatever field happened to break.
    """

    def __init__(self, blob: bytes, crc_error=CorruptedFile):
        if len(blob) < 4:
            raise crc_error("file too short to hold a checksum")
        self._buf = blob[:-4]
        self._stored = struct.unpack("<I", blob[-4:])[0]
        self._crc_error = crc_error
        self._pos = 0

    @property
    def crc_ok(self) -> bool:
        return zlib.crc32(self._buf) == self._stored

    def parse(self, fn):
        """Run ``fn(self)``; structural errors become CRC errors when the checksum is bad."""
        try:
            return fn(self)
        except MalformedFile as exc:
            if isinstance(exc, self._crc_error) or self.crc_ok:
                raise
            raise self._crc_error(f"CRC-32 mismatch: file is corrupted ({exc})") from exc

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._buf):
            raise MalformedFile("unexpected end of file")
        out = self._buf[self._pos:self._pos + n]
        self._pos += n
        return out

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * count), dtype="<f4").astype(np.float64)

    def text(self) -> str:
        try:
            return self._take(self.u16()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFile(f"invalid UTF-8 string: {exc}") from None

    def done(self):
        if self._pos != len(self._buf):
            raise MalformedFile(f"{len(self._buf) - self._pos} trailing bytes")
        if not self.crc_ok:
            raise self._crc_error("CRC-32 mismatch: file is corrupted")


def crc_of(blob: bytes) -> int:
    """The stored trailing CRC of a finished record."""
    return struct.unpack("<I", blob[-4:])[0]
