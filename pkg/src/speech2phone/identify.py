"""Open-set identity store: enrollment, 1-NN / pair-comparator identification, ``.s2db`` files.

Stored vectors are rounded to float32 when enrolled, which is what the file
holds, so a database behaves identically before and after a save/load cycle.
"""

from __future__ import annotations

import warnings
from collections import Counter
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (ChecksumMismatch, DimensionMismatch, EmbedderMismatchWarning, EmptyDatabase,
                     EmptyEnrollment, MalformedFile, VersionMismatch, WrongKind)
from .fileformat import Reader, Writer
from .models import EMBEDDING_DIM, PAIR_COMPARATOR, SpeakerEmbedding, same_speaker_probability

DB_MAGIC = b"S2DB"
DB_VERSION = 1
_FLAG_L2 = 1


def _l2(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


class EmbeddingDb:
    """Speaker id -> enrolled embeddings, kept in insertion order."""

    def __init__(self, dim: int = EMBEDDING_DIM, created_with: int = 0, l2_normalize: bool = False):
        self.dim = int(dim)
        self.created_with = int(created_with)
        self.l2_normalize = bool(l2_normalize)
        self._labels: list[str] = []
        self._rows: list[np.ndarray] = []
        self._matrix = None

    def __len__(self):
        return len(self._rows)

    @property
    def speakers(self) -> list[str]:
        return list(dict.fromkeys(self._labels))

    @property
    def entries(self) -> dict[str, list[np.ndarray]]:
        out: dict[str, list[np.ndarray]] = {}
        for label, row in zip(self._labels, self._rows):
            out.setdefault(label, []).append(row)
        return out

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack(self._rows) if self._rows else np.empty((0, self.dim))
        return self._matrix

    def prepare_query(self, query) -> np.ndarray:
        q = np.asarray(getattr(query, "vector", query), dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise DimensionMismatch(f"query has length {q.shape[0]}, database holds {self.dim}-d vectors")
        return _l2(q) if self.l2_normalize else q

    def _append(self, speaker_id: str, rows: np.ndarray):
        for row in rows:
            self._labels.append(speaker_id)
            self._rows.append(row)
        self._matrix = None


def _as_rows(embeddings, dim) -> np.ndarray:
    items = [getattr(e, "vector", e) for e in embeddings] if not isinstance(embeddings, np.ndarray) else embeddings
    rows = np.asarray(items, dtype=np.float64)
    if rows.size == 0:
        raise EmptyEnrollment("no embeddings to enroll")
    rows = np.atleast_2d(rows)
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise DimensionMismatch(f"embeddings of shape {rows.shape} do not match database dimension {dim}")
    if not np.all(np.isfinite(rows)):
        raise ValueError("embeddings must be finite")
    return rows


def enroll(db: EmbeddingDb, speaker_id: str, embeddings, mode: str = "all") -> EmbeddingDb:
    """Append a speaker's embeddings; ``mode="centroid"`` stores their mean instead."""
    speaker_id = str(speaker_id)
    if not speaker_id:
        raise ValueError("speaker id must be a non-empty string")
    rows = _as_rows(embeddings, db.dim)
    if mode == "centroid":
        rows = rows.mean(axis=0, keepdims=True)
    elif mode != "all":
        raise ValueError(f"unknown enrollment mode {mode!r}")
    if db.l2_normalize:
        rows = _l2(rows)
    db._append(speaker_id, rows.astype(np.float32).astype(np.float64))
    return db


def nearest(matrix, labels, query, exclude: int | None = None) -> tuple[int, float]:
    """Index and distance of the closest row.

    Equal squared distances go to the lexicographically smallest label, then
    to the earliest row.
    """
    d2 = kernels.sq_distances(query, matrix)
    if exclude is not None:
        d2[exclude] = np.inf
    best = d2.min()
    if not np.isfinite(best):
        raise EmptyDatabase("no candidate embeddings")
    tied = np.flatnonzero(d2 == best)
    winner = min(tied.tolist(), key=lambda i: (labels[i], i))
    return winner, float(np.sqrt(best))


def identify_knn(db: EmbeddingDb, query) -> tuple[str, float]:
    """1-nearest-neighbour label and Euclidean distance."""
    if not len(db):
        raise EmptyDatabase("database has no enrolled speakers")
    idx, dist = nearest(db.matrix(), db._labels, db.prepare_query(query))
    return db._labels[idx], dist


def identify_pair(db: EmbeddingDb, comparator, query) -> tuple[str, float]:
    """Label of the stored embedding the comparator most believes shares the query's speaker."""
    if comparator.kind != PAIR_COMPARATOR:
        raise WrongKind(f"expected a pair_comparator model, got {comparator.kind}")
    if not len(db):
        raise EmptyDatabase("database has no enrolled speakers")
    q = db.prepare_query(query)
    matrix = db.matrix()
    probs = same_speaker_probability(comparator, np.tile(q, (matrix.shape[0], 1)), matrix)
    tied = np.flatnonzero(probs == probs.max())
    winner = min(tied.tolist(), key=lambda i: (db._labels[i], i))
    return db._labels[winner], float(probs[winner])


def majority_verdict(results) -> tuple[str, float]:
    """Aggregate per-window ``(speaker, distance)`` results by vote.

    Ties between equally voted speakers go to the one owning the single
    closest window.
    """
    if not results:
        raise ValueError("no window results to aggregate")
    votes = Counter(s for s, _ in results)
    top = max(votes.values())
    leaders = {s for s, c in votes.items() if c == top}
    speaker, dist = min(((s, d) for s, d in results if s in leaders), key=lambda r: (r[1], r[0]))
    return speaker, dist


def db_to_bytes(db: EmbeddingDb) -> bytes:
    w = Writer()
    w.raw(DB_MAGIC)
    w.u32(DB_VERSION)
    w.u32(db.dim)
    w.u32(db.created_with)
    w.u32(_FLAG_L2 if db.l2_normalize else 0)
    grouped = db.entries
    w.u32(len(grouped))
    for speaker, rows in grouped.items():
        w.text(speaker)
        w.u32(len(rows))
        w.f32(np.stack(rows))
    return w.finish()


def _parse_db(r: Reader):
    if r.raw(4) != DB_MAGIC:
        raise MalformedFile("bad magic: not an embedding database")
    version = r.u32()
    if version != DB_VERSION:
        raise VersionMismatch(f"database format {version}, this build reads {DB_VERSION}")
    dim, checksum, flags = r.u32(), r.u32(), r.u32()
    if dim == 0:
        raise MalformedFile("database dimension is zero")
    groups = []
    for _ in range(r.u32()):
        speaker = r.text()
        count = r.u32()
        groups.append((speaker, r.f32(count * dim).reshape(count, dim)))
    r.done()
    return dim, checksum, flags, groups


def db_from_bytes(blob: bytes, embedder_checksum: int | None = None, strict: bool = False) -> EmbeddingDb:
    """Decode a database; a different ``embedder_checksum`` warns, or raises when ``strict``."""
    dim, checksum, flags, groups = Reader(blob).parse(_parse_db)
    db = EmbeddingDb(dim, checksum, bool(flags & _FLAG_L2))
    for speaker, rows in groups:
        if not speaker or not len(rows):
            raise MalformedFile("empty speaker id or speaker without embeddings")
        db._append(speaker, rows)

    if embedder_checksum is not None and embedder_checksum != checksum:
        msg = f"database built with embedder {checksum:08x}, opened with {embedder_checksum:08x}"
        if strict:
            raise ChecksumMismatch(msg)
        warnings.warn(msg, EmbedderMismatchWarning, stacklevel=2)
    return db


def save_db(db: EmbeddingDb, path) -> None:
    Path(path).write_bytes(db_to_bytes(db))


def load_db(path, embedder_checksum: int | None = None, strict: bool = False) -> EmbeddingDb:
    return db_from_bytes(Path(path).read_bytes(), embedder_checksum, strict)


__all__ = ["EmbeddingDb", "SpeakerEmbedding", "enroll", "identify_knn", "identify_pair", "nearest",
           "majority_verdict", "save_db", "load_db", "db_to_bytes", "db_from_bytes"]
