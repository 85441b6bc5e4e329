"""Corpus manifests, instance materialisation, partitioning and pair building."""

from __future__ import annotations

import logging
import math
import string
import zipfile
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .audio import load_canonical
from .errors import InsufficientInstances, MissingAnchor, ParseError, SingleSpeaker, Speech2PhoneError
from .features import DEFAULT_CONFIG, Instance, MfccConfig, extract_anchor_target, extract_instances

log = logging.getLogger(__name__)


class Kind(str, Enum):
    READING = "reading"
    ANCHOR = "anchor"


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    speaker_id: str
    kind: Kind
    language: str | None = None


@dataclass(frozen=True)
class SplitSpec:
    groups: int = 4
    holdout_per_speaker: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.groups < 1:
            raise ValueError("groups must be >= 1")
        if self.holdout_per_speaker < 1:
            raise ValueError("holdout_per_speaker must be >= 1")


@dataclass
class EmbeddingPair:
    left: np.ndarray
    right: np.ndarray
    same_speaker: bool

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError("pair vectors differ in length")


def parse_manifest(text: str, base_dir: Path | None = None) -> list[ManifestEntry]:
    entries = []
    anchor_line: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 3 or 4 tab-separated fields, got {len(fields)}", lineno)
        path, speaker, kind = (f.strip() for f in fields[:3])
        if not path or not speaker:
            raise ParseError("empty path or speaker_id", lineno)
        try:
            kind = Kind(kind)
        except ValueError:
            raise ParseError(f"unknown kind {kind!r} (expected 'reading' or 'anchor')", lineno) from None
        language = fields[3].strip() or None if len(fields) == 4 else None
        if kind is Kind.ANCHOR:
            if speaker in anchor_line:
                raise ParseError(f"speaker {speaker!r} already has an anchor on line {anchor_line[speaker]}",
                                 lineno)
            anchor_line[speaker] = lineno
        p = Path(path)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        entries.append(ManifestEntry(p, speaker, kind, language))

    readers = []
    for e in entries:
        if e.kind is Kind.READING and e.speaker_id not in readers:
            readers.append(e.speaker_id)
    for speaker in readers:
        if speaker not in anchor_line:
            raise MissingAnchor(speaker)
    return entries


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a tab-separated manifest; relative paths resolve against its directory."""
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), base_dir=path.parent)


def _annotated(exc: Exception, path) -> Exception:
    try:
        return type(exc)(f"{path}: {exc}")
    except TypeError:
        return exc


def _reading_instances(entry: ManifestEntry, cfg: MfccConfig) -> list[Instance]:
    try:
        buf = load_canonical(entry.path, cfg.sample_rate)
        instances = extract_instances(buf, cfg, entry.speaker_id, source=str(entry.path))
    except (OSError, Speech2PhoneError, ValueError) as exc:
        raise _annotated(exc, entry.path) from exc
    if not instances:
        log.warning("%s: reading shorter than 5 s, no instances extracted", entry.path)
    return instances


def _anchor_target(entry: ManifestEntry, cfg: MfccConfig) -> np.ndarray:
    try:
        return extract_anchor_target(load_canonical(entry.path, cfg.sample_rate), cfg)
    except (OSError, Speech2PhoneError, ValueError) as exc:
        raise _annotated(exc, entry.path) from exc


def materialize(entries, cfg: MfccConfig = DEFAULT_CONFIG, threads: int = 1) -> list[Instance]:
    """Extract every reading's instances and attach the speaker's anchor target.

    Output order follows the manifest; ``threads`` only changes wall time.
    """
    readings = [e for e in entries if e.kind is Kind.READING]
    anchors = {e.speaker_id: e for e in entries if e.kind is Kind.ANCHOR}
    needed = [anchors[s] for s in dict.fromkeys(e.speaker_id for e in readings)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            targets = list(pool.map(lambda e: _anchor_target(e, cfg), needed))
            per_entry = list(pool.map(lambda e: _reading_instances(e, cfg), readings))
    else:
        targets = [_anchor_target(e, cfg) for e in needed]
        per_entry = [_reading_instances(e, cfg) for e in readings]

    target_of = {e.speaker_id: t for e, t in zip(needed, targets)}
    out = []
    for instances in per_entry:
        for inst in instances:
            inst.target = target_of[inst.speaker_id]
            out.append(inst)
    return out


def group_name(index: int) -> str:
    return string.ascii_uppercase[index] if index < 26 else f"G{index}"


def split(instances, spec: SplitSpec = SplitSpec()) -> dict[str, list[Instance]]:
    """Deal speakers into groups and hold out each speaker's latest windows.

    Returns partitions named ``A_1, A_2, B_1, ...``: ``_2`` holds the last
    ``holdout_per_speaker`` windows of every speaker in the group (by source
    offset), ``_1`` the rest.
    """
    by_speaker = defaultdict(list)
    for inst in instances:
        by_speaker[inst.speaker_id].append(inst)
    speakers = sorted(by_speaker, key=str)
    for s in speakers:
        if len(by_speaker[s]) < spec.holdout_per_speaker + 1:
            raise InsufficientInstances(
                f"speaker {s!r} has {len(by_speaker[s])} instances, "
                f"needs at least {spec.holdout_per_speaker + 1}")

    order = np.random.default_rng(spec.seed).permutation(len(speakers))
    parts = {}
    for g in range(spec.groups):
        parts[f"{group_name(g)}_1"] = []
        parts[f"{group_name(g)}_2"] = []
    for rank, idx in enumerate(order):
        speaker = speakers[idx]
        g = group_name(rank % spec.groups)
        ordered = sorted(by_speaker[speaker], key=lambda i: i.source_offset_s)
        cut = len(ordered) - spec.holdout_per_speaker
        parts[f"{g}_1"].extend(ordered[:cut])
        parts[f"{g}_2"].extend(ordered[cut:])
    return parts


def build_pair_dataset(embeddings, negative_ratio: float = 1.0, seed: int = 0) -> list[EmbeddingPair]:
    """All same-speaker pairs plus ``ceil(ratio * positives)`` sampled cross-speaker pairs.

    ``embeddings`` is a sequence of ``(speaker_id, vector)``.
    """
    labels = [s for s, _ in embeddings]
    vectors = [np.asarray(v, dtype=np.float64) for _, v in embeddings]
    if len(set(labels)) < 2:
        raise SingleSpeaker("pair dataset needs at least two speakers")
    if negative_ratio < 0:
        raise ValueError("negative_ratio must be >= 0")

    _, codes = np.unique(np.array([str(s) for s in labels]), return_inverse=True)
    iu, ju = np.triu_indices(len(labels), 1)
    same = codes[iu] == codes[ju]
    positives = list(zip(iu[same].tolist(), ju[same].tolist()))
    neg_i, neg_j = iu[~same], ju[~same]
    wanted = math.ceil(negative_ratio * len(positives))
    if wanted > len(neg_i):
        log.warning("only %d cross-speaker pairs exist, %d requested", len(neg_i), wanted)
        wanted = len(neg_i)

    rng = np.random.default_rng(seed)
    picked = rng.choice(len(neg_i), size=wanted, replace=False) if wanted else np.empty(0, dtype=int)
    picked.sort()
    pairs = [EmbeddingPair(vectors[i], vectors[j], True) for i, j in positives]
    pairs += [EmbeddingPair(vectors[neg_i[p]], vectors[neg_j[p]], False) for p in picked]
    return [pairs[k] for k in rng.permutation(len(pairs))]


def stack(instances) -> tuple[np.ndarray, np.ndarray | None, list, np.ndarray]:
    """(inputs, targets or None, speaker labels, offsets) as arrays."""
    if not instances:
        raise InsufficientInstances("no instances")
    X = np.stack([i.input for i in instances])
    targets = None
    if all(i.target is not None for i in instances):
        targets = np.stack([i.target for i in instances])
    return X, targets, [i.speaker_id for i in instances], np.array([i.source_offset_s for i in instances])


def save_instances(path, instances) -> None:
    """Write instances to an ``.npz`` archive (inputs, targets, speakers, offsets)."""
    X, targets, speakers, offsets = stack(instances)
    arrays = {"inputs": X, "speakers": np.array([str(s) for s in speakers]), "offsets": offsets,
              "sources": np.array([i.source for i in instances])}
    if targets is not None:
        arrays["targets"] = targets
    write_npz(path, arrays)


def write_npz(path, arrays: dict) -> None:
    """``np.savez`` equivalent with fixed member timestamps, so identical data gives identical bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)


def load_instances(path) -> list[Instance]:
    with np.load(path, allow_pickle=False) as z:
        X = z["inputs"]
        targets = z["targets"] if "targets" in z.files else None
        speakers = z["speakers"]
        offsets = z["offsets"]
        sources = z["sources"] if "sources" in z.files else [""] * len(X)
        return [Instance(X[k].copy(), str(speakers[k]), int(offsets[k]),
                         None if targets is None else targets[k].copy(), str(sources[k]))
                for k in range(X.shape[0])]
