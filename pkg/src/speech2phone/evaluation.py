"""Evaluation protocols: closed-set accuracy, open-set 1-NN accuracy with R2, scalability sweep."""

from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConstantTarget, DegenerateEmbedderWarning, DimensionMismatch, InsufficientInstances,
                     PoolTooSmall, UnknownLabel)
from .gmm import GmmModel, gmm_classify_batch
from .identify import EmbeddingDb, enroll, identify_knn, nearest
from .models import CLOSED_SET, ModelBundle, embed_batch, reconstruct, same_speaker_probability

REPORT_HEADER = ["protocol", "n_train", "n_test", "accuracy_pct", "r2", "seed"]
SWEEP_HEADER = ["n_speakers", "trial", "accuracy_pct"]
PROTOCOLS = ("closed", "open_loo", "open_enroll_k", "pair", "gmm")


@dataclass
class EvalReport:
    protocol: str
    accuracy: float
    n_train: int
    n_test: int
    seed: int = 0
    r2: float | None = None
    per_speaker_accuracy: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 100]")

    def csv_row(self) -> list[str]:
        return [self.protocol, str(self.n_train), str(self.n_test), f"{self.accuracy:.2f}",
                "" if self.r2 is None else f"{self.r2:.4f}", str(self.seed)]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def r2_score(pred, target) -> float:
    """Coefficient of determination over all values, flattened into one pair of vectors."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise DimensionMismatch(f"{p.size} predictions vs {t.size} targets")
    if t.size < 2:
        raise ValueError("r2 needs at least two values")
    total = np.sum((t - t.mean()) ** 2)
    if total == 0:
        raise ConstantTarget("target is constant; r2 undefined")
    return float(1.0 - np.sum((t - p) ** 2) / total)


def _accuracy(predicted, truth, per_speaker_majority: bool = False):
    predicted = [str(s) for s in predicted]
    truth = [str(s) for s in truth]
    by_speaker = defaultdict(list)
    for p, t in zip(predicted, truth):
        by_speaker[t].append(p == t)
    per_speaker = {s: 100.0 * float(np.mean(v)) for s, v in sorted(by_speaker.items())}
    if per_speaker_majority:
        votes = defaultdict(list)
        for p, t in zip(predicted, truth):
            votes[t].append(p)
        hits = [max(sorted(set(v)), key=v.count) == t for t, v in votes.items()]
        return 100.0 * float(np.mean(hits)), per_speaker
    return 100.0 * float(np.mean([p == t for p, t in zip(predicted, truth)])), per_speaker


def eval_closed_set(model, X, labels, n_train: int = 0, seed: int = 0,
                    per_speaker_majority: bool = False) -> EvalReport:
    """Accuracy of a closed-set network (argmax logit) or a list of per-speaker GMMs."""
    labels = [str(s) for s in labels]
    if isinstance(model, ModelBundle):
        if model.kind != CLOSED_SET:
            raise ValueError(f"closed-set evaluation needs a closed_set model, got {model.kind}")
        unknown = sorted(set(labels) - set(model.labels))
        if unknown:
            raise UnknownLabel(f"test labels not covered by the model: {unknown}")
        logits = model.forward(X)[0]
        predicted = [model.labels[i] for i in np.argmax(np.atleast_2d(logits), axis=1)]
        protocol = "closed"
    else:
        models = list(model)
        known = {m.speaker_id for m in models if isinstance(m, GmmModel)}
        unknown = sorted(set(labels) - known)
        if unknown:
            raise UnknownLabel(f"test labels not covered by the mixtures: {unknown}")
        predicted = gmm_classify_batch(models, X)
        protocol = "gmm"
    acc, per = _accuracy(predicted, labels, per_speaker_majority)
    return EvalReport(protocol, acc, n_train, len(labels), seed, None, per)


def _check_degenerate(E):
    if E.shape[0] > 1 and np.all(E == E[0]):
        warnings.warn("every test instance maps to the same embedding", DegenerateEmbedderWarning, stacklevel=3)


def loo_predictions(E, labels) -> list[str]:
    """1-NN label of every embedding against all the others."""
    labels = [str(s) for s in labels]
    counts = defaultdict(int)
    for s in labels:
        counts[s] += 1
    short = sorted(s for s, c in counts.items() if c < 2)
    if short:
        raise InsufficientInstances(f"leave-one-out needs two instances per speaker: {short}")
    _check_degenerate(E)
    return [labels[nearest(E, labels, E[i], exclude=i)[0]] for i in range(E.shape[0])]


def eval_open_set(embedder: ModelBundle, X, labels, offsets=None, targets=None, mode: str = "leave_one_out",
                  k: int = 1, seed: int = 0, n_train: int = 0, per_speaker_majority: bool = False) -> EvalReport:
    """Open-set identification accuracy of a Speech2Phone embedder.

    ``leave_one_out`` queries every embedding against all others;
    ``enroll_k`` enrolls each speaker's first ``k`` windows (by offset) and
    queries the rest. R2 compares reconstructions against ``targets`` when given.
    """
    labels = [str(s) for s in labels]
    X = np.asarray(X, dtype=np.float64)
    E = embed_batch(embedder, X)
    if mode == "leave_one_out":
        predicted = loo_predictions(E, labels)
        truth = labels
        protocol = "open_loo"
    elif mode == "enroll_k":
        offsets = np.arange(len(labels)) if offsets is None else np.asarray(offsets)
        by_speaker = defaultdict(list)
        for i, s in enumerate(labels):
            by_speaker[s].append(i)
        db = EmbeddingDb(E.shape[1])
        queries = []
        for s in sorted(by_speaker):
            idx = sorted(by_speaker[s], key=lambda i: (offsets[i], i))
            if len(idx) <= k:
                raise InsufficientInstances(f"speaker {s!r} has {len(idx)} instances, enroll_k needs > {k}")
            enroll(db, s, E[idx[:k]])
            queries += idx[k:]
        _check_degenerate(E)
        queries.sort()
        predicted = [identify_knn(db, E[i])[0] for i in queries]
        truth = [labels[i] for i in queries]
        protocol = "open_enroll_k"
    else:
        raise ValueError(f"unknown open-set mode {mode!r}")
    acc, per = _accuracy(predicted, truth, per_speaker_majority)
    r2 = None
    if targets is not None:
        r2 = r2_score(reconstruct(embedder, X), targets)
    return EvalReport(protocol, acc, n_train, len(truth), seed, r2, per)


def eval_pair(comparator: ModelBundle, E, labels, n_train: int = 0, seed: int = 0) -> EvalReport:
    """Leave-one-out identification with the pair comparator instead of 1-NN."""
    labels = [str(s) for s in labels]
    E = np.asarray(E, dtype=np.float64)
    predicted = []
    for i in range(E.shape[0]):
        others = np.delete(np.arange(E.shape[0]), i)
        probs = same_speaker_probability(comparator, np.tile(E[i], (others.size, 1)), E[others])
        tied = others[probs == probs.max()]
        predicted.append(labels[min(tied.tolist(), key=lambda j: (labels[j], j))])
    acc, per = _accuracy(predicted, labels)
    return EvalReport("pair", acc, n_train, len(labels), seed, None, per)


@dataclass
class SweepResult:
    trials: list[tuple[int, int, float]]      # (n_speakers, trial, accuracy_pct)
    summary: list[tuple[int, float, float]]   # (n_speakers, mean, std)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for size, trial, acc in self.trials:
            w.writerow([size, trial, f"{acc:.2f}"])
        for size, mean, std in self.summary:
            w.writerow([size, "mean", f"{mean:.2f}"])
            w.writerow([size, "std", f"{std:.2f}"])
        return buf.getvalue()


def _subsets(pool, size, trials, rng):
    if math.comb(len(pool), size) <= trials:
        return [list(c) for c in itertools.combinations(pool, size)]
    return [sorted(rng.choice(pool, size=size, replace=False).tolist()) for _ in range(trials)]


def scalability_sweep_embeddings(E, labels, sizes, trials: int = 10, seed: int = 0) -> SweepResult:
    """Leave-one-out accuracy over random speaker subsets of each size, from precomputed embeddings."""
    labels = np.array([str(s) for s in labels])
    pool = sorted(set(labels.tolist()))
    sizes = sorted(int(s) for s in sizes)
    if not sizes or sizes[0] < 2:
        raise ValueError("sweep sizes must be >= 2")
    if sizes[-1] > len(pool):
        raise PoolTooSmall(f"pool has {len(pool)} speakers, sweep needs {sizes[-1]}")
    rng = np.random.default_rng(seed)
    rows, summary = [], []
    for size in sizes:
        accs = []
        for t, subset in enumerate(_subsets(pool, size, trials, rng)):
            mask = np.isin(labels, subset)
            predicted = loo_predictions(E[mask], labels[mask].tolist())
            acc = 100.0 * float(np.mean(np.array(predicted) == labels[mask]))
            rows.append((size, t, acc))
            accs.append(acc)
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        summary.append((size, float(np.mean(accs)), std))
    return SweepResult(rows, summary)


def scalability_sweep(embedder: ModelBundle, X, labels, sizes, trials: int = 10, seed: int = 0) -> SweepResult:
    return scalability_sweep_embeddings(embed_batch(embedder, X), labels, sizes, trials, seed)
