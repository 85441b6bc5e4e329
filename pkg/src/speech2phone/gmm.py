"""Per-speaker diagonal-covariance Gaussian mixtures fitted by EM (the classical baseline)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateData, DimensionMismatch, MalformedFile, NoModels, TooFewPoints
from .fileformat import Reader, Writer
from .models import FORMAT_VERSION, GMM_TAG, MAGIC, read_header

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
DEFAULT_COMPONENTS = 8


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    speaker_id: str = ""
    history: list[float] = field(default_factory=list, compare=False)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _weighted_log_density(X, weights, means, variances):
    with np.errstate(divide="ignore"):
        return kernels.diag_logpdf(X, means, variances) + np.log(weights)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    d2 = np.sum((X - X[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[centers].copy()


def _m_step(X, resp, means, variances, var_floor):
    nk = resp.sum(axis=0)
    weights = nk / X.shape[0]
    means = means.copy()
    variances = variances.copy()
    for c in np.flatnonzero(nk > 0):
        r = resp[:, c]
        mu = r @ X / nk[c]
        means[c] = mu
        variances[c] = np.maximum(r @ ((X - mu) ** 2) / nk[c], var_floor)
    return weights, means, variances


def gmm_fit(vectors, k: int = DEFAULT_COMPONENTS, seed: int = 0, max_iter: int = 200,
            tol: float = 1e-4, var_floor: float = VAR_FLOOR, speaker_id: str = "") -> GmmModel:
    """Fit a k-component diagonal GMM by EM.

    Seeding is k-means++ followed by one M-step on the hard assignment. EM
    stops once the mean log-likelihood improves by less than ``tol``;
    ``history`` keeps the mean log-likelihood of every E-step.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TooFewPoints(f"{n} points cannot support {k} components")
    if k > 1 and np.all(X == X[0]):
        raise DegenerateData("all points are identical; cannot fit more than one component")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, k, rng)
    dist = np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(dist, axis=1)] = 1.0
    global_var = np.maximum(X.var(axis=0), var_floor)
    weights, means, variances = _m_step(X, resp, centers, np.tile(global_var, (k, 1)), var_floor)

    history = []
    for _ in range(max_iter):
        logp = _weighted_log_density(X, weights, means, variances)
        lse = _logsumexp(logp, axis=1)
        history.append(float(lse.mean()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
        resp = np.exp(logp - lse[:, None])
        weights, means, variances = _m_step(X, resp, means, variances, var_floor)
    return GmmModel(weights, means, variances, str(speaker_id), history)


def gmm_log_likelihood_batch(model: GmmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"vector width {X.shape[1]}, model dimension {model.dim}")
    return _logsumexp(_weighted_log_density(X, model.weights, model.means, model.variances), axis=1)


def gmm_log_likelihood(model: GmmModel, vector) -> float:
    """log sum_j w_j N(x; mu_j, diag(var_j))."""
    x = np.asarray(vector, dtype=np.float64).reshape(-1)
    return float(gmm_log_likelihood_batch(model, x[None, :])[0])


def gmm_scores(models, X) -> tuple[list[str], np.ndarray]:
    """Speaker ids in lexicographic order and the (n x speakers) log-likelihood matrix."""
    if not models:
        raise NoModels("no speaker models to classify against")
    ordered = sorted(models, key=lambda m: m.speaker_id)
    return [m.speaker_id for m in ordered], np.stack([gmm_log_likelihood_batch(m, X) for m in ordered], axis=1)


def gmm_classify(models, vector) -> str:
    """Speaker whose mixture gives ``vector`` the highest likelihood; ties go to the smallest id."""
    ids, scores = gmm_scores(models, np.asarray(vector, dtype=np.float64).reshape(1, -1))
    return ids[int(np.argmax(scores[0]))]


def gmm_classify_batch(models, X) -> list[str]:
    ids, scores = gmm_scores(models, X)
    return [ids[i] for i in np.argmax(scores, axis=1)]


def fit_speaker_gmms(X, labels, k: int = DEFAULT_COMPONENTS, seed: int = 0, **kwargs) -> list[GmmModel]:
    """One mixture per speaker label, in lexicographic speaker order."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.array([str(s) for s in labels])
    models = []
    for speaker in sorted(set(labels.tolist())):
        models.append(gmm_fit(X[labels == speaker], k, seed, speaker_id=speaker, **kwargs))
        log.info("speaker %s: %d EM iterations", speaker, len(models[-1].history))
    return models


def gmms_to_bytes(models) -> bytes:
    w = Writer()
    w.raw(MAGIC)
    w.u32(FORMAT_VERSION)
    w.raw(GMM_TAG)
    w.u32(len(models))
    for m in models:
        w.u32(m.n_components)
        w.u32(m.dim)
        w.f32(m.weights)
        w.f32(m.means)
        w.f32(m.variances)
    w.u32(0)
    w.u32(len(models))
    for m in models:
        w.text(m.speaker_id)
    return w.finish()


def _parse_gmms(r: Reader):
    read_header(r, {GMM_TAG})
    params = []
    for _ in range(r.u32()):
        k, d = r.u32(), r.u32()
        params.append((r.f32(k), r.f32(k * d).reshape(k, d), r.f32(k * d).reshape(k, d)))
    if r.u32() != 0:
        raise MalformedFile("GMM files carry no normalisation vectors")
    names = [r.text() for _ in range(r.u32())]
    r.done()
    return params, names


def gmms_from_bytes(blob: bytes) -> list[GmmModel]:
    params, names = Reader(blob).parse(_parse_gmms)
    if len(names) != len(params):
        raise MalformedFile(f"{len(params)} mixtures but {len(names)} speaker ids")
    return [GmmModel(w, mu, var, name) for (w, mu, var), name in zip(params, names)]


def save_gmms(models, path) -> None:
    Path(path).write_bytes(gmms_to_bytes(models))


def load_gmms(path) -> list[GmmModel]:
    return gmms_from_bytes(Path(path).read_bytes())


def is_gmm_file(path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(12)
    return head[:4] == MAGIC and head[8:12] == GMM_TAG
