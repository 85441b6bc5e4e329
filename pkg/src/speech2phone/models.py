"""Network constructors (Speech2Phone, closed-set classifier, pair comparator),
embedding extraction, and the ``.s2ph`` model file."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import BadSpeakerCount, DimensionMismatch, MalformedFile, VersionMismatch, WrongKind
from .features import DEFAULT_CONFIG
from .fileformat import Reader, Writer, crc_of

EMBEDDING_DIM = 80
INSTANCE_DIM = DEFAULT_CONFIG.instance_length   # 216 frames x 13
TARGET_DIM = DEFAULT_CONFIG.anchor_length       # 44 frames x 13
CLOSED_SET_HIDDEN = 256
PAIR_HIDDEN = 64
STD_FLOOR = 1e-6

MAGIC = b"S2PH"
FORMAT_VERSION = 1

SPEECH2PHONE = "speech2phone"
CLOSED_SET = "closed_set"
PAIR_COMPARATOR = "pair_comparator"
KIND_TAGS = {SPEECH2PHONE: b"s2p4", CLOSED_SET: b"cls1", PAIR_COMPARATOR: b"pair"}
GMM_TAG = b"gmm0"
PAIR_LABELS = ["same", "different"]

# (epochs, learning rate, batch size) per model
REGIMENS = {
    SPEECH2PHONE: nn.TrainConfig(epochs=1000, lr=0.0007, batch_size=128),
    CLOSED_SET: nn.TrainConfig(epochs=3000, lr=0.00005, batch_size=64),
    PAIR_COMPARATOR: nn.TrainConfig(epochs=1000, lr=0.0001, batch_size=16),
}
LOSS_OF = {SPEECH2PHONE: "mse", CLOSED_SET: "cross_entropy", PAIR_COMPARATOR: "cross_entropy"}


def _as_f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    speaker_id: str | None = None
    source: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding must be finite")


@dataclass
class ModelBundle:
    """A network plus everything needed to apply it: kind, input statistics, class labels.

    Parameters and statistics are rounded to float32 on construction so the
    model file round-trips exactly.
    """

    network: nn.DenseNetwork
    kind: str
    input_mean: np.ndarray
    input_std: np.ndarray
    labels: list[str] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.kind not in KIND_TAGS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.network = self.network.quantized()
        self.input_mean = _as_f32(self.input_mean).reshape(-1)
        self.input_std = _as_f32(np.maximum(np.asarray(self.input_std, dtype=np.float64), STD_FLOOR)).reshape(-1)
        if self.input_mean.shape != (self.network.in_dim,) or self.input_std.shape != (self.network.in_dim,):
            raise DimensionMismatch("normalisation vectors do not match the network input width")
        self.labels = [str(s) for s in self.labels]
        if self.labels and len(self.labels) != self.network.out_dim:
            raise DimensionMismatch(f"{len(self.labels)} labels for {self.network.out_dim} outputs")

    def normalize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.network.in_dim:
            raise DimensionMismatch(f"input width {X.shape[-1]}, model expects {self.network.in_dim}")
        return (X - self.input_mean) / self.input_std

    def forward(self, X):
        return nn.forward(self.network, self.normalize(X))

    def with_network(self, network: nn.DenseNetwork, mean=None, std=None) -> ModelBundle:
        return ModelBundle(network, self.kind,
                           self.input_mean if mean is None else mean,
                           self.input_std if std is None else std,
                           list(self.labels), self.format_version)


def _identity_norm(dim):
    return np.zeros(dim), np.ones(dim)


def fit_input_norm(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and (floored) standard deviation of training inputs."""
    X = np.asarray(X, dtype=np.float64)
    return X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR)


def build_speech2phone(seed: int = 0, hidden: int = EMBEDDING_DIM, input_dim: int = INSTANCE_DIM,
                       output_dim: int = TARGET_DIM) -> ModelBundle:
    """Shallow reconstruction net: input -> ELU bottleneck (the embedding) -> linear output."""
    net = nn.init_network([input_dim, hidden, output_dim], ["elu", "identity"], seed, embedding_layer=0)
    return ModelBundle(net, SPEECH2PHONE, *_identity_norm(input_dim))


def build_closed_set(n_speakers: int, seed: int = 0, hidden: int = CLOSED_SET_HIDDEN,
                     input_dim: int = INSTANCE_DIM, labels=None) -> ModelBundle:
    if n_speakers < 2:
        raise BadSpeakerCount(f"closed-set model needs at least 2 speakers, got {n_speakers}")
    net = nn.init_network([input_dim, hidden, n_speakers], ["elu", "softmax"], seed)
    labels = list(labels) if labels is not None else [str(i) for i in range(n_speakers)]
    return ModelBundle(net, CLOSED_SET, *_identity_norm(input_dim), labels=labels)


def build_pair_comparator(seed: int = 0, hidden: int = PAIR_HIDDEN,
                          embedding_dim: int = EMBEDDING_DIM) -> ModelBundle:
    """Two-class net over ``concat(left, right)``; class 0 is "same speaker"."""
    net = nn.init_network([2 * embedding_dim, hidden, 2], ["elu", "softmax"], seed)
    return ModelBundle(net, PAIR_COMPARATOR, *_identity_norm(2 * embedding_dim), labels=PAIR_LABELS)


def one_hot(index: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[index] = 1.0
    return v


def fit(bundle: ModelBundle, X, Y, cfg: nn.TrainConfig | None = None, callback=None):
    """Train ``bundle`` on raw inputs ``X``; returns ``(new_bundle, history)``.

    Input statistics are estimated from ``X`` and stored in the result so that
    inference applies exactly the same standardisation.
    """
    cfg = cfg or REGIMENS[bundle.kind]
    mean, std = fit_input_norm(X)
    Xn = (np.asarray(X, dtype=np.float64) - _as_f32(mean)) / _as_f32(std)
    net, history = nn.train(bundle.network, Xn, Y, LOSS_OF[bundle.kind], cfg, callback)
    return bundle.with_network(net, mean, std), history


def pair_inputs(left, right) -> np.ndarray:
    return np.concatenate([np.atleast_2d(left), np.atleast_2d(right)], axis=1)


def fit_pair_comparator(bundle: ModelBundle, pairs, cfg: nn.TrainConfig | None = None, callback=None):
    X = pair_inputs(np.stack([p.left for p in pairs]), np.stack([p.right for p in pairs]))
    y = np.array([0 if p.same_speaker else 1 for p in pairs])
    return fit(bundle, X, y, cfg, callback)


def _require(bundle: ModelBundle, kind: str):
    if bundle.kind != kind:
        raise WrongKind(f"expected a {kind} model, got {bundle.kind}")


def embed_batch(bundle: ModelBundle, X) -> np.ndarray:
    """Embedding-layer activations for each row of ``X`` (raw, un-normalised inputs)."""
    _require(bundle, SPEECH2PHONE)
    _, cache = bundle.forward(X)
    return cache.post[bundle.network.embedding_layer]


def embed(bundle: ModelBundle, instance_input, speaker_id=None, source: str = "") -> SpeakerEmbedding:
    x = np.asarray(instance_input, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("embed takes a single instance vector; use embed_batch for matrices")
    return SpeakerEmbedding(embed_batch(bundle, x), speaker_id, source)


def reconstruct(bundle: ModelBundle, X) -> np.ndarray:
    _require(bundle, SPEECH2PHONE)
    return bundle.forward(X)[0]


def predict_proba(bundle: ModelBundle, X) -> np.ndarray:
    if bundle.kind == SPEECH2PHONE:
        raise WrongKind("speech2phone models do not classify")
    return nn.softmax(bundle.forward(X)[0])


def same_speaker_probability(bundle: ModelBundle, left, right) -> np.ndarray:
    _require(bundle, PAIR_COMPARATOR)
    return predict_proba(bundle, pair_inputs(left, right))[:, 0]


# -- persistence ---------------------------------------------------------------

def _activations_for(kind: str, n_layers: int) -> list[str]:
    last = "identity" if kind == SPEECH2PHONE else "softmax"
    return ["elu"] * (n_layers - 1) + [last]


def model_to_bytes(bundle: ModelBundle) -> bytes:
    w = Writer()
    w.raw(MAGIC)
    w.u32(bundle.format_version)
    w.raw(KIND_TAGS[bundle.kind])
    w.u32(len(bundle.network.layers))
    for layer in bundle.network.layers:
        w.u32(layer.out_dim)
        w.u32(layer.in_dim)
        w.f32(layer.weight)
        w.f32(layer.bias)
    w.u32(bundle.input_mean.shape[0])
    w.f32(bundle.input_mean)
    w.f32(bundle.input_std)
    w.u32(len(bundle.labels))
    for label in bundle.labels:
        w.text(label)
    return w.finish()


def read_header(r: Reader, expected_tags) -> bytes:
    if r.raw(4) != MAGIC:
        raise MalformedFile("bad magic: not a model file")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model file format {version}, this build reads {FORMAT_VERSION}")
    tag = r.raw(4)
    if tag not in expected_tags:
        raise MalformedFile(f"unexpected kind tag {tag!r}")
    return tag


def _parse_model(r: Reader):
    tag = read_header(r, set(KIND_TAGS.values()))
    kind = next(k for k, t in KIND_TAGS.items() if t == tag)
    n_layers = r.u32()
    if n_layers == 0:
        raise MalformedFile("model has no layers")
    params = []
    for _ in range(n_layers):
        out_dim, in_dim = r.u32(), r.u32()
        params.append((r.f32(out_dim * in_dim).reshape(out_dim, in_dim), r.f32(out_dim)))
    dim = r.u32()
    mean, std = r.f32(dim), r.f32(dim)
    labels = [r.text() for _ in range(r.u32())]
    r.done()
    return kind, params, mean, std, labels


def model_from_bytes(blob: bytes) -> ModelBundle:
    kind, params, mean, std, labels = Reader(blob).parse(_parse_model)
    try:
        acts = _activations_for(kind, len(params))
        layers = [nn.Layer(W, b, a) for (W, b), a in zip(params, acts)]
        net = nn.DenseNetwork(layers, 0 if kind == SPEECH2PHONE else None)
        return ModelBundle(net, kind, mean, std, labels)
    except (ValueError, DimensionMismatch) as exc:
        raise MalformedFile(f"inconsistent model contents: {exc}") from None


def save_model(bundle: ModelBundle, path) -> None:
    Path(path).write_bytes(model_to_bytes(bundle))


def load_model(path) -> ModelBundle:
    return model_from_bytes(Path(path).read_bytes())


def model_checksum(bundle: ModelBundle) -> int:
    """CRC-32 of the serialised model; identifies the embedder a database was built with."""
    return crc_of(model_to_bytes(bundle))
