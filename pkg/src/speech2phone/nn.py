"""A small dense-network engine: forward/backward, MSE and softmax cross-entropy, Adam.

Everything runs in float64. Inputs may be a single vector or a batch
(rows are instances); batch losses are means over instances, so gradients
returned by the loss functions already carry the ``1 / batch`` factor and
:func:`backward` simply sums over rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (BadDimensions, CacheMismatch, DimensionMismatch, DivergedLoss, EmptyDataset,
                     IndexOutOfRange, ShapeMismatch)

log = logging.getLogger(__name__)

# "softmax" layers emit raw logits; the softmax itself lives in the loss.
ACTIVATIONS = ("elu", "identity", "softmax")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise BadDimensions(f"weight {self.weight.shape} and bias {self.bias.shape} do not agree")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNetwork:
    layers: list[Layer]
    embedding_layer: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise BadDimensions("a network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise BadDimensions(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        if self.embedding_layer is not None and not 0 <= self.embedding_layer < len(self.layers):
            raise BadDimensions(f"embedding_layer {self.embedding_layer} out of range")
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise ValueError("network parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [l.out_dim for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live arrays."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> DenseNetwork:
        return DenseNetwork([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
                            self.embedding_layer)

    def quantized(self) -> DenseNetwork:
        """Copy with every parameter rounded to the nearest float32 value."""
        q = self.copy()
        for p in q.parameters():
            p[...] = p.astype(np.float32)
        return q


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    shapes: tuple = field(default=())


def _signature(net: DenseNetwork) -> tuple:
    return tuple((l.weight.shape, l.activation) for l in net.layers)


def init_network(layer_dims, activations, seed: int = 0, embedding_layer: int | None = None) -> DenseNetwork:
    """Balanced-variance uniform weights, zero biases.

    ``layer_dims`` lists widths from input to output, so ``len(activations)``
    must be ``len(layer_dims) - 1``.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise BadDimensions(f"need at least two positive widths, got {dims}")
    if len(activations) != len(dims) - 1:
        raise BadDimensions(f"{len(dims) - 1} layers but {len(activations)} activations")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return DenseNetwork(layers, embedding_layer)


def _activate(z, activation):
    if activation == "elu":
        return kernels.elu(z)
    return z


def forward(net: DenseNetwork, x) -> tuple[np.ndarray, ForwardCache]:
    """Run ``x`` (vector or batch) through the network."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != net.in_dim or a.ndim not in (1, 2):
        raise DimensionMismatch(f"input of shape {a.shape} does not fit input width {net.in_dim}")
    cache = ForwardCache([], [], [], _signature(net))
    for layer in net.layers:
        cache.inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        cache.pre.append(z)
        cache.post.append(a)
    return a, cache


def backward(net: DenseNetwork, cache: ForwardCache, grad_out) -> list[np.ndarray]:
    """Gradients ``[dW0, db0, dW1, db1, ...]`` given dLoss/dOutput."""
    if cache.shapes != _signature(net) or len(cache.pre) != len(net.layers):
        raise CacheMismatch("forward cache was produced by a different network")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise CacheMismatch(f"upstream gradient {g.shape} does not match output {cache.post[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        if layer.activation == "elu":
            g = kernels.elu_grad(cache.pre[idx], g)
        inp = cache.inputs[idx]
        if g.ndim == 1:
            grads[2 * idx] = np.outer(g, inp)
            grads[2 * idx + 1] = g.copy()
        else:
            grads[2 * idx] = g.T @ inp
            grads[2 * idx + 1] = g.sum(axis=0)
        if idx:
            g = g @ layer.weight
    return grads


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error, averaged over coefficients and (for batches) instances."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionMismatch(f"prediction {p.shape} vs target {t.shape}")
    diff = p - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, true_class) -> tuple[float, np.ndarray]:
    """-log softmax(logits)[true_class]; batch losses are averaged."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(true_class)
    n_classes = z.shape[-1]
    if z.ndim == 1:
        z2, lab = z[None, :], labels.reshape(1)
    else:
        z2, lab = z, labels.reshape(-1)
        if lab.shape[0] != z2.shape[0]:
            raise DimensionMismatch(f"{z2.shape[0]} logit rows but {lab.shape[0]} labels")
    if np.any(lab < 0) or np.any(lab >= n_classes):
        raise IndexOutOfRange(f"class index outside [0, {n_classes})")
    lab = lab.astype(np.int64)
    shifted = z2 - z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    losses = log_norm - shifted[rows, lab]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, lab] -= 1.0
    grad /= z2.shape[0]
    if z.ndim == 1:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad


LOSSES = {"mse": mse_loss, "cross_entropy": softmax_cross_entropy}


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatch(f"parameter {np.shape(p)} vs gradient {np.shape(g)}")
    if state.m is None:
        state.m = [np.zeros(np.shape(p)) for p in params]
        state.v = [np.zeros(np.shape(p)) for p in params]
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    lr: float
    batch_size: int
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError(f"invalid training config {self}")


def train(net: DenseNetwork, inputs, targets, loss: str, cfg: TrainConfig,
          callback=None) -> tuple[DenseNetwork, list[float]]:
    """Mini-batch Adam on a copy of ``net``.

    ``targets`` is a matrix for ``loss="mse"`` and an integer label vector
    for ``loss="cross_entropy"``. Returns the trained copy and the mean
    per-instance loss of every epoch.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {sorted(LOSSES)}")
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("training needs a non-empty 2-D input matrix")
    if X.shape[1] != net.in_dim:
        raise DimensionMismatch(f"inputs have width {X.shape[1]}, network expects {net.in_dim}")
    if Y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if loss == "mse" and (Y.ndim != 2 or Y.shape[1] != net.out_dim):
        raise DimensionMismatch(f"targets of shape {Y.shape} do not match output width {net.out_dim}")

    loss_fn = LOSSES[loss]
    net = net.copy()
    params = net.parameters()
    state = AdamState(cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    order = np.arange(n)
    history = []
    for epoch in range(cfg.epochs):
        if cfg.shuffle_each_epoch:
            order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            out, cache = forward(net, X[idx])
            value, grad = loss_fn(out, Y[idx])
            if not np.isfinite(value):
                raise DivergedLoss(f"loss became {value} at epoch {epoch + 1}")
            adam_step(params, backward(net, cache, grad), state)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise DivergedLoss(f"parameters became non-finite at epoch {epoch + 1}")
            total += value * idx.shape[0]
        history.append(total / n)
        if callback is not None:
            callback(epoch, history[-1])
    return net, history
