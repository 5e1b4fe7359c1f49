"""Feedforward ReLU network trained layer by layer with local errors.

Every hidden layer ``l`` owns a trainable weight matrix ``W[l]`` of shape
``(n_{l-1}, n_l)`` and a frozen random classifier ``J[l]`` of shape
``(n_l, 10)``. The layer's cross-entropy is computed from its own
classifier and only ever updates its own ``W[l]``; no error signal crosses
a layer boundary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import N_CLASSES, LabeledDataset, minibatches, one_hot
from .exceptions import DivergenceError, DomainError, ShapeError
from .numerics import Rng, gaussian_matrix, make_rng

INPUT_DIM = 784
CHECKPOINT_VERSION = 1
MAX_LOSS = 1e3
MAX_WEIGHT_NORM = 1e6
EVAL_CHUNK = 5000


@dataclass(frozen=True)
class NetConfig:
    widths: tuple = (200,) * 8
    seed: int = 0
    init_std_w: float = 0.5
    std_j: float = 1.0
    input_dim: int = INPUT_DIM
    classifier_width: int = N_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1 or min(self.widths) < 1:
            raise DomainError(f"need at least one layer of positive width, got {self.widths}")
        if self.classifier_width != N_CLASSES:
            raise DomainError("classifier width is fixed at 10")
        if self.init_std_w < 0 or self.std_j < 0:
            raise DomainError("standard deviations must be non-negative")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def fan_ins(self) -> tuple:
        return (self.input_dim,) + self.widths[:-1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    eta0: float = 0.5
    decay: float = 0.8
    decay_every: int = 10

    def __post_init__(self):
        if self.eta0 < 0:
            raise DomainError("eta0 must be >= 0")
        if not 0 < self.decay <= 1:
            raise DomainError("decay must lie in (0, 1]")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise DomainError("decay_every and batch_size must be >= 1, epochs >= 0")


@dataclass(eq=False)
class LocalErrorNet:
    config: NetConfig
    weights: list
    classifiers: list

    @property
    def depth(self) -> int:
        return len(self.weights)

    def copy(self) -> "LocalErrorNet":
        return LocalErrorNet(self.config, [w.copy() for w in self.weights], [j.copy() for j in self.classifiers])

    def classifier_digest(self) -> str:
        h = hashlib.sha256()
        for j in self.classifiers:
            h.update(np.ascontiguousarray(j).tobytes())
        return h.hexdigest()


@dataclass
class LayerActivations:
    """Per-layer batched quantities; one row per input."""

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    probs: list = field(default_factory=list)

    def __len__(self):
        return len(self.pre)


def init_network(cfg: NetConfig, rng: Rng | None = None) -> LocalErrorNet:
    """W[l] ~ N(0, init_std_w^2 / fan_in), J[l] ~ N(0, std_j^2 / n_l)."""
    if rng is None:
        rng = make_rng(cfg.seed)
    weights, classifiers = [], []
    for fan_in, width in zip(cfg.fan_ins, cfg.widths):
        weights.append(gaussian_matrix(rng, fan_in, width, 0.0, cfg.init_std_w / np.sqrt(fan_in)))
        classifiers.append(gaussian_matrix(rng, width, cfg.classifier_width, 0.0, cfg.std_j / np.sqrt(width)))
    for j in classifiers:
        j.setflags(write=False)
    return LocalErrorNet(cfg, weights, classifiers)


def relu(z):
    return np.maximum(z, 0.0)


def relu_grad(z):
    # subgradient at 0 taken as 0
    return (z > 0).astype(np.float64)


def softmax(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    shifted = s - s.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_input(net: LocalErrorNet, x, layer: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    expected = net.weights[layer].shape[0]
    if x.ndim != 2 or x.shape[1] != expected:
        raise ShapeError(f"layer {layer + 1} expects inputs of width {expected}, got {x.shape}")
    return x


def layer_forward(net: LocalErrorNet, l: int, inputs):
    """Push inputs through hidden layer ``l`` (0-based) only.

    Returns (pre-activation, activation, scores, probabilities).
    """
    inputs = _check_input(net, inputs, l)
    z = inputs @ net.weights[l]
    y = relu(z)
    s = y @ net.classifiers[l]
    return z, y, s, softmax(s)


def forward(net: LocalErrorNet, batch) -> LayerActivations:
    x = _check_input(net, batch)
    acts = LayerActivations()
    for l in range(net.depth):
        z, y, s, p = layer_forward(net, l, x)
        acts.inputs.append(x)
        acts.pre.append(z)
        acts.post.append(y)
        acts.scores.append(s)
        acts.probs.append(p)
        x = y
    return acts


def clean_layer_inputs(net: LocalErrorNet, batch) -> list:
    """Input to every layer for a clean batch, without keeping other activations."""
    x = _check_input(net, batch)
    out = []
    for l in range(net.depth):
        out.append(x)
        x = relu(x @ net.weights[l])
    return out


def local_loss(probs, h) -> float:
    """Cross-entropy -sum_i h_i ln P_i; mean over rows for a batch."""
    p = np.asarray(probs, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    per_row = -(h * np.log(p)).sum(axis=-1)
    return float(np.mean(per_row))


def local_loss_from_scores(scores, h) -> float:
    """Same as ``local_loss(softmax(scores), h)`` without underflow in ln P."""
    per_row = -(np.asarray(h, dtype=np.float64) * log_softmax(scores)).sum(axis=-1)
    return float(np.mean(per_row))


def _targets(h) -> np.ndarray:
    """Integer labels -> one-hot rows; one-hot input passes through as 2-D."""
    h = np.asarray(h)
    if np.issubdtype(h.dtype, np.integer):
        return np.atleast_2d(one_hot(h))
    return np.atleast_2d(h.astype(np.float64))


def _local_delta(net, l, acts, h) -> np.ndarray:
    """dE/dz for layer l: ((P - h) J^T) * f'(z), one row per input."""
    err = acts.probs[l] - _targets(h)
    return (err @ net.classifiers[l].T) * relu_grad(acts.pre[l])


def local_gradient(net: LocalErrorNet, l: int, acts: LayerActivations, h) -> np.ndarray:
    """dE^l/dW^l averaged over the batch, shape (n_{l-1}, n_l)."""
    delta = _local_delta(net, l, acts, h)
    return acts.inputs[l].T @ delta / delta.shape[0]


def input_gradient(net: LocalErrorNet, l: int, acts: LayerActivations, h) -> np.ndarray:
    """dE^l/dI^l per input row, chained through layer l only."""
    return _local_delta(net, l, acts, h) @ net.weights[l].T


def layer_input_gradient(net: LocalErrorNet, l: int, inputs, h) -> np.ndarray:
    """dE^l/dI^l for inputs fed straight into layer l (no earlier layers)."""
    z, _, _, p = layer_forward(net, l, inputs)
    delta = ((p - _targets(h)) @ net.classifiers[l].T) * relu_grad(z)
    return delta @ net.weights[l].T


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise DomainError("epoch must be >= 0")
    return cfg.eta0 * cfg.decay ** (epoch // cfg.decay_every)


def classify_at_layer(scores) -> np.ndarray | int:
    """Argmax of the score vector(s); ties go to the lowest index."""
    s = np.asarray(scores)
    pred = np.argmax(s, axis=-1)
    return int(pred) if s.ndim == 1 else pred


def sgd_step(net: LocalErrorNet, x, h, eta: float, batch_index: int = -1) -> np.ndarray:
    """One synchronous local-error update on a batch.

    All layers' gradients come from the same forward pass and are applied
    afterwards. Returns the number of misclassified rows per layer.
    """
    acts = forward(net, x)
    targets = _targets(h)
    labels = targets.argmax(axis=1)
    grads = []
    wrong = np.empty(net.depth)
    for l in range(net.depth):
        loss = local_loss_from_scores(acts.scores[l], targets)
        if not np.isfinite(loss) or abs(loss) > MAX_LOSS:
            raise DivergenceError(f"loss {loss} at layer {l + 1}, batch {batch_index}", layer=l + 1, batch=batch_index)
        grads.append(local_gradient(net, l, acts, targets))
        wrong[l] = np.count_nonzero(classify_at_layer(acts.scores[l]) != labels)
    for l, g in enumerate(grads):
        net.weights[l] -= eta * g
        norm = np.linalg.norm(net.weights[l])
        if not np.isfinite(norm) or norm > MAX_WEIGHT_NORM:
            raise DivergenceError(f"weight norm {norm} at layer {l + 1}, batch {batch_index}", layer=l + 1, batch=batch_index)
    return wrong


def train_epoch(net: LocalErrorNet, ds: LabeledDataset, cfg: TrainConfig, epoch: int, rng: Rng) -> np.ndarray:
    """One pass over shuffled mini-batches; returns per-layer train error rates.

    Error rates are accumulated from each batch's forward pass just before
    its update.
    """
    eta = learning_rate(cfg, epoch)
    wrong = np.zeros(net.depth)
    for b, idx in enumerate(minibatches(len(ds), min(cfg.batch_size, len(ds)), rng)):
        wrong += sgd_step(net, ds.images[idx], ds.labels[idx], eta, batch_index=b)
    return wrong / len(ds)


def layer_scores(net: LocalErrorNet, x, chunk: int = EVAL_CHUNK):
    """Yield (row slice, per-layer score list) in chunks to bound memory."""
    x = np.asarray(x, dtype=np.float64)
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        inp = x[sl]
        scores = []
        for l in range(net.depth):
            inp = relu(inp @ net.weights[l])
            scores.append(inp @ net.classifiers[l])
        yield sl, scores


def predict_layers(net: LocalErrorNet, x) -> np.ndarray:
    """Predicted digit at every layer, shape (n, L)."""
    x = _check_input(net, x)
    out = np.empty((x.shape[0], net.depth), dtype=np.int64)
    for sl, scores in layer_scores(net, x):
        for l, s in enumerate(scores):
            out[sl, l] = classify_at_layer(s)
    return out


def test_accuracy(net: LocalErrorNet, ds: LabeledDataset) -> np.ndarray:
    """Fraction of correctly classified rows at each layer's classifier."""
    pred = predict_layers(net, ds.images)
    return (pred == np.asarray(ds.labels)[:, None]).mean(axis=0)


test_accuracy.__test__ = False  # not a pytest test despite the name


def save_checkpoint(net: LocalErrorNet, path, **extra) -> None:
    """Store config, weights and classifiers in a versioned ``.npz``."""
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(net.config), "extra": extra}
    arrays = {f"W{l}": w for l, w in enumerate(net.weights)}
    arrays.update({f"J{l}": j for l, j in enumerate(net.classifiers)})
    with open(path, "wb") as f:
        np.savez(f, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[LocalErrorNet, dict]:
    with np.load(path) as f:
        meta = json.loads(f["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = NetConfig(**meta["config"])
        weights = [f[f"W{l}"].copy() for l in range(cfg.depth)]
        classifiers = [f[f"J{l}"].copy() for l in range(cfg.depth)]
    for j in classifiers:
        j.setflags(write=False)
    return LocalErrorNet(cfg, weights, classifiers), meta["extra"]
