"""Fully connected binary classifiers in NumPy: forward traces, backprop, Adam.

Layout follows ``widths = (n_1, ..., n_l)`` with ``n_1`` the input dimension
and ``n_l = 2``.  Hidden layers apply the activation after the affine map;
the last affine map produces the logits, and softmax is the score.  A
trace of a cloud therefore holds the input, every hidden layer, the logits
and the softmax output.
"""

from __future__ import annotations

import ctypes
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "leaky_relu")
LEAKY_SLOPE = 0.2
MODEL_FORMAT = "nntopo-mlp"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ModelFormatError(ValueError):
    pass


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.maximum(z, LEAKY_SLOPE * z)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation z (a = activation(z))."""
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Mlp:
    """Weights ``A_j`` have shape (n_{j+1}, n_j); biases have shape (n_{j+1},)."""

    widths: tuple[int, ...]
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias per layer")
        for j, (A, b) in enumerate(zip(self.weights, self.biases)):
            if A.shape != (self.widths[j + 1], self.widths[j]) or b.shape != (self.widths[j + 1],):
                raise ValueError(f"layer {j + 1} has wrong shape {A.shape}/{b.shape}")

    @classmethod
    def init(cls, widths, activation: str, seed: int | np.random.Generator = 0) -> "Mlp":
        """He-uniform init for ReLU variants, Xavier-uniform for tanh; zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        widths = tuple(widths)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if activation == "tanh":
                limit = math.sqrt(6.0 / (fan_in + fan_out))
            else:
                limit = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(widths, activation, weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "Mlp":
        return Mlp(self.widths, self.activation, [A.copy() for A in self.weights],
                   [b.copy() for b in self.biases])

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = x
        for j, (A, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ A.T + b
            h = z if j == self.n_layers - 1 else activate(self.activation, z)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(np.asarray(x, dtype=np.float64)).argmax(axis=1)


def forward_trace(net: Mlp, points) -> list[np.ndarray]:
    """Images of a cloud after 0, 1, ..., l layers, then the softmax scores.

    Entry 0 is the input itself, entries 1..l-1 the hidden activations,
    entry l the logits and entry l+1 the softmax output.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.widths[0]:
        raise ValueError(f"expected points of dimension {net.widths[0]}, got shape {x.shape}")
    trace = [x]
    h = x
    for j, (A, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ A.T + b
        h = z if j == net.n_layers - 1 else activate(net.activation, z)
        trace.append(h)
    trace.append(softmax(h))
    return trace


def loss_and_grads(net: Mlp, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Mean softmax cross-entropy, its gradients (interleaved A_j, b_j) and the logits."""
    n = x.shape[0]
    zs, hs = [], [x]
    h = x
    last = net.n_layers - 1
    for j, (A, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ A.T + b
        zs.append(z)
        h = z if j == last else activate(net.activation, z)
        hs.append(h)
    logits = h
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsum - shifted[np.arange(n), y]))

    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: list[np.ndarray] = [None] * (2 * net.n_layers)  # type: ignore[list-item]
    for j in range(last, -1, -1):
        if j != last:
            delta = delta * activate_grad(net.activation, zs[j], hs[j + 1])
        grads[2 * j] = delta.T @ hs[j]
        grads[2 * j + 1] = delta.sum(axis=0)
        if j:
            delta = delta @ net.weights[j]
    return loss, grads, logits


def numeric_grads(net: Mlp, x: np.ndarray, y: np.ndarray, step: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of the loss, parameter by parameter."""
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + step
            up = loss_and_grads(net, x, y)[0]
            p[idx] = keep - step
            down = loss_and_grads(net, x, y)[0]
            p[idx] = keep
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    decay_rate: float = 0.5
    decay_steps: float = 2500.0
    max_epochs: int = 18000
    batch_size: int | None = None
    seed: int = 0
    test_fraction: float = 0.2
    patience: int = 50
    max_test_error: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.decay_rate <= 0 or self.decay_steps <= 0:
            raise ValueError("learning rate and decay must be positive")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_rate ** (epoch / self.decay_steps)

    @classmethod
    def bottleneck(cls, **kw) -> "TrainConfig":
        """Schedule used for architectures that narrow in the middle."""
        return cls(decay_rate=0.5, decay_steps=4000.0, **kw)


@dataclass
class TrainResult:
    net: Mlp
    epochs: int
    train_accuracy: float
    test_accuracy: float
    well_trained: bool
    history: list[tuple[int, float, float, float]] = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for epoch, loss, tr, te in self.history:
            w.writerow([epoch, repr(loss), repr(tr), repr(te)])
        return buf.getvalue()


_ALLOCATOR_TUNED = False


def _keep_buffers_on_heap() -> None:
    """Stop glibc from mmap-ing each activation buffer of a training step.

    Full-batch steps allocate and free arrays of a few hundred kilobytes;
    above glibc's default 128 KiB threshold each one becomes a fresh mmap
    with page faults, which costs about a third of the epoch time.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED or not sys.platform.startswith("linux"):
        return
    _ALLOCATOR_TUNED = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 64 << 20)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 128 << 20)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def split_indices(n: int, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train(net: Mlp, points, labels, cfg: TrainConfig) -> TrainResult:
    """Adam on softmax cross-entropy with exponentially decaying step size.

    Stops once training accuracy has been 100% for ``cfg.patience``
    consecutive epochs, or at ``cfg.max_epochs``.  The net is trained in
    place and also returned in the result.
    """
    _keep_buffers_on_heap()
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    rng = np.random.default_rng([cfg.seed, 7])
    train_idx, test_idx = split_indices(len(y), cfg.test_fraction, rng)
    xt, yt = x[train_idx], y[train_idx]
    xv, yv = x[test_idx], y[test_idx]

    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = cfg.beta1, cfg.beta2
    history = []
    streak = 0
    step = 0
    epoch = 0
    train_acc = 0.0
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        if cfg.batch_size:
            order = rng.permutation(len(yt))
            batches = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        else:
            batches = [slice(None)]
        correct = 0
        total_loss = 0.0
        for batch in batches:
            loss, grads, logits = loss_and_grads(net, xt[batch], yt[batch])
            if not math.isfinite(loss):
                raise TrainingError(epoch, "loss is not finite")
            total_loss += loss * len(yt[batch])
            correct += int((logits.argmax(axis=1) == yt[batch]).sum())
            step += 1
            c1 = 1 - b1**step
            c2 = 1 - b2**step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + cfg.adam_eps)
        # Accuracy of the parameters that produced this epoch's logits.
        train_acc = correct / len(yt)
        streak = streak + 1 if correct == len(yt) else 0
        if epoch % cfg.log_every == 0 or streak >= cfg.patience:
            test_acc = float((net.predict(xv) == yv).mean()) if len(yv) else 1.0
            history.append((epoch, total_loss / len(yt), train_acc, test_acc))
        if streak >= cfg.patience:
            break
    train_acc = float((net.predict(xt) == yt).mean())
    test_acc = float((net.predict(xv) == yv).mean()) if len(yv) else 1.0
    well = train_acc == 1.0 and (1.0 - test_acc) <= cfg.max_test_error
    return TrainResult(net, epoch, train_acc, test_acc, well, history)


# ---------------------------------------------------------------------------
# model files


def model_to_json(net: Mlp) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "widths": list(net.widths),
        "activation": net.activation,
        # repr() of a Python float round-trips exactly.
        "weights": [[[float(v) for v in row] for row in A] for A in net.weights],
        "biases": [[float(v) for v in b] for b in net.biases],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> Mlp:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        weights = [np.array(A, dtype=np.float64) for A in doc["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
        return Mlp(tuple(doc["widths"]), doc["activation"], weights, biases)
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from None


def save_model(net: Mlp, path) -> None:
    Path(path).write_text(model_to_json(net), encoding="utf-8")


def load_model(path) -> Mlp:
    return model_from_json(Path(path).read_text(encoding="utf-8"))


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
