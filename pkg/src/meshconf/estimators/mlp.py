"""Small fully connected classifiers over ED vectors, trained with plain numpy.

All parameters live in one flat float64 vector; per-layer weight and bias
arrays are views into it. That keeps the optimizer step to a few vector
operations and makes checkpointing a single copy.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .features import FeatureStats

MC_LAYERS = (14, 10, 8, 6, 1)
WJC_LAYERS = (14, 28, 56, 28, 14)
HEADS = ("binary", "softmax")

_P_LO = np.finfo(np.float64).tiny
_P_HI = 1.0 - np.finfo(np.float64).epsneg


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training config: {self}")


class MlpModel:
    """ReLU hidden layers with a logistic (``binary``) or softmax head."""

    def __init__(
        self,
        layer_sizes: Sequence[int],
        head: str,
        params: Optional[np.ndarray] = None,
        input_stats: Optional[FeatureStats] = None,
        config: Optional[dict] = None,
    ):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if head == "binary" and self.layer_sizes[-1] != 1:
            raise ValueError("binary head needs a single output unit")
        self.head = head
        self.shapes = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        size = sum(a * b + b for a, b in self.shapes)
        if params is None:
            params = np.zeros(size)
        params = np.array(params, dtype=np.float64)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.shape}")
        self.params = params
        self.weights, self.biases = _views(params, self.shapes)
        self.input_stats = input_stats
        self.config = dict(config or {})

    @property
    def n_params(self) -> int:
        return self.params.size

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes, self.head, self.params.copy(), self.input_stats, dict(self.config))

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "head": self.head,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_stats": self.input_stats.to_dict() if self.input_stats is not None else None,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("kind") != "mlp":
            raise ValueError(f"not an MLP model document (kind={d.get('kind')!r})")
        model = cls(d["layer_sizes"], d["head"])
        for dst, src in zip(model.weights + model.biases, d["weights"] + d["biases"]):
            arr = np.asarray(src, dtype=np.float64)
            if arr.shape != dst.shape:
                raise ValueError(f"parameter shape {arr.shape} does not match layer {dst.shape}")
            dst[...] = arr
        stats = d.get("input_stats")
        model.input_stats = FeatureStats.from_dict(stats) if stats is not None else None
        model.config = dict(d.get("config") or {})
        return model


def _views(flat: np.ndarray, shapes) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    weights, biases, pos = [], [], 0
    for a, b in shapes:
        weights.append(flat[pos : pos + a * b].reshape(a, b))
        pos += a * b
        biases.append(flat[pos : pos + b])
        pos += b
    return weights, biases


def init_mlp(layer_sizes: Sequence[int], head: str, rng: np.random.Generator) -> MlpModel:
    """He-uniform weights for ReLU-fed layers, LeCun-uniform for the output layer, zero biases."""
    model = MlpModel(layer_sizes, head)
    last = len(model.shapes) - 1
    for i, (w, (fan_in, _)) in enumerate(zip(model.weights, model.shapes)):
        bound = math.sqrt((3.0 if i == last else 6.0) / fan_in)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return model


def _forward(model: MlpModel, x: np.ndarray):
    """Returns output logits plus the per-layer inputs and pre-activations needed for backprop."""
    inputs, pre = [], []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        if i == last:
            return z, inputs, pre
        pre.append(z)
        h = np.maximum(z, 0.0)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def mlp_forward(model: MlpModel, features) -> np.ndarray:
    """Probabilities: P(bad) per row for the binary head, class distribution for softmax.

    A single 14-vector gives a scalar (binary) or a 14-vector (softmax).
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    logits, _, _ = _forward(model, np.atleast_2d(x))
    if model.head == "binary":
        out = np.clip(_sigmoid(logits[:, 0]), _P_LO, _P_HI)
        return float(out[0]) if single else out
    out = np.exp(_log_softmax(logits))
    return out[0] if single else out


def mlp_loss(model: MlpModel, x, y) -> float:
    logits, _, _ = _forward(model, np.asarray(x, dtype=np.float64))
    return _loss_from_logits(model.head, logits, np.asarray(y))[0]


def _loss_from_logits(head: str, logits: np.ndarray, y: np.ndarray):
    # non-finite inputs propagate to a NaN loss, which the trainer reports
    with np.errstate(invalid="ignore", over="ignore"):
        return _loss_terms(head, logits, y)


def _loss_terms(head: str, logits: np.ndarray, y: np.ndarray):
    n = logits.shape[0]
    if head == "binary":
        z = logits[:, 0]
        yf = y.astype(np.float64)
        loss = float(np.mean(np.logaddexp(0.0, z) - yf * z))
        dz = ((_sigmoid(z) - yf) / n)[:, None]
    else:
        logp = _log_softmax(logits)
        idx = y.astype(np.int64)
        loss = float(-logp[np.arange(n), idx].mean())
        dz = np.exp(logp)
        dz[np.arange(n), idx] -= 1.0
        dz /= n
    return loss, dz


def mlp_gradients(model: MlpModel, x, y, out: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Mean loss and its exact gradient, flattened in the model's parameter order.

    Binary head: ``y`` holds 0/1 labels (1 = bad mesh), loss is binary
    cross-entropy. Softmax head: ``y`` holds class indices, loss is
    cross-entropy.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    logits, inputs, pre = _forward(model, x)
    loss, dz = _loss_from_logits(model.head, logits, y)
    grad = np.zeros(model.n_params) if out is None else out
    gw, gb = _views(grad, model.shapes)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i][...] = inputs[i].T @ dz
        gb[i][...] = dz.sum(axis=0)
        if i:
            dz = (dz @ model.weights[i].T) * (pre[i - 1] > 0)
    return loss, grad


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def train_mlp(
    layer_sizes: Sequence[int],
    head: str,
    x_train,
    y_train,
    x_val=None,
    y_val=None,
    config: TrainConfig = TrainConfig(),
) -> Tuple[MlpModel, TrainHistory]:
    """Mini-batch Adam on standardized features; keeps the best-validation parameters.

    ``train_loss[0]`` is the loss of the initialized model; entry ``e`` is the
    full-training-set loss after epoch ``e``. Without a validation set every
    epoch runs and the last parameters are returned.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    n = x_train.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        x_val = np.asarray(x_val, dtype=np.float64)
        y_val = np.asarray(y_val)

    rng = np.random.default_rng(config.seed)
    model = init_mlp(layer_sizes, head, rng)
    model.config = {"train": dataclasses.asdict(config)}
    hist = TrainHistory()
    hist.train_loss.append(mlp_loss(model, x_train, y_train))
    best_val = mlp_loss(model, x_val, y_val) if has_val else math.inf
    if has_val:
        hist.val_loss.append(best_val)
    best_params = model.params.copy()

    m = np.zeros(model.n_params)
    v = np.zeros(model.n_params)
    grad = np.zeros(model.n_params)
    b1, b2, step = config.beta1, config.beta2, 0
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, _ = mlp_gradients(model, x_train[idx], y_train[idx], out=grad)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            step += 1
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            lr_t = config.learning_rate * math.sqrt(1 - b2**step) / (1 - b1**step)
            model.params -= lr_t * m / (np.sqrt(v) + config.eps)
        hist.train_loss.append(mlp_loss(model, x_train, y_train))
        if not has_val:
            best_params[...] = model.params
            hist.best_epoch = epoch
            continue
        val = mlp_loss(model, x_val, y_val)
        hist.val_loss.append(val)
        if val < best_val:
            best_val, since_best = val, 0
            best_params[...] = model.params
            hist.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                hist.stopped_early = True
                break
    model.params[...] = best_params
    model.config.update({"best_epoch": hist.best_epoch, "epochs_run": len(hist.train_loss) - 1})
    return model, hist
