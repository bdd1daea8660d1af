"""Small convolutional classifier in plain numpy with analytic backprop.

Inputs are channels-last ``(N, H, W, C)`` float64 batches. The default stack
is conv(16) -> relu -> conv(16) -> relu -> flatten -> dense(128) -> relu ->
dense(9), followed by softmax.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_MAGIC = b"GACK1"
CHANNEL_ORDER = ("open", "high", "low", "close")


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {}

    def __getstate__(self) -> dict:
        # backward caches are per-batch scratch; never copy or pickle them
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_")}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    """Same-padded 2-D convolution, stride 1. Kernel shape ``(kh, kw, cin, cout)``."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, padding: int = 1):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.padding = kernel, padding
        self.params = {
            "W": np.zeros((kernel, kernel, in_channels, out_channels)),
            "b": np.zeros(out_channels),
        }

    def config(self) -> dict:
        return {"in_channels": self.in_channels, "out_channels": self.out_channels, "kernel": self.kernel, "padding": self.padding}

    def fan_in(self) -> int:
        return self.kernel * self.kernel * self.in_channels

    def _cols(self, x: np.ndarray) -> np.ndarray:
        p, k = self.padding, self.kernel
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, Ho, Wo, C, k, k)
        n, ho, wo = win.shape[:3]
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * self.in_channels), (n, ho, wo)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[-1] != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, got {x.shape[-1]}")
        cols, (n, ho, wo) = self._cols(x)
        wm = self.params["W"].reshape(-1, self.out_channels)
        out = cols @ wm + self.params["b"]
        if train:
            self._cache = (cols, x.shape, (n, ho, wo))
        return out.reshape(n, ho, wo, self.out_channels)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        cols, xshape, (n, ho, wo) = self._cache
        k, p, cin = self.kernel, self.padding, self.in_channels
        d2 = dout.reshape(-1, self.out_channels)
        self.grads["W"] = (cols.T @ d2).reshape(self.params["W"].shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].reshape(-1, self.out_channels).T).reshape(n, ho, wo, k, k, cin)
        dxp = np.zeros((xshape[0], xshape[1] + 2 * p, xshape[2] + 2 * p, cin))
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p : p + xshape[1], p : p + xshape[2], :]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params = {"W": np.zeros((in_features, out_features)), "b": np.zeros(out_features)}

    def config(self) -> dict:
        return {"in_features": self.in_features, "out_features": self.out_features}

    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got {x.shape[-1]}")
        if train:
            self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


_LAYER_TYPES: dict[str, Callable[..., Layer]] = {
    "conv2d": Conv2D,
    "relu": ReLU,
    "flatten": Flatten,
    "dense": Dense,
}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    label: int
    confidence: float


class Classifier:
    """Sequential layer stack ending in a softmax over ``num_classes`` logits."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], metadata: Optional[dict] = None):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.metadata: dict = metadata or {}

    @property
    def num_classes(self) -> int:
        return [l for l in self.layers if isinstance(l, Dense)][-1].out_features

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", arr) for i, layer in enumerate(self.layers) for name, arr in layer.params.items()]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", layer.grads[name]) for i, layer in enumerate(self.layers) for name in layer.params]

    def copy(self) -> Classifier:
        return copy.deepcopy(self)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"expected input shape {self.input_shape}, got {x.shape[1:]}")
        return x

    def logits(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = self._check(x)
        for layer in self.layers:
            out = layer.forward(out, train=train)
        return out

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> Prediction:
        """Single ``(H, W, C)`` input."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise ShapeError(f"expected input shape {self.input_shape}, got {x.shape}")
        p = self.probabilities(x)[0]
        k = int(np.argmax(p))
        return Prediction(p, k, float(p[k]))

    def __call__(self, x: np.ndarray) -> Prediction:
        return self.predict(x)

    def predict_labels(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        x = self._check(x)
        return np.concatenate(
            [np.argmax(self.logits(x[i : i + batch_size]), axis=1) for i in range(0, len(x), batch_size)]
        ) if len(x) else np.zeros(0, dtype=np.int64)


def build_classifier(
    seed: Optional[int] = 0,
    input_shape: tuple[int, int, int] = (10, 10, 4),
    conv_channels: tuple[int, ...] = (16, 16),
    hidden: int = 128,
    num_classes: int = 9,
    kernel: int = 3,
) -> Classifier:
    """He-uniform initialized stack; ``seed=None`` leaves every parameter at zero."""
    h, w, c = input_shape
    layers: list[Layer] = []
    cin = c
    for cout in conv_channels:
        layers += [Conv2D(cin, cout, kernel, kernel // 2), ReLU()]
        cin = cout
    layers += [Flatten(), Dense(h * w * cin, hidden), ReLU(), Dense(hidden, num_classes)]
    model = Classifier(layers, input_shape)
    if seed is not None:
        he_uniform(model, np.random.default_rng(seed))
    return model


def he_uniform(model: Classifier, rng: np.random.Generator) -> None:
    for layer in model.layers:
        if isinstance(layer, (Conv2D, Dense)):
            limit = math.sqrt(6.0 / layer.fan_in())
            layer.params["W"][...] = rng.uniform(-limit, limit, layer.params["W"].shape)
            layer.params["b"][...] = 0.0


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def loss_and_gradients(model: Classifier, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its analytic gradient for every parameter."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("batch is empty")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError(f"labels must lie in 0..{model.num_classes - 1}")
    logits = model.logits(x, train=True)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = len(y)
    loss = float(np.mean(logsum - z[np.arange(n), y]))
    if not math.isfinite(loss):
        raise NumericError(
            f"non-finite loss {loss} on batch of {n}: logits range [{np.nanmin(logits)}, {np.nanmax(logits)}]"
        )
    dlogits = np.exp(z - logsum[:, None])
    dlogits[np.arange(n), y] -= 1.0
    dout = dlogits / n
    for layer in reversed(model.layers):
        dout = layer.backward(dout)
    return loss, dict(model.named_grads())


def loss_only(model: Classifier, x: np.ndarray, y: np.ndarray) -> float:
    logits = model.logits(x)
    z = logits - logits.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y]))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: float

    def log_line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss:.6f} "
            f"train_accuracy={self.train_accuracy:.4f} valid_accuracy={self.valid_accuracy:.4f}"
        )


@dataclass
class TrainResult:
    model: Classifier
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: Classifier, history: list[EpochMetrics]):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.eps)


def accuracy(model: Classifier, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model.predict_labels(x) == y)) if len(y) else float("nan")


def train(
    model: Classifier,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_valid: Optional[np.ndarray],
    y_valid: Optional[np.ndarray],
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> TrainResult:
    """Mini-batch Adam on mean cross-entropy; keeps the best-validation parameters.

    Without a validation set the final epoch is kept.
    """
    model = model.copy()
    rng = np.random.default_rng(seed)
    params = [p for _, p in model.named_params()]
    opt = Adam(params, config)
    history: list[EpochMetrics] = []
    best = model.copy()
    best_acc, best_epoch = -1.0, 0
    have_valid = x_valid is not None and y_valid is not None and len(y_valid) > 0
    n = len(y_train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads = loss_and_gradients(model, x_train[idx], y_train[idx])
            except NumericError as exc:
                raise TrainingDiverged(f"diverged at epoch {epoch}: {exc}", best, history) from exc
            opt.step([grads[name] for name, _ in model.named_params()])
            total += loss * len(idx)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}", best, history)
        train_acc = accuracy(model, x_train, y_train)
        valid_acc = accuracy(model, x_valid, y_valid) if have_valid else float("nan")
        m = EpochMetrics(epoch, total / n, train_acc, valid_acc)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
        score = valid_acc if have_valid else float(epoch)
        if score > best_acc:
            best_acc, best_epoch = score, epoch
            best = model.copy()
    best.metadata = dict(model.metadata)
    best.metadata.update(
        {
            "seed": int(seed),
            "epochs": config.epochs,
            "best_epoch": best_epoch,
            "optimizer": {"name": "adam", **config.as_dict()},
            "channel_order": list(CHANNEL_ORDER),
            "final_metrics": asdict(history[best_epoch - 1]) if history else {},
        }
    )
    return TrainResult(best, history, best_epoch)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # rows = true label, columns = predicted
    precision: np.ndarray
    recall: np.ndarray
    support: np.ndarray

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "precision": [None if math.isnan(v) else v for v in self.precision.tolist()],
            "recall": [None if math.isnan(v) else v for v in self.recall.tolist()],
            "support": self.support.tolist(),
        }


def evaluate(model: Classifier, x: np.ndarray, y: np.ndarray) -> Evaluation:
    y = np.asarray(y, dtype=np.int64)
    k = model.num_classes
    pred = model.predict_labels(x)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, diag / predicted, np.nan)
        recall = np.where(support > 0, diag / support, np.nan)
    return Evaluation(float(diag.sum() / max(len(y), 1)), confusion, precision, recall, support)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True).encode("utf-8")


def checkpoint_to_bytes(model: Classifier) -> bytes:
    manifest = {
        "version": 1,
        "input_shape": list(model.input_shape),
        "layers": [
            {
                "type": layer.kind,
                "config": layer.config(),
                "params": [[name, list(arr.shape)] for name, arr in layer.params.items()],
            }
            for layer in model.layers
        ],
        "metadata": model.metadata,
    }
    head = _canonical(manifest)
    blobs = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in model.named_params())
    return CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + blobs


def checkpoint_from_bytes(blob: bytes) -> Classifier:
    if blob[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {blob[:5]!r}, expected {CHECKPOINT_MAGIC!r}")
    (hlen,) = struct.unpack_from("<I", blob, 5)
    manifest = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
    if manifest.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    offset = 9 + hlen
    layers: list[Layer] = []
    for spec in manifest["layers"]:
        layer = _LAYER_TYPES[spec["type"]](**spec["config"])
        for name, shape in spec["params"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
            layer.params[name] = arr.astype(np.float64)
            offset += 8 * count
        layers.append(layer)
    if offset != len(blob):
        raise ValueError(f"checkpoint has {len(blob) - offset} trailing bytes")
    return Classifier(layers, tuple(manifest["input_shape"]), manifest["metadata"])


def save_checkpoint(model: Classifier, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(model))


def load_checkpoint(path: str | Path) -> Classifier:
    return checkpoint_from_bytes(Path(path).read_bytes())
