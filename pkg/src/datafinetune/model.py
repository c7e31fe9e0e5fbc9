"""Feed-forward attribute classifier used as the frozen "black box".

A model is a stack of affine layers with elementwise nonlinearities and a
softmax head. Once frozen, its arrays are made read-only and the model is only
queried through :func:`forward` and :func:`grad_input`.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DTYPE, AdamOptimizer, as_tensor, make_rng, softmax
from .errors import (
    DimensionError,
    FormatError,
    FrozenModelError,
    LabelError,
    ValidationError,
    VersionError,
)

ACTIVATIONS = ("identity", "relu", "tanh")

# hidden widths used with 4096-d face descriptors; desk-scale default is (32, 32)
FULL_SCALE_HIDDEN = (512, 512)

MODEL_MAGIC = b"DFTMODEL"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.005
    batch_size: int = 32
    seed: int = 0
    hidden_dims: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    shuffle: bool = True
    # layers before this index keep their weights (a pretrained feature extractor)
    trainable_from: int = 0

    def validate(self, allow_zero_lr: bool = False) -> "TrainConfig":
        if int(self.epochs) < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0 or (self.learning_rate == 0 and not allow_zero_lr):
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if int(self.batch_size) < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if any(int(h) < 1 for h in self.hidden_dims):
            raise ValidationError(f"hidden widths must be positive: {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if int(self.trainable_from) < 0:
            raise ValidationError("trainable_from must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        if "hidden_dims" in d:
            d["hidden_dims"] = tuple(int(h) for h in d["hidden_dims"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "epochs": int(self.epochs),
            "learning_rate": float(self.learning_rate),
            "batch_size": int(self.batch_size),
            "seed": int(self.seed),
            "hidden_dims": [int(h) for h in self.hidden_dims],
            "activation": self.activation,
            "shuffle": bool(self.shuffle),
            "trainable_from": int(self.trainable_from),
        }


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class FeedForwardModel:
    layers: list[Layer]
    attribute: str = "attr"
    frozen: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a model needs at least one layer")
        for i, layer in enumerate(self.layers):
            layer.weights = as_tensor(layer.weights, 2)
            layer.bias = as_tensor(layer.bias, 1)
            if layer.bias.shape[0] != layer.out_dim:
                raise DimensionError(f"layer {i}: bias length {layer.bias.shape[0]} != {layer.out_dim}")
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {layer.activation!r}")
            if i > 0 and layer.in_dim != self.layers[i - 1].out_dim:
                raise DimensionError(
                    f"layer {i} expects {layer.in_dim} inputs but layer {i - 1} gives {self.layers[i - 1].out_dim}"
                )
        if self.n_classes < 2:
            raise ValidationError("softmax head needs at least two classes")
        if self.frozen:
            self.freeze()

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        n_classes: int,
        hidden_dims=(32, 32),
        activation: str = "relu",
        seed: int = 0,
        attribute: str = "attr",
    ) -> "FeedForwardModel":
        """Glorot-uniform weights and zero biases; the output layer is linear."""
        rng = make_rng(seed)
        dims = [int(input_dim), *[int(h) for h in hidden_dims], int(n_classes)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            act = "identity" if i == len(dims) - 2 else activation
            layers.append(Layer(w, np.zeros(fan_out, DTYPE), act))
        return cls(layers, attribute=attribute)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    def freeze(self) -> "FeedForwardModel":
        self.frozen = True
        for layer in self.layers:
            layer.weights.flags.writeable = False
            layer.bias.flags.writeable = False
        return self

    def copy(self, frozen: bool | None = None) -> "FeedForwardModel":
        layers = [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return FeedForwardModel(layers, self.attribute, self.frozen if frozen is None else frozen)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def _set_parameters(self, params: list[np.ndarray]) -> None:
        if self.frozen:
            raise FrozenModelError("model is frozen")
        for i, layer in enumerate(self.layers):
            layer.weights = params[2 * i]
            layer.bias = params[2 * i + 1]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_model(self, buf)
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


# ---------------------------------------------------------------- forward/back

def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    return pre


def _activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0).astype(DTYPE)
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


def _check_input(model: FeedForwardModel, X) -> np.ndarray:
    X = as_tensor(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("inputs contain NaN or Inf")
    return X


def _forward_cache(model: FeedForwardModel, X: np.ndarray):
    inputs, pres, posts = [], [], []
    h = X
    for layer in model.layers:
        inputs.append(h)
        pre = h @ layer.weights.T + layer.bias
        h = _activate(layer.activation, pre)
        pres.append(pre)
        posts.append(h)
    return inputs, pres, posts


def logits(model: FeedForwardModel, X) -> np.ndarray:
    X = _check_input(model, X)
    return _forward_cache(model, X)[2][-1]


def forward(model: FeedForwardModel, X) -> np.ndarray:
    """Class scores, one row per sample, each row a probability vector."""
    return softmax(logits(model, X))


def predict(model: FeedForwardModel, X) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(forward(model, X), axis=1)


def _backward(model, inputs, pres, posts, dlogits, want_params: bool):
    grads = [None] * (2 * len(model.layers))
    upstream = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        delta = upstream * _activation_grad(layer.activation, pres[i], posts[i])
        if want_params:
            grads[2 * i] = delta.T @ inputs[i]
            grads[2 * i + 1] = delta.sum(axis=0)
        upstream = delta @ layer.weights
    return upstream, grads


def softmax_backward(scores: np.ndarray, dL_dscores: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. softmax outputs to one w.r.t. the logits."""
    inner = np.sum(dL_dscores * scores, axis=1, keepdims=True)
    return scores * (dL_dscores - inner)


def grad_input_from_logits(model: FeedForwardModel, X, dL_dlogits) -> np.ndarray:
    X = _check_input(model, X)
    dL_dlogits = as_tensor(dL_dlogits)
    if dL_dlogits.shape != (X.shape[0], model.n_classes):
        raise DimensionError(f"upstream gradient shape {dL_dlogits.shape} != {(X.shape[0], model.n_classes)}")
    inputs, pres, posts = _forward_cache(model, X)
    return _backward(model, inputs, pres, posts, dL_dlogits, want_params=False)[0]


def grad_input(model: FeedForwardModel, X, dL_dscores) -> np.ndarray:
    """Gradient of a loss w.r.t. the model inputs, given its gradient w.r.t. the scores.

    Parameters are read but never written, so this is safe on frozen models.
    """
    X = _check_input(model, X)
    dL_dscores = as_tensor(dL_dscores)
    if dL_dscores.shape != (X.shape[0], model.n_classes):
        raise DimensionError(f"upstream gradient shape {dL_dscores.shape} != {(X.shape[0], model.n_classes)}")
    inputs, pres, posts = _forward_cache(model, X)
    scores = softmax(posts[-1])
    dlogits = softmax_backward(scores, dL_dscores)
    return _backward(model, inputs, pres, posts, dlogits, want_params=False)[0]


def cross_entropy(model: FeedForwardModel, X, labels) -> float:
    """Mean softmax cross-entropy of ``labels`` under the model."""
    z = logits(model, X)
    labels = _check_labels(labels, z.shape[0], model.n_classes)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_norm - shifted[np.arange(len(labels)), labels]))


def _check_labels(labels, m: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise DimensionError(f"expected {m} labels, got shape {labels.shape}")
    if m and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    return labels.astype(np.int64)


# ------------------------------------------------------------------- training

def _dataset_arrays(model: FeedForwardModel, dataset) -> tuple[np.ndarray, np.ndarray]:
    X = _check_input(model, dataset.X)
    if model.attribute not in dataset.labels:
        raise ValidationError(f"dataset has no labels for attribute {model.attribute!r}")
    y = _check_labels(dataset.labels[model.attribute], X.shape[0], model.n_classes)
    return X, y


def _fit(model: FeedForwardModel, X, y, config: TrainConfig, trace: list | None) -> FeedForwardModel:
    m = X.shape[0]
    if m == 0:
        raise ValidationError("cannot train on an empty dataset")
    first = int(config.trainable_from)
    if first >= len(model.layers):
        raise ValidationError(f"trainable_from={first} leaves no trainable layer")
    rng = make_rng(config.seed)
    opt = AdamOptimizer(config.learning_rate)
    bs = int(config.batch_size)
    for _ in range(int(config.epochs)):
        order = rng.permutation(m) if config.shuffle else np.arange(m)
        for start in range(0, m, bs):
            idx = order[start:start + bs]
            xb, yb = X[idx], y[idx]
            inputs, pres, posts = _forward_cache(model, xb)
            scores = softmax(posts[-1])
            if trace is not None:
                trace.append(float(np.mean(-np.log(np.maximum(scores[np.arange(len(yb)), yb], 1e-300)))))
            dlogits = scores.copy()
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            _, grads = _backward(model, inputs, pres, posts, dlogits, want_params=True)
            params = model.parameters()
            params[2 * first:] = opt.step(params[2 * first:], grads[2 * first:])
            model._set_parameters(params)
    return model


def train(model: FeedForwardModel, dataset, config: TrainConfig, trace: list | None = None) -> FeedForwardModel:
    """Minimize softmax cross-entropy with Adam; updates ``model`` in place and returns it.

    If ``trace`` is given, the mini-batch loss before every step is appended to it.
    """
    if model.frozen:
        raise FrozenModelError("cannot train a frozen model; use fine_tune for a copy")
    config.validate()
    X, y = _dataset_arrays(model, dataset)
    return _fit(model, X, y, config, trace)


def fit(dataset, attribute: str, config: TrainConfig, trace: list | None = None) -> FeedForwardModel:
    """Initialize a fresh model from ``config`` and train it on ``dataset``."""
    config.validate()
    n_classes = dataset.schema.classes(attribute)
    model = FeedForwardModel.initialize(
        dataset.X.shape[1], n_classes, config.hidden_dims, config.activation, config.seed, attribute
    )
    return train(model, dataset, config, trace)


def fine_tune(model: FeedForwardModel, dataset, config: TrainConfig, trace: list | None = None) -> FeedForwardModel:
    """Model fine-tuning baseline: train an unfrozen copy, leave ``model`` untouched.

    The returned copy keeps the frozen flag of the input model.
    """
    config.validate(allow_zero_lr=True)
    tuned = model.copy(frozen=False)
    X, y = _dataset_arrays(tuned, dataset)
    _fit(tuned, X, y, config, trace)
    if model.frozen:
        tuned.freeze()
    return tuned


# ---------------------------------------------------------------- persistence

_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}
_HEADER = struct.Struct("<8sI")


def write_model(model: FeedForwardModel, fh) -> None:
    name = model.attribute.encode("utf-8")
    fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION))
    fh.write(struct.pack("<I", len(name)))
    fh.write(name)
    fh.write(struct.pack("<IB", len(model.layers), int(model.frozen)))
    for layer in model.layers:
        fh.write(struct.pack("<IIB", layer.out_dim, layer.in_dim, _ACT_CODES[layer.activation]))
    for layer in model.layers:
        fh.write(np.asarray(layer.weights, dtype="<f8").tobytes())
        fh.write(np.asarray(layer.bias, dtype="<f8").tobytes())


def model_from_bytes(data: bytes) -> FeedForwardModel:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("model file is truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    magic, version = _HEADER.unpack(take(_HEADER.size))
    if magic != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    if version != MODEL_VERSION:
        raise VersionError(f"unsupported model file version {version}")
    (name_len,) = struct.unpack("<I", take(4))
    try:
        attribute = bytes(take(name_len)).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("attribute name is not valid UTF-8") from exc
    n_layers, frozen = struct.unpack("<IB", take(5))
    if n_layers == 0:
        raise FormatError("model file declares no layers")
    shapes = []
    for _ in range(n_layers):
        out_dim, in_dim, code = struct.unpack("<IIB", take(9))
        if code >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation code {code}")
        shapes.append((out_dim, in_dim, ACTIVATIONS[code]))
    for i in range(1, n_layers):
        if shapes[i][1] != shapes[i - 1][0]:
            raise DimensionError(f"layer {i} input width {shapes[i][1]} does not match previous output {shapes[i - 1][0]}")
    layers = []
    for out_dim, in_dim, act in shapes:
        w = np.frombuffer(take(8 * out_dim * in_dim), dtype="<f8").astype(DTYPE).reshape(out_dim, in_dim)
        b = np.frombuffer(take(8 * out_dim), dtype="<f8").astype(DTYPE)
        layers.append(Layer(w, b, act))
    if pos != len(view):
        raise FormatError("trailing bytes after model payload")
    return FeedForwardModel(layers, attribute, bool(frozen))


def save(model: FeedForwardModel, path) -> None:
    Path(path).write_bytes(model.to_bytes())


def load(path) -> FeedForwardModel:
    return model_from_bytes(Path(path).read_bytes())

