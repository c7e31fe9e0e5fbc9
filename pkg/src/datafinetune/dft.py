"""Data fine-tuning: learn one universal additive perturbation for a frozen model.

The perturbed sample is ``Z = 0.5 * (tanh(U + N) + 1)`` where ``U`` is the
raw sample (``literal`` mode) or its tanh pre-image ``arctanh(2X - 1)``
(``preimage`` mode, in which ``N = 0`` reproduces ``X``). Either way every
entry of ``Z`` stays inside the open unit interval.

``N`` minimizes

    mean_k max(0, 1 - y_k . P(Z_k))  +  lam * mean_k ||X_k - Z_k||^2

over mini-batches with Adam, starting from the zero vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as mdl
from .core import DTYPE, AdamState, adam_step, arctanh_elem, as_tensor, make_rng
from .data import Dataset, one_hot
from .errors import DimensionError, FormatError, FrozenModelError, ValidationError, VersionError

MODES = ("literal", "preimage")
OPTIMIZERS = ("adam", "sgd")

PERTURBATION_MAGIC = b"DFTNOISE"
PERTURBATION_VERSION = 1

# keeps Z strictly inside (0, 1) even where tanh rounds to +-1
_Z_FLOOR = 2.0 ** -60
_Z_CEIL = 1.0 - 2.0 ** -53


@dataclass
class Perturbation:
    n: np.ndarray
    mode: str = "literal"
    clamp_eps: float = 1e-6

    def __post_init__(self):
        self.n = as_tensor(self.n, 1)
        if self.mode not in MODES:
            raise ValidationError(f"unknown transform mode {self.mode!r}; choose from {MODES}")
        if not np.all(np.isfinite(self.n)):
            raise ValidationError("perturbation contains NaN or Inf")
        if not 0.0 < self.clamp_eps < 1.0:
            raise ValidationError("clamp_eps must lie in (0, 1)")

    @classmethod
    def zeros(cls, d: int, mode: str = "literal", clamp_eps: float = 1e-6) -> "Perturbation":
        return cls(np.zeros(int(d), DTYPE), mode, clamp_eps)

    @property
    def d(self) -> int:
        return self.n.shape[0]

    def to_bytes(self) -> bytes:
        head = struct.pack("<8sIBdQ", PERTURBATION_MAGIC, PERTURBATION_VERSION,
                           MODES.index(self.mode), float(self.clamp_eps), self.d)
        return head + np.asarray(self.n, dtype="<f8").tobytes()


_PERT_HEADER = struct.Struct("<8sIBdQ")


def perturbation_from_bytes(data: bytes) -> Perturbation:
    if len(data) < _PERT_HEADER.size:
        raise FormatError("perturbation file is truncated")
    magic, version, mode, eps, d = _PERT_HEADER.unpack_from(data)
    if magic != PERTURBATION_MAGIC:
        raise FormatError("not a perturbation file (bad magic)")
    if version != PERTURBATION_VERSION:
        raise VersionError(f"unsupported perturbation file version {version}")
    if mode >= len(MODES):
        raise FormatError(f"unknown mode code {mode}")
    if len(data) != _PERT_HEADER.size + 8 * d:
        raise FormatError(f"perturbation payload should hold {d} values")
    n = np.frombuffer(data, dtype="<f8", offset=_PERT_HEADER.size).astype(DTYPE)
    return Perturbation(n, MODES[mode], eps)


def save_perturbation(p: Perturbation, path) -> None:
    Path(path).write_bytes(p.to_bytes())


def load_perturbation(path) -> Perturbation:
    return perturbation_from_bytes(Path(path).read_bytes())


@dataclass
class DftConfig:
    learning_rate: float = 0.001
    batch_size: int = 800
    iters_per_batch: int = 16
    epochs: int = 5
    distance_weight: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    mode: str = "literal"
    clamp_eps: float = 1e-6
    shuffle: bool = False

    def validate(self) -> "DftConfig":
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("batch_size", "iters_per_batch", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.distance_weight < 0:
            raise ValidationError(f"distance_weight must be >= 0, got {self.distance_weight}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown transform mode {self.mode!r}")
        if not 0.0 < self.clamp_eps < 1.0:
            raise ValidationError("clamp_eps must lie in (0, 1)")
        return self

    @classmethod
    def from_dict(cls, d: dict | None) -> "DftConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown dft config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "learning_rate": float(self.learning_rate),
            "batch_size": int(self.batch_size),
            "iters_per_batch": int(self.iters_per_batch),
            "epochs": int(self.epochs),
            "distance_weight": float(self.distance_weight),
            "seed": int(self.seed),
            "optimizer": self.optimizer,
            "mode": self.mode,
            "clamp_eps": float(self.clamp_eps),
            "shuffle": bool(self.shuffle),
        }


# ------------------------------------------------------------------ transform

def _check_pair(X, p: Perturbation) -> np.ndarray:
    X = as_tensor(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p.d:
        raise DimensionError(f"perturbation has {p.d} entries, data has shape {X.shape}")
    return X


def _base(X: np.ndarray, p: Perturbation) -> np.ndarray:
    if p.mode == "literal":
        return X
    return arctanh_elem(2.0 * X - 1.0, p.clamp_eps)


def transform_with_grad(X, p: Perturbation) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed samples and their elementwise derivative w.r.t. ``N``."""
    X = _check_pair(X, p)
    t = np.tanh(_base(X, p) + p.n)
    raw = 0.5 * (t + 1.0)
    Z = np.clip(raw, _Z_FLOOR, _Z_CEIL)
    dZ = np.where(Z == raw, 0.5 * (1.0 - t * t), 0.0)
    return Z, dZ


def transform(X, p: Perturbation) -> np.ndarray:
    return transform_with_grad(X, p)[0]


# ------------------------------------------------------------ loss components

def hinge_loss(y, scores) -> float:
    """Mean over samples of ``max(0, 1 - y_k . scores_k)``.

    With probability-valued scores the max never clips, but it is kept so the
    function means the same thing for any score vector.
    """
    y = as_tensor(y, 2)
    scores = as_tensor(scores, 2)
    if y.shape != scores.shape:
        raise DimensionError(f"one-hot shape {y.shape} != score shape {scores.shape}")
    if y.shape[0] == 0:
        raise ValidationError("hinge loss of an empty batch")
    return float(np.mean(np.maximum(0.0, 1.0 - np.sum(y * scores, axis=1))))


def distance(X, Z) -> float:
    """Squared Euclidean distance per sample, averaged over samples."""
    X = as_tensor(X)
    Z = as_tensor(Z)
    if X.shape != Z.shape:
        raise DimensionError(f"shape {X.shape} != {Z.shape}")
    if X.ndim == 1:
        X, Z = X[None, :], Z[None, :]
    if X.shape[0] == 0:
        raise ValidationError("distance of an empty batch")
    return float(np.sum((X - Z) ** 2) / X.shape[0])


def mean_abs_change(X, Z) -> float:
    """Mean per-feature ``|X - Z|``, the visual-change statistic used in reports."""
    return float(np.mean(np.abs(as_tensor(X) - as_tensor(Z))))


def _require_frozen(model: mdl.FeedForwardModel) -> None:
    if not model.frozen:
        raise FrozenModelError("data fine-tuning needs a frozen model; call model.freeze()")


def _labels_onehot(model: mdl.FeedForwardModel, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 1:
        return one_hot(y, model.n_classes)
    return as_tensor(y, 2)


def objective(model: mdl.FeedForwardModel, X, y, p: Perturbation, lam: float = 1.0) -> float:
    _require_frozen(model)
    X = _check_pair(X, p)
    Z = transform(X, p)
    y = _labels_onehot(model, y)
    return hinge_loss(y, mdl.forward(model, Z)) + lam * distance(X, Z)


def objective_and_grad(model: mdl.FeedForwardModel, X, y, p: Perturbation, lam: float = 1.0):
    """Objective value and its gradient w.r.t. ``p.n`` (a d-vector)."""
    _require_frozen(model)
    X = _check_pair(X, p)
    y = _labels_onehot(model, y)
    m = X.shape[0]
    if y.shape != (m, model.n_classes):
        raise DimensionError(f"one-hot shape {y.shape} != {(m, model.n_classes)}")
    Z, dZ_dN = transform_with_grad(X, p)
    scores = mdl.forward(model, Z)
    margin = 1.0 - np.sum(y * scores, axis=1)
    value = float(np.mean(np.maximum(0.0, margin))) + lam * distance(X, Z)

    # subgradient 0 at the kink margin == 0
    active = (margin > 0).astype(DTYPE)[:, None]
    dL_dscores = -y * active / m
    dL_dZ = mdl.grad_input(model, Z, dL_dscores)
    if lam:
        dL_dZ = dL_dZ + lam * 2.0 * (Z - X) / m
    grad = np.sum(dL_dZ * dZ_dN, axis=0)
    return value, grad


def grad_perturbation(model: mdl.FeedForwardModel, X, y, p: Perturbation, lam: float = 1.0) -> np.ndarray:
    return objective_and_grad(model, X, y, p, lam)[1]


# ------------------------------------------------------------------- learning

@dataclass
class DftResult:
    perturbation: Perturbation
    trace: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.trace)


def effective_batch_size(config: DftConfig, m: int) -> int:
    return max(1, min(int(config.batch_size), int(m)))


def learn_perturbation(
    model: mdl.FeedForwardModel,
    dataset: Dataset,
    config: DftConfig,
    init: Perturbation | None = None,
) -> DftResult:
    """Learn one universal perturbation for ``dataset`` against a frozen ``model``.

    For every epoch, batches are taken in dataset order (or a seeded shuffle),
    and each batch gets ``iters_per_batch`` optimizer steps. The optimizer
    state carries over between batches and epochs. The trace holds the batch
    objective just before each step.
    """
    _require_frozen(model)
    config.validate()
    if model.attribute not in dataset.labels:
        raise ValidationError(f"dataset has no labels for attribute {model.attribute!r}")
    X = dataset.X
    if X.shape[1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} features, data has {X.shape[1]}")
    m = X.shape[0]
    if m == 0:
        raise ValidationError("cannot learn a perturbation on an empty dataset")
    Y = one_hot(dataset.labels[model.attribute], model.n_classes)

    if init is None:
        p = Perturbation.zeros(X.shape[1], config.mode, config.clamp_eps)
    else:
        if init.d != X.shape[1]:
            raise DimensionError(f"initial perturbation has {init.d} entries, data has {X.shape[1]}")
        p = Perturbation(init.n.copy(), config.mode, config.clamp_eps)

    bs = effective_batch_size(config, m)
    rng = make_rng(config.seed)
    state = AdamState.like(p.n, config.learning_rate)
    trace: list[float] = []
    for _ in range(int(config.epochs)):
        order = rng.permutation(m) if config.shuffle else np.arange(m)
        for start in range(0, m, bs):
            idx = order[start:start + bs]
            xb, yb = X[idx], Y[idx]
            for _ in range(int(config.iters_per_batch)):
                value, grad = objective_and_grad(model, xb, yb, p, config.distance_weight)
                trace.append(value)
                if config.optimizer == "adam":
                    new_n, state = adam_step(p.n, grad, state)
                else:
                    new_n = p.n - config.learning_rate * grad
                p = Perturbation(new_n, p.mode, p.clamp_eps)
    return DftResult(p, trace)


def apply(dataset: Dataset, p: Perturbation) -> Dataset:
    """New dataset with every sample replaced by its perturbed version."""
    return dataset.with_features(transform(dataset.X, p))
