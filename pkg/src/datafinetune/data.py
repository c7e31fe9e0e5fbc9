"""Datasets: synthetic blobs and toy images, distribution shift, splits and file I/O."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DTYPE, as_tensor, make_rng
from .errors import DimensionError, FormatError, LabelError, ValidationError

SPLITS = ("train", "val", "test", "all")
TOY_KINDS = ("stripe-orientation", "brightness-blob")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute names with their class counts."""

    attributes: tuple[tuple[str, int], ...]

    def __post_init__(self):
        attrs = tuple((str(n), int(c)) for n, c in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        names = [n for n, _ in attrs]
        if len(set(names)) != len(names):
            raise ValidationError(f"attribute names must be unique: {names}")
        for name, c in attrs:
            if c < 2:
                raise ValidationError(f"attribute {name!r} needs at least 2 classes, got {c}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.attributes]

    def classes(self, name: str) -> int:
        for n, c in self.attributes:
            if n == name:
                return c
        raise ValidationError(f"unknown attribute {name!r}")


@dataclass
class Dataset:
    X: np.ndarray
    labels: dict[str, np.ndarray]
    schema: AttributeSchema
    split: str = "all"

    def __post_init__(self):
        self.X = as_tensor(self.X, 2)
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split tag {self.split!r}")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("features contain NaN or Inf")
        if self.X.size and (self.X.min() < 0.0 or self.X.max() > 1.0):
            raise ValidationError("features must lie in [0, 1]")
        if set(self.labels) != set(self.schema.names):
            raise ValidationError(f"label columns {sorted(self.labels)} do not match schema {self.schema.names}")
        m = self.X.shape[0]
        for name in self.schema.names:
            lab = np.asarray(self.labels[name])
            if lab.shape != (m,):
                raise DimensionError(f"labels for {name!r} have shape {lab.shape}, expected ({m},)")
            if m and (not np.issubdtype(lab.dtype, np.integer) and not np.all(lab == np.round(lab))):
                raise LabelError(f"labels for {name!r} are not integers")
            lab = lab.astype(np.int64)
            c = self.schema.classes(name)
            if m and (lab.min() < 0 or lab.max() >= c):
                raise LabelError(f"labels for {name!r} must lie in [0, {c})")
            self.labels[name] = lab

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, indices, split: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.X[idx].copy(),
            {k: v[idx].copy() for k, v in self.labels.items()},
            self.schema,
            self.split if split is None else split,
        )

    def with_features(self, X) -> "Dataset":
        """Same labels and schema, new feature matrix."""
        return Dataset(np.array(X, dtype=DTYPE), {k: v.copy() for k, v in self.labels.items()},
                       self.schema, self.split)


@dataclass
class ShiftSpec:
    """Affine change of the feature distribution, applied around the cube centre 0.5."""

    translation: Sequence[float] | None = None
    scale: float = 1.0
    rotation: float = 0.0  # radians, 2-d only
    brightness: float = 0.0
    noise_sigma: float = 0.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "ShiftSpec":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown shift keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "translation": None if self.translation is None else [float(t) for t in self.translation],
            "scale": float(self.scale),
            "rotation": float(self.rotation),
            "brightness": float(self.brightness),
            "noise_sigma": float(self.noise_sigma),
        }

    def is_identity(self) -> bool:
        no_move = self.translation is None or not np.any(np.asarray(self.translation, dtype=DTYPE))
        return (no_move and self.scale == 1.0 and self.rotation == 0.0
                and self.brightness == 0.0 and self.noise_sigma == 0.0)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise DimensionError("labels must be a vector")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes), DTYPE)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _single_schema(attribute: str, n_classes: int = 2) -> AttributeSchema:
    return AttributeSchema(((attribute, n_classes),))


# ----------------------------------------------------------------- generators

def gen_blobs(
    centers,
    sigmas,
    counts,
    seed: int,
    bounds=None,
    attribute: str = "class",
) -> Dataset:
    """Isotropic Gaussian blobs in 2-d, one class per centre.

    Features are min-max normalized into the unit square, or mapped through a
    fixed box ``bounds=(lo, hi)`` and clipped so that independently drawn
    datasets share one coordinate frame. Samples come out in a seeded random
    order rather than grouped by class.
    """
    centers = as_tensor(centers, 2)
    if centers.shape[1] != 2:
        raise DimensionError("blob centres must be 2-d points")
    k = centers.shape[0]
    sigmas = np.broadcast_to(as_tensor(sigmas), (k,)).astype(DTYPE)
    counts = [int(c) for c in np.broadcast_to(np.asarray(counts), (k,))]
    if k < 2:
        raise ValidationError("need at least two classes")
    if np.any(sigmas <= 0) or not np.all(np.isfinite(sigmas)):
        raise ValidationError(f"sigmas must be positive, got {sigmas.tolist()}")
    if any(c < 1 for c in counts):
        raise ValidationError(f"every class needs at least one sample, got {counts}")

    rng = make_rng(seed)
    pts, labs = [], []
    for cls, (center, sigma, count) in enumerate(zip(centers, sigmas, counts)):
        pts.append(center + sigma * rng.standard_normal((count, 2)))
        labs.append(np.full(count, cls, np.int64))
    X = np.concatenate(pts)
    y = np.concatenate(labs)
    order = rng.permutation(X.shape[0])
    X, y = X[order], y[order]

    if bounds is None:
        lo, hi = X.min(axis=0), X.max(axis=0)
    else:
        lo, hi = (np.broadcast_to(as_tensor(b), (2,)) for b in bounds)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    X = np.clip((X - lo) / span, 0.0, 1.0)
    return Dataset(X, {attribute: y}, _single_schema(attribute, k))


def shift(dataset: Dataset, spec: ShiftSpec, seed: int = 0) -> Dataset:
    """Apply scale, rotation, translation, brightness and noise, then clip to [0, 1].

    Steps whose parameters are neutral are skipped, so an identity spec
    returns bit-identical features.
    """
    if spec.noise_sigma < 0:
        raise ValidationError("noise_sigma must be >= 0")
    if not np.isfinite(spec.scale):
        raise ValidationError("scale must be finite")
    X = dataset.X.copy()
    if spec.scale != 1.0:
        X = (X - 0.5) * spec.scale + 0.5
    if spec.rotation != 0.0:
        if dataset.d != 2:
            raise ValidationError("rotation is only defined for 2-d data")
        c, s = np.cos(spec.rotation), np.sin(spec.rotation)
        rot = np.array([[c, -s], [s, c]])
        X = (X - 0.5) @ rot.T + 0.5
    if spec.translation is not None:
        t = as_tensor(spec.translation, 1)
        if t.shape[0] != dataset.d:
            raise DimensionError(f"translation has {t.shape[0]} entries, data has {dataset.d} features")
        if np.any(t):
            X = X + t
    if spec.brightness != 0.0:
        X = X + spec.brightness
    if spec.noise_sigma > 0:
        X = X + spec.noise_sigma * make_rng(seed).standard_normal(X.shape)
    return dataset.with_features(np.clip(X, 0.0, 1.0))


_TOY_DEFAULTS = {
    "stripe-orientation": {"contrast": 0.6, "noise": 0.05, "background": (0.35, 0.65)},
    "brightness-blob": {"amplitude": (0.15, 0.3), "width": 2.0, "noise": 0.08, "background": (0.27, 0.33)},
}


def gen_toy_images(
    kind: str,
    count: int,
    params: dict | None = None,
    shift_knobs: dict | None = None,
    seed: int = 0,
    size: int = 8,
) -> Dataset:
    """8x8 grayscale images with one binary attribute, flattened row-major.

    ``stripe-orientation``: label 1 for vertical stripes, 0 for horizontal.
    ``brightness-blob``: label 1 when a bright Gaussian spot is present.

    ``shift_knobs`` (``brightness``, ``contrast``, ``noise``) alter the whole
    image population to emulate a different acquisition source.
    """
    if kind not in TOY_KINDS:
        raise ValidationError(f"unknown toy image kind {kind!r}; choose from {TOY_KINDS}")
    if int(count) < 1:
        raise ValidationError("toy image count must be >= 1")
    count = int(count)
    p = dict(_TOY_DEFAULTS[kind])
    p.update(params or {})
    knobs = {"brightness": 0.0, "contrast": 1.0, "noise": 0.0}
    knobs.update(shift_knobs or {})
    positive_fraction = float(p.get("positive_fraction", 0.5))

    rng = make_rng(seed)
    n_pos = int(round(count * positive_fraction))
    y = rng.permutation(np.r_[np.zeros(count - n_pos, np.int64), np.ones(n_pos, np.int64)])
    rows, cols = np.mgrid[0:size, 0:size].astype(DTYPE)
    images = np.empty((count, size, size), DTYPE)
    bg_lo, bg_hi = p["background"]

    for k in range(count):
        bg = rng.uniform(bg_lo, bg_hi)
        if kind == "stripe-orientation":
            freq = rng.integers(1, 3)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            coord = cols if y[k] == 1 else rows
            img = bg + 0.5 * p["contrast"] * np.sin(2.0 * np.pi * freq * coord / size + phase)
        else:
            img = np.full((size, size), bg)
            if y[k] == 1:
                amp = rng.uniform(*p["amplitude"])
                cy, cx = rng.uniform(2.0, size - 3.0, size=2)
                img = img + amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * p["width"] ** 2))
        images[k] = img + p["noise"] * rng.standard_normal((size, size))

    images = (images - 0.5) * knobs["contrast"] + 0.5 + knobs["brightness"]
    if knobs["noise"] > 0:
        images = images + knobs["noise"] * rng.standard_normal(images.shape)
    X = np.clip(images.reshape(count, size * size), 0.0, 1.0)
    attribute = p.get("attribute", "stripes_vertical" if kind == "stripe-orientation" else "blob_present")
    return Dataset(X, {attribute: y}, _single_schema(attribute))


# --------------------------------------------------------------------- splits

def _allocate(n: int, fractions: np.ndarray) -> list[int]:
    # largest remainder so the parts sum to n
    raw = fractions * n
    base = np.floor(raw + 1e-9).astype(int)
    rem = n - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    for i in order[:rem]:
        base[i] += 1
    return base.tolist()


def split_indices(labels, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> list[np.ndarray]:
    fractions = np.asarray(fractions, dtype=DTYPE)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be non-negative and sum to 1, got {fractions.tolist()}")
    labels = np.asarray(labels)
    n_parts = int(np.count_nonzero(fractions))
    rng = make_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < n_parts:
            raise ValidationError(f"class {cls} has {len(idx)} samples, fewer than the {n_parts} requested splits")
        idx = idx[rng.permutation(len(idx))]
        start = 0
        for j, size in enumerate(_allocate(len(idx), fractions)):
            parts[j].append(idx[start:start + size])
            start += size
    return [np.sort(np.concatenate(p)) if p else np.empty(0, np.int64) for p in parts]


def split(dataset: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0, attribute: str | None = None):
    """Stratified (train, val, test) split keeping the original sample order."""
    if len(fractions) != 3:
        raise ValidationError("split needs exactly three fractions (train, val, test)")
    attribute = attribute or dataset.schema.names[0]
    idx = split_indices(dataset.labels[attribute], fractions, seed)
    return tuple(dataset.subset(i, tag) for i, tag in zip(idx, ("train", "val", "test")))


# ------------------------------------------------------------------------ CSV

def save_csv(dataset: Dataset, path) -> None:
    names = dataset.schema.names
    header = [f"label:{n}" for n in names] + [f"x{j}" for j in range(dataset.d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(dataset.m):
            row = [str(int(dataset.labels[n][k])) for n in names]
            row += [repr(float(v)) for v in dataset.X[k]]
            writer.writerow(row)


def load_csv(path, schema: AttributeSchema | None = None, split_tag: str = "all") -> Dataset:
    """Read a dataset written by :func:`save_csv`.

    Without ``schema``, each attribute's class count is inferred as
    ``max(2, max label + 1)``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = rows[0]
    label_cols = [i for i, h in enumerate(header) if h.startswith("label:")]
    feat_cols = [i for i, h in enumerate(header) if not h.startswith("label:")]
    expected = [f"x{j}" for j in range(len(feat_cols))]
    if [header[i] for i in feat_cols] != expected:
        raise FormatError(f"{path}: feature columns must be named x0..x{len(feat_cols) - 1}")
    if not label_cols:
        raise FormatError(f"{path}: no label columns")
    body = rows[1:]
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{r}: expected {len(header)} fields, got {len(row)}")
    try:
        X = np.array([[float(row[i]) for i in feat_cols] for row in body], dtype=DTYPE).reshape(len(body), len(feat_cols))
        labels = {header[i][len("label:"):]: np.array([int(row[i]) for row in body], dtype=np.int64)
                  for i in label_cols}
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if schema is None:
        schema = AttributeSchema(tuple(
            (name, max(2, int(lab.max()) + 1 if lab.size else 2)) for name, lab in labels.items()
        ))
    return Dataset(X, labels, schema, split_tag)


# ------------------------------------------------------------------------ IDX

def _read_idx(path, magic: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: too short for an IDX header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    n = int(np.prod(dims))
    if len(data) - header != n:
        raise FormatError(f"{path}: expected {n} data bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, attribute: str = "label", n_classes: int | None = None) -> Dataset:
    """MNIST-format image/label pair; pixels are scaled to [0, 1] by /255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(DTYPE) / 255.0
    c = n_classes if n_classes is not None else max(2, int(labels.max()) + 1 if labels.size else 2)
    if labels.size and labels.max() >= c:
        raise LabelError(f"label {labels.max()} overflows {c} classes")
    return Dataset(X, {attribute: labels}, _single_schema(attribute, c))


def save_idx(dataset: Dataset, images_path, labels_path, image_shape: tuple[int, int], attribute: str | None = None) -> None:
    """Write features (quantized to bytes) and one label column as IDX files."""
    rows, cols = image_shape
    if rows * cols != dataset.d:
        raise DimensionError(f"image shape {image_shape} does not hold {dataset.d} features")
    attribute = attribute or dataset.schema.names[0]
    pix = np.round(dataset.X * 255.0).astype(np.uint8)
    lab = dataset.labels[attribute]
    if lab.size and lab.max() > 255:
        raise LabelError("IDX labels must fit in one byte")
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.m, rows, cols) + pix.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, dataset.m) + lab.astype(np.uint8).tobytes())
