"""Experiment configuration: JSON schema, presets and dataset construction.

A config file is a JSON object. Every key is optional except ``scenario``
and ``seed`` (which the CLI can also supply)::

    {
      "preset": "shifted-blobs",          # start from a named preset
      "scenario": "inter",                # intra | inter | mft-vs-dft | iterative
      "seed": 1,
      "source": {"kind": "blobs", ...},   # data the black-box model is trained on
      "target": {"kind": "blobs", ...},   # data to fine-tune; null = the source data
      "shift": {"translation": [0.25, 0]},# applied to the target data
      "attribute": "class",
      "model_path": null,                 # load a model instead of training one
      "train": {...}, "mft": {...}, "dft": {...},
      "split": [0.6, 0.2, 0.2],
      "rounds": 2, "dft_only": false,
      "bins": 20, "positive": 1,
      "output_dir": "runs"
    }

Dataset specs take one of the forms::

    {"kind": "blobs", "centers": [[-2, 0], [2, 0]], "sigmas": 0.7,
     "counts": [2000, 2000], "bounds": [-5, 5], "seed": 7}
    {"kind": "toy", "image_kind": "brightness-blob", "count": 2000,
     "params": {}, "shift_knobs": {}, "seed": 7}
    {"kind": "csv", "path": "data.csv"}
    {"kind": "idx", "images": "imgs.idx", "labels": "labels.idx", "attribute": "digit"}

Generated datasets without an explicit ``seed`` use the experiment seed for
the source and the experiment seed + 1000 for the target. ``train``,
``mft`` and ``dft`` blocks inherit the experiment seed unless they set one.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..data import Dataset, ShiftSpec, gen_blobs, gen_toy_images, load_csv, load_idx, shift
from ..dft import DftConfig
from ..errors import ValidationError
from ..model import TrainConfig

SCENARIOS = ("intra", "inter", "mft-vs-dft", "iterative")
TARGET_SEED_OFFSET = 1000

_BLOB_FRAME = [-5.0, 5.0]

PRESETS: dict[str, dict] = {
    # model trained on two well separated blobs; the target population is
    # translated so most negatives land on the positive side of the boundary
    "shifted-blobs": {
        "scenario": "inter",
        "source": {"kind": "blobs", "centers": [[-2.0, 0.0], [2.0, 0.0]], "sigmas": 0.7,
                   "counts": [2000, 2000], "bounds": _BLOB_FRAME},
        "target": {"kind": "blobs", "centers": [[-2.0, 0.0], [2.0, 0.0]], "sigmas": 0.7,
                   "counts": [2000, 2000], "bounds": _BLOB_FRAME},
        "shift": {"translation": [0.25, 0.0]},
        "dft": {"mode": "preimage"},
    },
    "mild-overlap-blobs": {
        "scenario": "intra",
        "source": {"kind": "blobs", "centers": [[-1.5, 0.0], [1.5, 0.0]], "sigmas": 1.0,
                   "counts": [2500, 2500], "bounds": _BLOB_FRAME},
        "dft": {"mode": "preimage"},
    },
    "separable-blobs": {
        "scenario": "intra",
        "source": {"kind": "blobs", "centers": [[-3.0, 0.0], [3.0, 0.0]], "sigmas": 0.4,
                   "counts": [500, 500], "bounds": _BLOB_FRAME},
        "dft": {"mode": "preimage"},
    },
    "toy-brightness": {
        "scenario": "inter",
        "source": {"kind": "toy", "image_kind": "brightness-blob", "count": 2000},
        "target": {"kind": "toy", "image_kind": "brightness-blob", "count": 2000},
        "shift": {"brightness": 0.2},
        "dft": {"mode": "preimage"},
    },
}


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    source: dict
    target: dict | None = None
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    attribute: str | None = None
    model_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    mft: TrainConfig = field(default_factory=TrainConfig)
    dft: DftConfig = field(default_factory=DftConfig)
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    rounds: int = 2
    dft_only: bool = False
    bins: int = 20
    positive: int = 1
    output_dir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not isinstance(self.source, dict) or "kind" not in self.source:
            raise ValidationError("config needs a source dataset spec with a 'kind'")
        if self.target is not None and "kind" not in self.target:
            raise ValidationError("target dataset spec needs a 'kind'")
        if int(self.rounds) < 1:
            raise ValidationError("rounds must be >= 1")
        if len(self.split) != 3:
            raise ValidationError("split needs three fractions")
        if self.model_path is not None and not Path(self.model_path).exists():
            raise ValidationError(f"model file {self.model_path} does not exist")
        for spec in (self.source, self.target):
            for key in ("path", "images", "labels"):
                if spec and key in spec and not Path(spec[key]).exists():
                    raise ValidationError(f"dataset file {spec[key]} does not exist")
        self.train.validate()
        self.mft.validate(allow_zero_lr=True)
        self.dft.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": int(self.seed),
            "source": copy.deepcopy(self.source),
            "target": copy.deepcopy(self.target),
            "shift": self.shift.to_dict(),
            "attribute": self.attribute,
            "model_path": self.model_path,
            "train": self.train.to_dict(),
            "mft": self.mft.to_dict(),
            "dft": self.dft.to_dict(),
            "split": [float(f) for f in self.split],
            "rounds": int(self.rounds),
            "dft_only": bool(self.dft_only),
            "bins": int(self.bins),
            "positive": int(self.positive),
            "output_dir": self.output_dir,
        }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key in ("train", "mft", "dft"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


_TOP_KEYS = set(ExperimentConfig.__dataclass_fields__) | {"preset"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config, layering ``raw`` over its preset (if any) and the defaults."""
    raw = dict(raw)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        raw = _merge(PRESETS[preset], raw)
    for key in ("scenario", "seed", "source"):
        if raw.get(key) is None:
            raise ValidationError(f"config is missing {key!r}")
    seed = int(raw["seed"])

    def seeded(block: dict | None) -> dict:
        block = dict(block or {})
        block.setdefault("seed", seed)
        return block

    cfg = ExperimentConfig(
        scenario=raw["scenario"],
        seed=seed,
        source=dict(raw["source"]),
        target=None if raw.get("target") is None else dict(raw["target"]),
        shift=ShiftSpec.from_dict(raw.get("shift")),
        attribute=raw.get("attribute"),
        model_path=raw.get("model_path"),
        train=TrainConfig.from_dict(seeded(raw.get("train"))),
        mft=TrainConfig.from_dict(seeded(raw.get("mft"))),
        dft=DftConfig.from_dict(seeded(raw.get("dft"))),
        split=tuple(float(f) for f in raw.get("split", (0.6, 0.2, 0.2))),
        rounds=int(raw.get("rounds", 2)),
        dft_only=bool(raw.get("dft_only", False)),
        bins=int(raw.get("bins", 20)),
        positive=int(raw.get("positive", 1)),
        output_dir=str(raw.get("output_dir", "runs")),
    )
    return cfg.validate()


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    return raw


def preset_config(name: str, seed: int, **overrides) -> ExperimentConfig:
    return config_from_dict({"preset": name, "seed": seed, **overrides})


def build_dataset(spec: dict, default_seed: int) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind")
    seed = int(spec.pop("seed", default_seed))
    if kind == "blobs":
        return gen_blobs(spec["centers"], spec["sigmas"], spec["counts"], seed,
                         bounds=spec.get("bounds"), attribute=spec.get("attribute", "class"))
    if kind == "toy":
        return gen_toy_images(spec["image_kind"], spec["count"], spec.get("params"),
                              spec.get("shift_knobs"), seed)
    if kind == "csv":
        return load_csv(spec["path"])
    if kind == "idx":
        return load_idx(spec["images"], spec["labels"], spec.get("attribute", "label"), spec.get("n_classes"))
    raise ValidationError(f"unknown dataset kind {kind!r}")


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Source data, and target data with the configured shift applied."""
    source = build_dataset(cfg.source, cfg.seed)
    if cfg.target is None:
        target = source
    else:
        target = build_dataset(cfg.target, cfg.seed + TARGET_SEED_OFFSET)
    if not cfg.shift.is_identity():
        target = shift(target, cfg.shift, cfg.seed)
    return source, target
