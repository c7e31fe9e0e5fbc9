"""Experiment scenarios: intra-dataset, inter-dataset, MFT vs DFT, and iterative MFT+DFT.

Each runner takes an :class:`ExperimentConfig` and returns a report dict that
is a pure function of the config, so reruns serialize to identical JSON.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .. import dft, metrics
from .. import model as mdl
from ..data import Dataset, split
from ..errors import DimensionError, ValidationError
from .config import ExperimentConfig, build_datasets

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
GRID_SIZE = 41


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _splits(ds: Dataset, cfg: ExperimentConfig, attribute: str):
    return split(ds, cfg.split, cfg.seed, attribute)


def _attribute(cfg: ExperimentConfig, source: Dataset) -> str:
    if cfg.model_path is not None:
        return mdl.load(cfg.model_path).attribute
    return cfg.attribute or source.schema.names[0]


def _obtain_model(cfg: ExperimentConfig, train_split: Dataset, attribute: str) -> mdl.FeedForwardModel:
    if cfg.model_path is not None:
        model = mdl.load(cfg.model_path)
    else:
        model = mdl.fit(train_split, attribute, cfg.train)
    if model.input_dim != train_split.d:
        raise DimensionError(f"model expects {model.input_dim} features, data has {train_split.d}")
    return model.freeze()


def evaluate(model: mdl.FeedForwardModel, ds: Dataset, positive: int = 1, bins: int = 20) -> dict:
    """Accuracy, confusion matrix and, for binary attributes, ROC and score histogram."""
    scores = mdl.forward(model, ds.X)
    labels = ds.labels[model.attribute]
    cm = metrics.confusion_from_predictions(metrics.predictions(scores), labels, model.n_classes)
    out = {"accuracy": metrics.accuracy_from_scores(scores, labels), "confusion": cm.to_dict(),
           "roc": None, "histogram": None}
    if model.n_classes == 2:
        out["confusion"]["tpr"] = cm.tpr(positive)
        out["confusion"]["tnr"] = cm.tnr(positive)
        present = np.unique(labels)
        if present.size == 2:
            out["roc"] = metrics.roc_from_scores(scores[:, positive], labels, positive).to_dict()
            out["histogram"] = metrics.histogram_from_scores(scores[:, positive], labels, positive, bins).to_dict()
    return out


def _scatter(model: mdl.FeedForwardModel, X: np.ndarray, Z: np.ndarray, labels: np.ndarray) -> dict | None:
    if X.shape[1] != 2:
        return None
    axis = np.linspace(0.0, 1.0, GRID_SIZE)
    gx, gy = np.meshgrid(axis, axis)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    return {
        "x": X.tolist(),
        "z": Z.tolist(),
        "labels": labels.tolist(),
        "grid_size": GRID_SIZE,
        "grid_prediction": metrics.predictions(mdl.forward(model, grid)).tolist(),
    }


def _expected_dft_steps(config: dft.DftConfig, m: int) -> int:
    bs = dft.effective_batch_size(config, m)
    return int(config.epochs) * math.ceil(m / bs) * int(config.iters_per_batch)


def _expected_train_steps(config: mdl.TrainConfig, m: int) -> int:
    return int(config.epochs) * math.ceil(m / int(config.batch_size))


def _dft_block(model, tgt_train, tgt_test, cfg, result: dft.DftResult, positive, bins) -> dict:
    p = result.perturbation
    Z_test = dft.transform(tgt_test.X, p)
    block = {
        "before": evaluate(model, tgt_test, positive, bins),
        "after": evaluate(model, tgt_test.with_features(Z_test), positive, bins),
        "train_split": {
            "before_accuracy": metrics.accuracy(model, tgt_train),
            "after_accuracy": metrics.accuracy(model, dft.apply(tgt_train, p)),
        },
        "distance": {
            "mean_abs_change": dft.mean_abs_change(tgt_test.X, Z_test),
            "mean_sq_distance": dft.distance(tgt_test.X, Z_test),
        },
        "dft": {
            "steps": result.steps,
            "expected_steps": _expected_dft_steps(cfg.dft, tgt_train.m),
            "loss_trace": [float(v) for v in result.trace],
            "perturbation": p.n.tolist(),
            "final_objective": dft.objective(model, tgt_train.X, tgt_train.labels[model.attribute], p,
                                             cfg.dft.distance_weight),
        },
    }
    if p.mode == "literal":
        # the model applied to the transform at N = 0, the other possible "before" reading
        zero = dft.Perturbation.zeros(p.d, "literal", p.clamp_eps)
        block["before_squashed"] = {"accuracy": metrics.accuracy(model, dft.apply(tgt_test, zero))}
    return block


def _header(cfg: ExperimentConfig, scenario: str) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "scenario": scenario,
        "transform_mode": cfg.dft.mode,
        "config": cfg.to_dict(),
    }


def _prepare(cfg: ExperimentConfig, use_target: bool):
    source, target = build_datasets(cfg)
    if not use_target:
        target = source
    attribute = _attribute(cfg, source)
    if attribute not in target.labels:
        raise ValidationError(f"target data has no labels for attribute {attribute!r}")
    src_train, _, src_test = _splits(source, cfg, attribute)
    model = _obtain_model(cfg, src_train, attribute)
    if model.input_dim != target.d:
        raise DimensionError(f"model expects {model.input_dim} features, target data has {target.d}")
    if target is source:
        tgt_train, tgt_test = src_train, src_test
    else:
        tgt_train, _, tgt_test = _splits(target, cfg, attribute)
    return model, src_test, tgt_train, tgt_test


def _model_block(model, sha_before: str, src_test: Dataset) -> dict:
    sha_after = model.sha256()
    return {
        "attribute": model.attribute,
        "n_classes": model.n_classes,
        "input_dim": model.input_dim,
        "sha256_before": sha_before,
        "sha256_after": sha_after,
        "unchanged": sha_before == sha_after,
        "source_test_accuracy": metrics.accuracy(model, src_test),
    }


def _data_block(tgt_train: Dataset, tgt_test: Dataset) -> dict:
    return {"d": tgt_train.d, "train_size": tgt_train.m, "test_size": tgt_test.m}


def _run_single(cfg: ExperimentConfig, scenario: str, use_target: bool) -> dict:
    model, src_test, tgt_train, tgt_test = _prepare(cfg, use_target)
    sha = model.sha256()
    result = dft.learn_perturbation(model, tgt_train, cfg.dft)
    report = _header(cfg, scenario)
    report.update(_dft_block(model, tgt_train, tgt_test, cfg, result, cfg.positive, cfg.bins))
    report["data"] = _data_block(tgt_train, tgt_test)
    report["scatter"] = _scatter(model, tgt_test.X, dft.transform(tgt_test.X, result.perturbation),
                                 tgt_test.labels[model.attribute])
    report["model"] = _model_block(model, sha, src_test)
    return report


def run_intra(cfg: ExperimentConfig) -> dict:
    """Model trained, perturbation learned and evaluation done on splits of the source data."""
    return _run_single(cfg, "intra", use_target=False)


def run_inter(cfg: ExperimentConfig) -> dict:
    """Model trained on the source data; perturbation learned on the (shifted) target data."""
    return _run_single(cfg, "inter", use_target=True)


def run_mft_vs_dft(cfg: ExperimentConfig) -> dict:
    model, src_test, tgt_train, tgt_test = _prepare(cfg, use_target=True)
    sha = model.sha256()
    mft_trace: list[float] = []
    tuned = mdl.fine_tune(model, tgt_train, cfg.mft, trace=mft_trace)
    result = dft.learn_perturbation(model, tgt_train, cfg.dft)

    report = _header(cfg, "mft-vs-dft")
    report.update(_dft_block(model, tgt_train, tgt_test, cfg, result, cfg.positive, cfg.bins))
    report["mft"] = {
        "evaluation": evaluate(tuned, tgt_test, cfg.positive, cfg.bins),
        "steps": len(mft_trace),
        "expected_steps": _expected_train_steps(cfg.mft, tgt_train.m),
        "loss_trace": mft_trace,
    }
    report["arms"] = {
        "frozen": report["before"]["accuracy"],
        "mft": report["mft"]["evaluation"]["accuracy"],
        "dft": report["after"]["accuracy"],
    }
    report["data"] = _data_block(tgt_train, tgt_test)
    report["scatter"] = _scatter(model, tgt_test.X, dft.transform(tgt_test.X, result.perturbation),
                                 tgt_test.labels[model.attribute])
    report["model"] = _model_block(model, sha, src_test)
    return report


def run_iterative(cfg: ExperimentConfig, rounds: int | None = None) -> dict:
    """Alternate model fine-tuning on the current data view and DFT against the current model.

    The perturbation is warm-started from the previous round. With
    ``dft_only`` the MFT half of every round is skipped.
    """
    rounds = int(cfg.rounds if rounds is None else rounds)
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    base, src_test, tgt_train, tgt_test = _prepare(cfg, use_target=True)
    sha = base.sha256()
    current = base
    p = None
    history = []
    result = None
    for r in range(rounds):
        entry = {"round": r + 1}
        if not cfg.dft_only:
            view = tgt_train if p is None else dft.apply(tgt_train, p)
            current = mdl.fine_tune(current, view, cfg.mft)
            entry["mft_accuracy"] = metrics.accuracy(
                current, tgt_test if p is None else dft.apply(tgt_test, p))
        result = dft.learn_perturbation(current, tgt_train, cfg.dft, init=p)
        p = result.perturbation
        entry["accuracy"] = metrics.accuracy(current, dft.apply(tgt_test, p))
        entry["dft_steps"] = result.steps
        history.append(entry)
        logger.info("round %d: accuracy %.4f", r + 1, entry["accuracy"])

    report = _header(cfg, "iterative")
    report.update(_dft_block(current, tgt_train, tgt_test, cfg, result, cfg.positive, cfg.bins))
    # "before" is always the untouched black box on raw target data
    report["before"] = evaluate(base, tgt_test, cfg.positive, cfg.bins)
    report["rounds"] = history
    report["per_round_accuracy"] = [h["accuracy"] for h in history]
    report["data"] = _data_block(tgt_train, tgt_test)
    report["scatter"] = _scatter(current, tgt_test.X, dft.transform(tgt_test.X, p),
                                 tgt_test.labels[current.attribute])
    report["model"] = _model_block(base, sha, src_test)
    return report


RUNNERS = {
    "intra": run_intra,
    "inter": run_inter,
    "mft-vs-dft": run_mft_vs_dft,
    "iterative": run_iterative,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    return RUNNERS[cfg.scenario](cfg)


def write_run(report: dict, run_dir) -> list[str]:
    """Write ``report.json`` plus CSV dumps of the ROC and histogram points."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(report_to_json(report))
    written = ["report.json"]
    if report["before"].get("roc") and report["after"].get("roc"):
        with open(run_dir / "roc.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "fpr", "tpr"])
            for stage in ("before", "after"):
                roc = report[stage]["roc"]
                for f, t in zip(roc["fpr"], roc["tpr"]):
                    w.writerow([stage, repr(f), repr(t)])
        written.append("roc.csv")
    if report["before"].get("histogram") and report["after"].get("histogram"):
        with open(run_dir / "histograms.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "bin_low", "bin_high", "negative", "positive"])
            for stage in ("before", "after"):
                h = report[stage]["histogram"]
                for lo, hi, n, p in zip(h["edges"][:-1], h["edges"][1:], h["negative"], h["positive"]):
                    w.writerow([stage, repr(lo), repr(hi), n, p])
        written.append("histograms.csv")
    return written
