"""Command line interface.

Exit codes: 0 on success, 1 for invalid input (bad flags, configs, files),
2 for failures while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import data, dft
from . import model as mdl
from .errors import DftError, ValidationError
from .harness import PRESETS, SCENARIOS, config_from_dict, emit_plots, evaluate, report_to_json, write_run
from .harness.config import TARGET_SEED_OFFSET, build_dataset, load_config_file
from .harness.experiments import run_experiment

logger = logging.getLogger("datafinetune")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from exc


def _hidden(text: str) -> tuple[int, ...]:
    if text.strip() == "":
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected comma separated integers, e.g. 32,32") from exc


def _load_data(args) -> data.Dataset:
    if args.data is not None:
        return data.load_csv(args.data)
    if args.idx is not None:
        images, labels = args.idx
        return data.load_idx(images, labels, args.attribute or "label")
    raise ValidationError("give --data FILE.csv or --idx IMAGES LABELS")


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset CSV")
    src.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="IDX image and label files")


def _emit(obj: dict, out: str | None) -> None:
    text = report_to_json(obj)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_data(args) -> int:
    if args.preset is not None:
        preset = PRESETS[args.preset]
        spec = preset.get(args.which) or preset["source"]
        shift_spec = data.ShiftSpec.from_dict(preset.get("shift")) if args.which == "target" else data.ShiftSpec()
    else:
        if args.spec is None:
            raise ValidationError("give --preset or --spec")
        spec, shift_spec = args.spec, data.ShiftSpec()
    if args.shift is not None:
        shift_spec = data.ShiftSpec.from_dict(args.shift)
    seed = args.seed + (TARGET_SEED_OFFSET if args.which == "target" else 0)
    ds = build_dataset(spec, seed)
    if not shift_spec.is_identity():
        ds = data.shift(ds, shift_spec, args.seed)
    if args.split:
        attr = ds.schema.names[0]
        stem = Path(args.out)
        for part in data.split(ds, args.split_fractions, args.seed, attr):
            path = stem.with_name(f"{stem.stem}-{part.split}{stem.suffix or '.csv'}")
            data.save_csv(part, path)
            print(path)
    else:
        data.save_csv(ds, args.out)
        print(args.out)
    return EXIT_OK


def cmd_train_model(args) -> int:
    ds = _load_data(args)
    attribute = args.attribute or ds.schema.names[0]
    config = mdl.TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                             seed=args.seed, hidden_dims=args.hidden, activation=args.activation)
    trace: list[float] = []
    model = mdl.fit(ds, attribute, config, trace=trace)
    mdl.save(model.freeze(), args.out)
    logger.info("final training loss %.6f", trace[-1] if trace else float("nan"))
    print(f"{args.out} sha256={model.sha256()}")
    return EXIT_OK


def cmd_learn_dft(args) -> int:
    model = mdl.load(args.model).freeze()
    ds = _load_data(args)
    config = dft.DftConfig(learning_rate=args.lr, batch_size=args.batch_size, iters_per_batch=args.iters,
                           epochs=args.epochs, distance_weight=args.lam, seed=args.seed, mode=args.mode,
                           clamp_eps=args.clamp_eps, shuffle=args.shuffle)
    result = dft.learn_perturbation(model, ds, config)
    dft.save_perturbation(result.perturbation, args.out)
    if args.trace:
        Path(args.trace).write_text("\n".join(repr(float(v)) for v in result.trace) + "\n")
    print(f"{args.out} steps={result.steps}")
    return EXIT_OK


def cmd_apply_dft(args) -> int:
    p = dft.load_perturbation(args.perturbation)
    ds = dft.apply(_load_data(args), p)
    data.save_csv(ds, args.out)
    print(args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = mdl.load(args.model)
    ds = _load_data(args)
    if args.perturbation:
        ds = dft.apply(ds, dft.load_perturbation(args.perturbation))
    _emit(evaluate(model, ds, args.positive, args.bins), args.out)
    return EXIT_OK


def _experiment_raw(args) -> dict:
    raw = load_config_file(args.config) if args.config else {}
    if args.preset is not None:
        raw["preset"] = args.preset
    raw["scenario"] = args.scenario
    raw["seed"] = args.seed
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    if args.model is not None:
        raw["model_path"] = args.model
    if args.rounds is not None:
        raw["rounds"] = args.rounds
    if args.dft_only:
        raw["dft_only"] = True
    dft_over = {k: v for k, v in (("mode", args.mode), ("distance_weight", args.lam)) if v is not None}
    if dft_over:
        raw["dft"] = {**raw.get("dft", {}), **dft_over}
    return raw


def _run_dir(output_dir: str, scenario: str, seed: int) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    base = Path(output_dir) / f"{scenario}-seed{seed}-{stamp}"
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    return path


def cmd_experiment(args) -> int:
    cfg = config_from_dict(_experiment_raw(args))
    report = run_experiment(cfg)
    run_dir = _run_dir(cfg.output_dir, cfg.scenario, cfg.seed)
    write_run(report, run_dir)
    if args.plots:
        emit_plots(report, run_dir)
    print(run_dir)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.report}: invalid JSON ({exc})") from exc
    out = args.output_dir or str(Path(args.report).parent)
    manifest = emit_plots(report, out)
    for name in manifest["files"]:
        print(Path(out) / name)
    for notice in manifest["notices"]:
        print(f"notice: {notice}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="datafinetune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset as CSV")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--which", choices=("source", "target"), default="source",
                   help="preset dataset to generate; target also applies the preset shift")
    p.add_argument("--spec", type=_json_arg, help='dataset spec JSON, e.g. {"kind": "blobs", ...}')
    p.add_argument("--shift", type=_json_arg, help='shift JSON, e.g. {"translation": [0.25, 0]}')
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--split", action="store_true", help="write train/val/test files instead of one")
    p.add_argument("--split-fractions", type=float, nargs=3, default=(0.6, 0.2, 0.2))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-model", help="train a feed-forward classifier and save it frozen")
    _add_data_args(p)
    p.add_argument("--attribute")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=mdl.TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=mdl.TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=int, default=mdl.TrainConfig.batch_size)
    p.add_argument("--hidden", type=_hidden, default=mdl.TrainConfig.hidden_dims, help="e.g. 32,32")
    p.add_argument("--activation", choices=mdl.ACTIVATIONS, default="relu")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("learn-dft", help="learn a universal perturbation against a frozen model")
    _add_data_args(p)
    p.add_argument("--attribute")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("literal", "preimage"), default=dft.DftConfig.mode)
    p.add_argument("--lam", type=float, default=dft.DftConfig.distance_weight, help="distance weight")
    p.add_argument("--lr", type=float, default=dft.DftConfig.learning_rate)
    p.add_argument("--batch-size", type=int, default=dft.DftConfig.batch_size)
    p.add_argument("--iters", type=int, default=dft.DftConfig.iters_per_batch, help="Adam steps per batch")
    p.add_argument("--epochs", type=int, default=dft.DftConfig.epochs)
    p.add_argument("--clamp-eps", type=float, default=dft.DftConfig.clamp_eps)
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--trace", help="write the loss trace, one value per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_dft)

    p = sub.add_parser("apply-dft", help="transform a dataset with a saved perturbation")
    _add_data_args(p)
    p.add_argument("--attribute")
    p.add_argument("--perturbation", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply_dft)

    p = sub.add_parser("evaluate", help="accuracy, confusion, ROC and histogram as JSON")
    _add_data_args(p)
    p.add_argument("--attribute")
    p.add_argument("--model", required=True)
    p.add_argument("--perturbation", help="apply this perturbation first")
    p.add_argument("--positive", type=int, default=1)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a full scenario and write a report directory")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--output-dir")
    p.add_argument("--model", help="use this saved model instead of training one")
    p.add_argument("--mode", choices=("literal", "preimage"))
    p.add_argument("--lam", type=float, help="distance weight")
    p.add_argument("--rounds", type=int, help="rounds for the iterative scenario")
    p.add_argument("--dft-only", action="store_true", help="iterative scenario without model fine-tuning")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="render SVG plots for a report.json")
    p.add_argument("report")
    p.add_argument("--output-dir", help="defaults to the report's directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DftError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
