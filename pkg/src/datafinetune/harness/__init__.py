"""Experiment orchestration, reports and plots."""
from .config import PRESETS, SCENARIOS, ExperimentConfig, config_from_dict, preset_config
from .experiments import (
    evaluate,
    report_to_json,
    run_experiment,
    run_inter,
    run_intra,
    run_iterative,
    run_mft_vs_dft,
    write_run,
)
from .plots import emit_plots

__all__ = [
    "PRESETS",
    "SCENARIOS",
    "ExperimentConfig",
    "config_from_dict",
    "preset_config",
    "evaluate",
    "report_to_json",
    "run_experiment",
    "run_inter",
    "run_intra",
    "run_iterative",
    "run_mft_vs_dft",
    "write_run",
    "emit_plots",
]
