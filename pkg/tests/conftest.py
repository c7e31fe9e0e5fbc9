import numpy as np
import pytest

from datafinetune import data
from datafinetune import model as mdl
from datafinetune.harness.config import build_datasets, preset_config


def small_model(d, hidden, n_classes=2, seed=0, activation="tanh", attribute="class"):
    return mdl.FeedForwardModel.initialize(d, n_classes, hidden, activation, seed, attribute)


def shifted_blobs(seed):
    """(frozen model, source test split, target train split, target test split)."""
    cfg = preset_config("shifted-blobs", seed)
    source, target = build_datasets(cfg)
    src_train, _, src_test = data.split(source, cfg.split, seed, "class")
    tgt_train, _, tgt_test = data.split(target, cfg.split, seed, "class")
    model = mdl.fit(src_train, "class", cfg.train).freeze()
    return model, src_test, tgt_train, tgt_test, cfg


@pytest.fixture(scope="session")
def shifted_seed1():
    return shifted_blobs(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
