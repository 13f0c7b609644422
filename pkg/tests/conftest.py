import dataclasses

import pytest

from mmrec.datagen import WorldConfig
from mmrec.pipeline import ExperimentConfig, prepare
from mmrec.ranker import TrainConfig


def small_config(**world) -> ExperimentConfig:
    """A world small enough to train every arm in a few seconds."""
    wc = dict(n_users=150, n_items=600, n_impressions=12000)
    wc.update(world)
    return ExperimentConfig(world=WorldConfig(**wc), train=TrainConfig(epochs=1))


@pytest.fixture(scope="session")
def small_cfg():
    return small_config()


@pytest.fixture(scope="session")
def small_data(small_cfg):
    return prepare(small_cfg)


@pytest.fixture(scope="session")
def arms(small_cfg):
    return {a.name: a for a in small_cfg.arms}


def replace(obj, **kw):
    return dataclasses.replace(obj, **kw)


# acceptance criteria register one line each; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
