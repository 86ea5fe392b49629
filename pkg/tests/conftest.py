import logging
import sys

import numpy as np
import pytest

from sdbinterp import synthetic
from sdbinterp.observations import ObservationSet
from sdbinterp.pipeline import GridSpec, PipelineConfig


@pytest.fixture
def small_obs():
    rng = np.random.default_rng(7)
    xy = rng.uniform(0, 10, size=(40, 2))
    return ObservationSet(xy, np.sin(xy[:, 0] / 3) + 0.1 * xy[:, 1])


@pytest.fixture(scope="session")
def porosity():
    field = synthetic.porosity_field(50, seed=0)
    return field, synthetic.sample_field(field, 100, seed=0)


@pytest.fixture
def quick_config():
    """Short training runs for tests that only check plumbing."""
    cfg = PipelineConfig()
    cfg.embedding.n_epochs = 100
    cfg.train.epochs = 20
    cfg.grid = GridSpec(0, 10, 0, 10, 8, 6)
    return cfg


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("sdbinterp").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.report_lines():
        terminalreporter.write_line(line)
