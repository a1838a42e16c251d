import numpy as np
import pytest

from odn.config import SessionConfig
from odn.dataset import make_open_split, synth_blobs
from odn.openworld import run_open_world


@pytest.fixture(scope="session")
def default_cfg():
    return SessionConfig()


@pytest.fixture(scope="session")
def blob_data(default_cfg):
    c = default_cfg
    return synth_blobs(c.classes, c.per_class, c.dim, c.spread, c.separation, c.data_seed)


@pytest.fixture(scope="session")
def blob_split(blob_data, default_cfg):
    return make_open_split(blob_data, default_cfg.n_known, default_cfg.train_frac, default_cfg.split_seed)


@pytest.fixture(scope="session")
def default_session(blob_split, default_cfg):
    return run_open_world(blob_split, default_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
