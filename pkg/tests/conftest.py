import numpy as np
import pytest
from hypothesis import settings

from sangria.fingerprint_data import load_uji_csv
from sangria.gbt import GbtConfig
from sangria.sae import SaeConfig
from sangria.synthetic import simulate_uji_csv

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

TINY_SAE = SaeConfig(epochs=3, seed=0)
TINY_GBT = GbtConfig(iterations=5, depth=3, seed=0)


@pytest.fixture(scope="session")
def uji_path(tmp_path_factory):
    """Small simulated campaign: 8 RPs, 6 samples each, phones 1-3."""
    path = tmp_path_factory.mktemp("data") / "uji.csv"
    simulate_uji_csv(path, n_rps=8, samples_per_rp=6, seed=3)
    return path


@pytest.fixture(scope="session")
def uji_db(uji_path):
    return load_uji_csv(uji_path)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":ab"))):
            terminalreporter.write_line(line)
