import numpy as np
import pytest

from kljn_transient.config import RunConfig
from kljn_transient.noise import NoiseDatabase
from kljn_transient.vmg import ResistorQuad, solve_vmg
from kljn_transient.wireline import CableParams


@pytest.fixture(scope="session")
def quad():
    return ResistorQuad(r_ha=11e3, r_la=3e3, r_hb=9e3, r_lb=2e3)


@pytest.fixture(scope="session")
def temps(quad):
    return solve_vmg(quad, 1.0, 5e3)


@pytest.fixture(scope="session")
def cable():
    return CableParams.from_fly_time(50.0, 1e-5, 100)


@pytest.fixture(scope="session")
def small_config(tmp_path_factory):
    """Reference physics with a small database, for fast Monte Carlo tests."""
    base = tmp_path_factory.mktemp("small")
    return RunConfig(
        runs=40,
        repeats=3,
        record_length=2**18,
        records_per_role=2,
        database_dir=str(base / "db"),
        output_dir=str(base / "out"),
    )


@pytest.fixture(scope="session")
def small_db(small_config, temps):
    cable = small_config.cable()
    return NoiseDatabase.build(
        temps.role_rms(),
        sample_rate=cable.sample_rate,
        bandwidth=small_config.bandwidth,
        length=small_config.record_length,
        records_per_role=small_config.records_per_role,
        seed=small_config.noise_seed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
