import numpy as np
import pytest
from hypothesis import settings

from parkcast.ingest import SyntheticCityConfig, generate_synthetic_city
from parkcast.models.artifact import train_artifact
from parkcast.pipeline import dataset_from_city, prepare

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_city():
    return generate_synthetic_city(SyntheticCityConfig(seed=3, days=21))


@pytest.fixture(scope="session")
def small_prepared(small_city):
    return prepare(dataset_from_city(small_city))


@pytest.fixture(scope="session")
def small_artifacts(small_prepared):
    """Quickly trained networks for every target, keyed by target."""
    arts = {}
    for target in ("occupancy", "influx", "outflux"):
        tr, va, _ = small_prepared.sets(target, stride=10)
        arts[target] = train_artifact("ffnn", tr, va, small_prepared.schema,
                                      epochs=40, learning_rate=1e-3, seed=1)
    return arts


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
