import numpy as np
import pytest

from fleetwatch.dataset import UnitSeries
from fleetwatch.synthfleet import random_fleet_config


def make_series(values, start="2021-01-01T00:00:00", step_minutes=5, unit_id="u", fault_time=None, names=None):
    values = np.asarray(values, dtype=float)
    ts = np.datetime64(start, "s") + np.timedelta64(step_minutes * 60, "s") * np.arange(values.shape[0])
    names = names or tuple(f"s{k}" for k in range(values.shape[1]))
    return UnitSeries(unit_id, ts, values, names, fault_time=fault_time)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def series_factory():
    return make_series


@pytest.fixture(scope="session")
def coarse_fleet_config():
    """Small fleet at 6-hour sampling: fast enough for end-to-end unit tests."""
    return random_fleet_config(7, n_units=4, n_faulted=1, period_minutes=360)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the outcome line of an acceptance criterion; failures propagate as usual."""

    def record(number: int, ok: bool, detail: str) -> None:
        _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
