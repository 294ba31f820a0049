import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lucgen.geodata import CityIndex, SynthConfig, synth_city

settings.register_profile("lucgen", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lucgen")


@pytest.fixture(scope="session")
def small_city():
    city = synth_city(SynthConfig(communities=64, seed=3))
    return city, CityIndex(city)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        details = ", ".join(f"{k}={v}" for k, v in item.user_properties)
        _CRITERIA[number] = (title, rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, details = _CRITERIA[number]
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}"
        terminalreporter.write_line(f"{line} [{details}]" if details else line)
