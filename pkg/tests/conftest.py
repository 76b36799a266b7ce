import pytest
from hypothesis import HealthCheck, settings

from frhom.model import SpectralModel
from frhom.simulate import detector_grid

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

TAU = 0.44e-12

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def model():
    return SpectralModel.from_coherence_time(TAU, 0.4)


@pytest.fixture(scope="session")
def grid(model):
    return detector_grid(model)


@pytest.fixture
def report():
    """Record an acceptance verdict; lines are echoed in the terminal summary."""

    def add(number, title, passed, detail):
        line = f"ACCEPTANCE {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
