import numpy as np
import pytest
from hypothesis import settings

from micsubset.scene import build_spectral_model, reference_scene, random_scene, transmission_costs

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")


def random_hpd(rng, M, floor=0.1):
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    return A @ A.conj().T / M + floor * np.eye(M)


def random_cvec(rng, M):
    return rng.standard_normal(M) + 1j * rng.standard_normal(M)


@pytest.fixture(scope="session")
def desk():
    sc = reference_scene()
    return sc, build_spectral_model(sc, 2 * np.pi * 1000.0), transmission_costs(sc)


@pytest.fixture(scope="session")
def small():
    sc = random_scene(6, 11)
    return sc, build_spectral_model(sc, 2 * np.pi * 700.0), transmission_costs(sc)


# Filled by the acceptance suite; echoed after the run so the verdicts land in the log.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
