from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thermotrack.background import BackgroundModel
from thermotrack.config import ceiling_layout, wall_layout
from thermotrack.core import ModelParams
from thermotrack.signature import SignatureModel

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params() -> ModelParams:
    return ModelParams()


@pytest.fixture(scope="session")
def wall():
    return wall_layout()


@pytest.fixture(scope="session")
def ceiling():
    return ceiling_layout()


@pytest.fixture(scope="session")
def wall_sig(wall, params):
    return SignatureModel(wall, params)


@pytest.fixture(scope="session")
def ceiling_sig(ceiling, params):
    return SignatureModel(ceiling, params)


def random_background(m: int = 64, seed: int = 0, scale: float = 0.1) -> BackgroundModel:
    """A background with a dense, well-conditioned covariance."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, scale, (m, m))
    cov = a @ a.T / m + scale**2 * np.eye(m)
    return BackgroundModel(22.0 + rng.normal(0.0, 0.5, m), cov)


@pytest.fixture()
def dense_bg() -> BackgroundModel:
    return random_background()


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
