from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_xyxy(rng, n, lo=0.0, hi=10.0, min_size=0.05):
    """n well-formed boxes with both sides at least ``min_size``."""
    p = rng.uniform(lo, hi, size=(n, 2))
    wh = rng.uniform(min_size, (hi - lo) / 2, size=(n, 2))
    return np.concatenate([p, p + wh], axis=1)


_ACCEPTANCE_LINES: list[str] = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        _ACCEPTANCE_LINES.extend(v for k, v in report.user_properties if k == "acceptance")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
