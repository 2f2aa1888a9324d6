import numpy as np
import pytest

from gmface.core import GmModel


def random_model(rng, m, height=16, width=16, l_range=(2.0, 12.0), w_range=(-0.5, 0.5)):
    params = np.empty((m, 6))
    params[:, 0] = rng.uniform(*w_range, m)
    params[:, 1:3] = rng.uniform(0.0, 1.0, (m, 2))
    params[:, 3] = rng.uniform(*l_range, m)
    params[:, 4] = rng.uniform(-l_range[1] / 2, l_range[1] / 2, m)
    params[:, 5] = rng.uniform(*l_range, m)
    return GmModel(params, height, width)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# One line per acceptance criterion, printed after the run.
ACCEPTANCE = []


def record(criterion, ok, detail):
    ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
