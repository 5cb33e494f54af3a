import numpy as np
import pytest

from spillover.domain import ExperimentDataset


def make_dataset(z, y, m, x=None, y_pre=None):
    """Dataset with exposures given directly (no session table)."""
    n = len(z)
    x = np.full(n, 0.5) if x is None else np.asarray(x, dtype=float)
    p = 1 if x.ndim == 1 else x.shape[1]
    return ExperimentDataset(
        ids=tuple(f"u{i}" for i in range(n)),
        z=np.asarray(z),
        x=np.asarray(x, dtype=float),
        y=np.asarray(y, dtype=float),
        m=np.asarray(m),
        y_pre=None if y_pre is None else np.asarray(y_pre, dtype=float),
        feature_names=("x",) if p == 1 else tuple(f"x{j}" for j in range(p)),
    )


@pytest.fixture
def dataset_factory():
    return make_dataset


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
