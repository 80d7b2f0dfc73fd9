import os

import numpy as np
import pytest


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """IDX files for the bundled 5000-image MNIST subset (see hpqs.data)."""
    from hpqs import data

    env = os.environ.get(data.DATA_ENV)
    if env and data.has_idx(env):
        return env
    out = tmp_path_factory.mktemp("mnist")
    try:
        data.prepare_mnist_subset(out)
    except FileNotFoundError as exc:
        pytest.skip(str(exc))
    return str(out)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines after the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, (ok, detail) in sorted(results.items()):
        terminalreporter.write_line(f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
