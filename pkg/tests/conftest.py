import numpy as np
import pytest

from dercfr.autodiff import Parameter, Tape


def numeric_grad(fn, param: Parameter, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``param``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = fn()
        flat[k] = orig - step
        down = fn()
        flat[k] = orig
        grad.reshape(-1)[k] = (up - down) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise error, relative to the gradient scale with an absolute floor."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradients(build, params, step=1e-5):
    """Worst relative error between tape and finite-difference gradients.

    ``build(tape)`` must return a 1x1 tensor; it is called with a fresh tape for
    the analytic pass and with ``None`` for every perturbed evaluation.
    """
    tape = Tape()
    grads = tape.gradients(build(tape), params)
    worst = 0.0
    for p, g in zip(params, grads):
        num = numeric_grad(lambda: build(None).item(), p, step)
        worst = max(worst, rel_error(g, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
