import numpy as np
import pytest

from flowdistill import tensor as T
from flowdistill.tensor import Tensor


def numerical_jacobian(fn, x, eps=1e-6):
    """Central-difference Jacobian of ``fn: R^d -> R^d`` at the vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(len(x)):
        step = np.zeros_like(x)
        step[j] = eps
        cols.append((fn(x + step) - fn(x - step)) / (2 * eps))
    return np.stack(cols, axis=1)


def step_map(step, direction="forward"):
    """Single-event numpy view of a bijector."""
    def fn(v):
        with T.no_grad():
            out, _ = getattr(step, direction)(Tensor(v[None, :]))
        return out.data[0]
    return fn


def log_abs_det(matrix):
    return np.linalg.slogdet(matrix)[1]


def finite_difference_grads(loss_fn, params, eps=1e-5):
    """Central differences of a scalar ``loss_fn()`` w.r.t. every entry of ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + eps
            up = float(loss_fn().data)
            p.data[idx] = orig - eps
            down = float(loss_fn().data)
            p.data[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def perturb(model_or_step, rng, scale=0.3):
    """Move every parameter off its (often identity) initial value."""
    for p in model_or_step.parameters().values():
        p.data = p.data + scale * rng.standard_normal(p.data.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = {}


def record(number, title, passed, detail=""):
    """Register one acceptance verdict; printed again at the end of the session."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
