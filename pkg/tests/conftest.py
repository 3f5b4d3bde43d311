import numpy as np
import pytest

from motionrnn import Tape, Tensor, backward


def fd_gradient(f, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. array, mutated in place."""
    g = np.zeros_like(array)
    flat = array.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Elementwise |a-n| / max(|a|,|n|,floor); the floor keeps near-zero
    entries from blowing up the ratio."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads(make_scalar, tensors: list[Tensor], tol: float = 1e-6,
                eps: float = 1e-5) -> float:
    """Backprop make_scalar() and compare every tensor's grad against central
    differences. make_scalar is re-run tape-free for the FD probes."""
    with Tape() as tape:
        out = make_scalar()
        backward(out, tape)
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "no gradient reached a checked tensor"
        num = fd_gradient(lambda: float(make_scalar().data), t.data, eps=eps)
        worst = max(worst, max_rel_err(t.grad, num))
    assert worst < tol, f"max relative gradient error {worst:.3g} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
