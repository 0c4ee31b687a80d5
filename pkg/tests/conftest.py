import numpy as np
import pytest

from evsnn import autodiff as ad


def numeric_gradient(make_loss, param, eps=1e-2):
    """Central finite differences of a scalar-valued graph builder w.r.t. one
    parameter tensor. The graph is rebuilt for every probe."""
    num = np.zeros_like(param.data, dtype=np.float64)
    it = np.nditer(param.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = float(param.data[i])
        param.data[i] = orig + eps
        lp = make_loss().item()
        param.data[i] = orig - eps
        lm = make_loss().item()
        param.data[i] = orig
        num[i] = (lp - lm) / (2 * eps)
    return num


def check_gradients(make_loss, params, eps=1e-2, rtol=1e-3, atol=1e-2):
    """Analytic vs numeric gradients for every parameter in `params`."""
    for p in params:
        p.grad = None
    loss = make_loss()
    ad.backward(loss)
    for p in params:
        assert p.grad is not None, "missing gradient"
        num = numeric_gradient(make_loss, p, eps)
        denom = np.maximum(np.abs(num), atol)
        rel = np.abs(p.grad - num) / denom
        assert rel.max() < max(rtol, 2e-3), (
            f"gradient mismatch: max rel err {rel.max():.2e}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
