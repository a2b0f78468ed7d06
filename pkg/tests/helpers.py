"""Shared test utilities: finite-difference gradient checks."""

import numpy as np

from mriprime import autodiff as ad


def smooth_scalar(out: ad.Tensor, seed: int = 0) -> ad.Tensor:
    """Linear scalar functional of ``out`` routed through l1_loss.

    The constant target sits far below every product (inputs in the tests
    are O(1)), so ``|out*r - target|`` never changes sign near the
    evaluation point and the result is differentiable.
    """
    rng = np.random.default_rng(seed)
    r = ad.Tensor(rng.standard_normal(out.shape), dtype=out.dtype)
    prod = ad.mul(out, r)
    target = ad.Tensor(np.full(out.shape, -50.0), dtype=out.dtype)
    assert prod.data.min() > -50.0
    return ad.l1_loss(prod, target)


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))
