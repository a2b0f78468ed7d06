"""Compressed-sensing reconstruction with an isotropic total-variation prior.

Proximal gradient on ``0.5 * ||M o F x - k_us||^2 + lam * TV(x)`` over real
images. The TV prox is Chambolle's dual projection algorithm, warm-started
from the previous outer iteration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .kspace import fft2c, ifft2c, zero_fill_recon
from .masks import Mask, apply_mask

_TAU = 0.25


@dataclass(frozen=True)
class CsConfig:
    lam: float = 0.005
    outer_iters: int = 100
    prox_inner_iters: int = 20
    step_size: float = 1.0
    accelerate: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must lie in (0, 1]; the data term has Lipschitz constant 1")
        if self.outer_iters < 0 or self.prox_inner_iters < 1:
            raise ValueError("iteration counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def grad2d(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward differences with a zero last row/column (Neumann boundary)."""
    gy = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy[:-1] = x[1:] - x[:-1]
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    return gy, gx


def div2d(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad2d`."""
    d = np.zeros_like(py)
    d[0] += py[0]
    d[1:-1] += py[1:-1] - py[:-2]
    d[-1] -= py[-2]
    d[:, 0] += px[:, 0]
    d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    d[:, -1] -= px[:, -2]
    return d


def tv_norm(x: np.ndarray) -> float:
    gy, gx = grad2d(np.asarray(x, dtype=np.float64))
    return float(np.sqrt(gy * gy + gx * gx).sum())


def tv_denoise(y: np.ndarray, weight: float, inner_iters: int = 50, dual: Optional[tuple] = None, return_dual: bool = False):
    """Approximate ``argmin_x 0.5*||x - y||^2 + weight * TV(x)``.

    ``dual`` is an optional ``(py, px)`` warm start; with ``return_dual`` the
    final dual pair is returned too.
    """
    if weight < 0:
        raise ValueError("weight must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    if weight == 0:
        x = y.copy()
        return (x, (np.zeros_like(y), np.zeros_like(y))) if return_dual else x
    if dual is None:
        py, px = np.zeros_like(y), np.zeros_like(y)
    else:
        py, px = dual[0].copy(), dual[1].copy()
    for _ in range(inner_iters):
        gy, gx = grad2d(div2d(py, px) - y / weight)
        norm = 1.0 + _TAU * np.sqrt(gy * gy + gx * gx)
        py = (py + _TAU * gy) / norm
        px = (px + _TAU * gx) / norm
    x = y - weight * div2d(py, px)
    return (x, (py, px)) if return_dual else x


def cs_objective(x: np.ndarray, k_us: np.ndarray, mask: Mask, lam: float) -> float:
    r = apply_mask(fft2c(x), mask) - k_us
    return float(0.5 * np.sum(np.abs(r) ** 2) + lam * tv_norm(x))


def cs_reconstruct(k_us: np.ndarray, mask: Mask, config: CsConfig = CsConfig(), history: Optional[list] = None) -> np.ndarray:
    """TV-regularised reconstruction, started from the zero-filled image.

    When ``history`` is a list, the objective after every outer iteration is
    appended to it (the initial value first).
    """
    k_us = np.asarray(k_us)
    if k_us.shape[-1] != mask.width:
        raise ValueError(f"k-space width {k_us.shape[-1]} does not match mask width {mask.width}")
    x = zero_fill_recon(k_us)
    step = config.step_size
    weight = step * config.lam
    dual = None
    z_prev = x
    y = x
    t = 1.0
    if history is not None:
        history.append(cs_objective(x, k_us, mask, config.lam))
    for _ in range(config.outer_iters):
        base = y if config.accelerate else x
        grad = ifft2c(apply_mask(fft2c(base), mask) - k_us).real
        x_new, dual = tv_denoise(base - step * grad, weight, config.prox_inner_iters, dual, return_dual=True)
        if config.accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - z_prev)
            z_prev, t = x_new, t_new
        x = x_new
        if history is not None:
            history.append(cs_objective(x, k_us, mask, config.lam))
    return np.maximum(x, 0.0)
