"""RMSprop optimizer for :class:`~mriprime.autodiff.Parameter` lists."""

from __future__ import annotations

from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .autodiff import NonFiniteError, Parameter


class RMSprop:
    """Plain RMSprop: ``v = alpha*v + (1-alpha)*g**2; p -= lr*g/(sqrt(v)+eps)``.

    No momentum and no centering. ``lr`` may be reassigned between steps to
    implement a schedule. ``lr_scale`` optionally maps parameter names to a
    fixed multiplier on ``lr`` (per-parameter groups).
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 0.01,
        alpha: float = 0.99,
        eps: float = 1e-8,
        lr_scale: Optional[Mapping[str, float]] = None,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.params = list(params)
        self.lr = float(lr)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.lr_scale = {p.name: float((lr_scale or {}).get(p.name, 1.0)) for p in self.params}
        self.v: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [p.name for p in self.params if p.grad is None]
        if missing:
            raise RuntimeError(f"rmsprop step: no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
        for p in self.params:
            g = p.grad
            v = self.v[p.name]
            v *= self.alpha
            with np.errstate(over="ignore"):
                v += (1.0 - self.alpha) * np.square(g, dtype=np.float64).astype(v.dtype)
            if not np.isfinite(v).all():
                raise NonFiniteError(f"rmsprop: second-moment overflow in {p.name}")
            p.data -= (self.lr * self.lr_scale[p.name]) * g / (np.sqrt(v) + self.eps)

    def hyperparameters(self) -> dict:
        return {"kind": "rmsprop", "lr": self.lr, "alpha": self.alpha, "eps": self.eps}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for p in self.params:
            if state[p.name].shape != p.shape:
                raise ValueError(f"optimizer state for {p.name} has shape {state[p.name].shape}, expected {p.shape}")
            self.v[p.name] = state[p.name].astype(p.dtype, copy=True)
