"""Residual k-space U-Net.

The network sees the (transformed) undersampled k-space as two channels,
optionally concatenated with the broadcast sampling mask as a third channel,
and predicts a correction that is added back onto its k-space input.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass(frozen=True)
class UnetConfig:
    in_channels: int = 2
    depth: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.in_channels not in (2, 3):
            raise ValueError(f"in_channels must be 2 or 3, got {self.in_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")

    @property
    def mask_conditioned(self) -> bool:
        return self.in_channels == 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UnetConfig":
        return cls(int(d["in_channels"]), int(d["depth"]), int(d["base_channels"]))


def _layer_shapes(cfg: UnetConfig) -> List[tuple]:
    """Ordered (name, weight_shape) for every convolution."""
    shapes = []
    b = cfg.base_channels
    cin = cfg.in_channels
    for i in range(cfg.depth):
        c = b * 2 ** i
        shapes.append((f"enc.{i}.conv1", (c, cin, 3, 3)))
        shapes.append((f"enc.{i}.conv2", (c, c, 3, 3)))
        cin = c
    c = b * 2 ** cfg.depth
    shapes.append(("bottleneck.conv1", (c, cin, 3, 3)))
    shapes.append(("bottleneck.conv2", (c, c, 3, 3)))
    for i in reversed(range(cfg.depth)):
        skip = b * 2 ** i
        shapes.append((f"dec.{i}.conv1", (skip, c + skip, 3, 3)))
        shapes.append((f"dec.{i}.conv2", (skip, skip, 3, 3)))
        c = skip
    mid = max(b // 2, 1)
    shapes.append(("head.conv1", (mid, b, 1, 1)))
    shapes.append(("head.conv2", (2, mid, 1, 1)))
    return shapes


class UnetModel:
    def __init__(self, config: UnetConfig, params: Dict[str, Parameter]):
        self.config = config
        self.params = params

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def fan_in_lr_scales(self) -> Dict[str, float]:
        """``sqrt(2 / fan_in)`` per parameter, the He standard deviation of its layer."""
        out = {}
        for name, p in self.params.items():
            layer = name.rsplit(".", 1)[0]
            _, cin, kh, kw = self.params[layer + ".weight"].shape
            out[name] = float(np.sqrt(2.0 / (cin * kh * kw)))
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if list(state) != list(self.params):
            raise ValueError("state dict parameter names do not match the model")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def _conv(self, x: Tensor, name: str) -> Tensor:
        return ad.conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"])

    def _block(self, x: Tensor, prefix: str) -> Tensor:
        x = ad.relu(self._conv(x, prefix + ".conv1"))
        return ad.relu(self._conv(x, prefix + ".conv2"))

    def forward(self, k_t: Tensor, mask_channel: Optional[Tensor] = None) -> Tensor:
        """Return ``k_t + net(k_t [, mask])`` with the same N x 2 x H x W shape."""
        cfg = self.config
        if k_t.data.ndim != 4 or k_t.shape[1] != 2:
            raise ValueError(f"k-space input must be N x 2 x H x W, got {k_t.shape}")
        n, _, h, w = k_t.shape
        div = 2 ** cfg.depth
        if h % div or w % div:
            raise ValueError(f"spatial size {h}x{w} not divisible by 2**depth = {div}")
        if cfg.mask_conditioned:
            if mask_channel is None:
                raise ValueError("mask-conditioned model needs a mask channel")
            if mask_channel.shape != (n, 1, h, w):
                raise ValueError(f"mask channel must be {(n, 1, h, w)}, got {mask_channel.shape}")
            x = ad.concat_channels(k_t, mask_channel)
        else:
            if mask_channel is not None:
                raise ValueError("2-channel model takes no mask channel")
            x = k_t

        skips = []
        for i in range(cfg.depth):
            x = self._block(x, f"enc.{i}")
            skips.append(x)
            x = ad.maxpool2(x)
        x = self._block(x, "bottleneck")
        for i in reversed(range(cfg.depth)):
            x = ad.upsample_bilinear2(x)
            x = ad.concat_channels(x, skips[i])
            x = self._block(x, f"dec.{i}")
        x = self._conv(x, "head.conv1")
        x = self._conv(x, "head.conv2")
        return ad.add(k_t, x)

    __call__ = forward


def build_unet(config: UnetConfig, seed: int, dtype=np.float32) -> UnetModel:
    """He-uniform weights from ``seed``, zero biases, zero final 1x1 conv."""
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}
    shapes = _layer_shapes(config)
    last = shapes[-1][0]
    for name, shape in shapes:
        fan_in = shape[1] * shape[2] * shape[3]
        if name == last:
            w = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=shape)
        params[name + ".weight"] = Parameter(w.astype(dtype), name + ".weight")
        params[name + ".bias"] = Parameter(np.zeros(shape[0], dtype=dtype), name + ".bias")
    return UnetModel(config, params)
