"""Cartesian column-undersampling masks.

A mask keeps a contiguous block of ``round(cf * W)`` low-frequency columns
around ``W // 2`` and spreads the rest of the ``round(W / R)`` budget over the
remaining columns, either equispaced (fixed or random offset) or uniformly at
random.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor


class Pattern(str, enum.Enum):
    EQUISPACED_FIXED = "equispaced_fixed"
    EQUISPACED_RANDOM_OFFSET = "equispaced_random_offset"
    RANDOM_UNIFORM = "random"

    @classmethod
    def parse(cls, value) -> "Pattern":
        if isinstance(value, Pattern):
            return value
        aliases = {
            "fixed": cls.EQUISPACED_FIXED,
            "equispaced": cls.EQUISPACED_FIXED,
            "equispaced-fixed": cls.EQUISPACED_FIXED,
            "equispacedfixed": cls.EQUISPACED_FIXED,
            "varying": cls.EQUISPACED_RANDOM_OFFSET,
            "equispaced-varying": cls.EQUISPACED_RANDOM_OFFSET,
            "equispaced-random-offset": cls.EQUISPACED_RANDOM_OFFSET,
            "equispacedrandomoffset": cls.EQUISPACED_RANDOM_OFFSET,
            "random-uniform": cls.RANDOM_UNIFORM,
            "randomuniform": cls.RANDOM_UNIFORM,
        }
        key = str(value).strip().lower().replace("_", "-")
        for p in cls:
            if p.value.replace("_", "-") == key:
                return p
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown mask pattern {value!r}")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class MaskSpec:
    width: int
    acceleration: int
    center_fraction: float
    pattern: Pattern = Pattern.RANDOM_UNIFORM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern.parse(self.pattern))
        if self.acceleration < 2:
            raise ValueError(f"acceleration must be >= 2, got {self.acceleration}")
        if not 0 < self.center_fraction < 1:
            raise ValueError(f"center fraction must lie in (0, 1), got {self.center_fraction}")
        low = self.num_low
        if low < 1:
            raise ValueError(f"center block round({self.center_fraction}*{self.width}) is empty")
        if low > self.width // self.acceleration:
            raise ValueError(f"center block of {low} columns exceeds the budget floor(W/R) = {self.width // self.acceleration}")

    @property
    def num_low(self) -> int:
        return _round_half_up(self.center_fraction * self.width)

    @property
    def num_total(self) -> int:
        return _round_half_up(self.width / self.acceleration)

    @property
    def num_outer(self) -> int:
        return self.num_total - self.num_low

    def with_seed(self, seed: int) -> "MaskSpec":
        return MaskSpec(self.width, self.acceleration, self.center_fraction, self.pattern, int(seed))

    def to_dict(self) -> dict:
        return {"pattern": self.pattern.value, "R": self.acceleration, "cf": self.center_fraction, "seed": self.seed}


@dataclass(frozen=True)
class Mask:
    width: int
    sampled: np.ndarray = field(repr=False)
    spec: MaskSpec | None = None

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.sampled)

    @property
    def num_sampled(self) -> int:
        return int(self.sampled.sum())

    def to_json(self) -> dict:
        out = {"width": self.width, "sampled_indices": [int(i) for i in self.indices]}
        if self.spec is not None:
            out["spec"] = self.spec.to_dict()
        return out

    @classmethod
    def from_json(cls, d: dict, verify: bool = True) -> "Mask":
        width = int(d["width"])
        sampled = np.zeros(width, dtype=bool)
        sampled[np.asarray(d["sampled_indices"], dtype=int)] = True
        spec = None
        if "spec" in d:
            s = d["spec"]
            spec = MaskSpec(width, int(s["R"]), float(s["cf"]), s["pattern"], int(s["seed"]))
            if verify and not np.array_equal(gen_mask(spec).sampled, sampled):
                raise ValueError("stored sampled_indices do not match regeneration from spec")
        return cls(width, sampled, spec)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Mask":
        return cls.from_json(json.loads(Path(path).read_text()))


def center_block(width: int, num_low: int) -> np.ndarray:
    """Indices of the low-frequency block; even sizes extend one further left."""
    start = width // 2 - num_low // 2
    return np.arange(start, start + num_low)


def gen_mask(spec: MaskSpec) -> Mask:
    """Realise ``spec`` into a boolean column mask (deterministic in the seed)."""
    w = spec.width
    low = spec.num_low
    outer = spec.num_outer
    if outer <= 0:
        raise ValueError(f"no budget left for outer columns (total {spec.num_total}, centre {low})")
    sampled = np.zeros(w, dtype=bool)
    sampled[center_block(w, low)] = True
    candidates = np.flatnonzero(~sampled)
    n = candidates.size
    step = n / outer
    if step < 1:
        raise ValueError(f"stride {step:.3f} < 1: budget exceeds the available columns")

    if spec.pattern is Pattern.RANDOM_UNIFORM:
        rng = np.random.default_rng(spec.seed)
        chosen = rng.choice(n, size=outer, replace=False)
    else:
        if spec.pattern is Pattern.EQUISPACED_FIXED:
            offset = 0.0
        else:
            offset = np.random.default_rng(spec.seed).uniform(0.0, step)
        # fractional stride: exactly `outer` lines, spacing floor/ceil of n/outer
        chosen = np.floor(offset + np.arange(outer) * step).astype(int)
    sampled[candidates[chosen]] = True
    return Mask(w, sampled, spec)


def mask_to_channel(mask: Mask, height: int, dtype=np.float32) -> Tensor:
    """1 x 1 x H x W tensor, 1.0 in sampled columns, 0.0 elsewhere."""
    row = mask.sampled.astype(dtype)
    return Tensor(np.broadcast_to(row, (1, 1, height, mask.width)).copy())


def apply_mask(k: np.ndarray, mask: Mask) -> np.ndarray:
    k = np.asarray(k)
    if k.shape[-1] != mask.width:
        raise ValueError(f"grid width {k.shape[-1]} does not match mask width {mask.width}")
    return np.where(mask.sampled, k, 0).astype(k.dtype, copy=False)
