"""Training of the Fixed / Baseline / Mask k-space U-Nets and inference.

All three kinds minimise the mean L1 distance between predicted and fully
sampled k-space in the signed-log domain. They differ only in the masks
seen during training and in whether the mask is an input channel:

* ``Fixed``: one equispaced fixed-offset mask for every sample and epoch;
* ``Baseline``: equispaced mask with a fresh random offset per sample and
  epoch, k-space only;
* ``Mask``: same mask draws as Baseline, plus the mask as a third channel.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .kspace import (
    apply_forward_model,
    fft2c,
    ifft2c,
    inverse_log_transform,
    log_transform,
    pack_channels,
    unpack_channels,
)
from .masks import Mask, MaskSpec, Pattern, gen_mask, mask_to_channel
from .model import UnetConfig, UnetModel, build_unet
from .optim import RMSprop
from .phantoms import DatasetManifest, load_sample
from .seeding import derive_seed

logger = logging.getLogger(__name__)


class ModelKind(str, enum.Enum):
    FIXED = "Fixed"
    BASELINE = "Baseline"
    MASK = "Mask"

    @classmethod
    def parse(cls, v) -> "ModelKind":
        if isinstance(v, ModelKind):
            return v
        for k in cls:
            if k.value.lower() == str(v).lower():
                return k
        raise ValueError(f"unknown model kind {v!r}")

    @property
    def in_channels(self) -> int:
        return 3 if self is ModelKind.MASK else 2


class TrainingError(RuntimeError):
    pass


VAL_MASK_KEY = "validation-mask"


@dataclass
class TrainConfig:
    model_kind: ModelKind = ModelKind.MASK
    manifest: str = "data/manifest.json"
    out_dir: str = "checkpoints/mask"
    acceleration: int = 4
    center_fraction: float = 0.08
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.01
    lr_drop_epoch: Optional[int] = None  # default: 20% of epochs
    lr_drop_factor: float = 0.1
    lr_scaling: str = "fan_in"  # or "none"
    warmup_steps: int = 20  # linear lr ramp over the first optimizer steps
    kspace_scale: float = 1e-3  # k-space multiplier applied before the log transform
    alpha: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    depth: int = 3
    base_channels: int = 16
    sigma: float = 0.01  # training-input noise; validation and test are noise-free
    val_every: int = 1
    max_train: Optional[int] = None
    max_val: Optional[int] = None

    def __post_init__(self):
        self.model_kind = ModelKind.parse(self.model_kind)
        if self.lr_drop_epoch is None:
            self.lr_drop_epoch = max(1, int(round(0.2 * self.epochs)))
        if self.lr_scaling not in ("fan_in", "none"):
            raise ValueError(f"lr_scaling must be 'fan_in' or 'none', got {self.lr_scaling!r}")
        if not self.kspace_scale > 0:
            raise ValueError("kspace_scale must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.val_every < 1:
            raise ValueError("epochs, batch_size and val_every must be positive")

    @property
    def train_pattern(self) -> Pattern:
        if self.model_kind is ModelKind.FIXED:
            return Pattern.EQUISPACED_FIXED
        return Pattern.EQUISPACED_RANDOM_OFFSET

    def unet_config(self) -> UnetConfig:
        return UnetConfig(self.model_kind.in_channels, self.depth, self.base_channels)

    def lr_at(self, epoch: int) -> float:
        """Scheduled learning rate for a 0-based epoch index."""
        return self.lr * (self.lr_drop_factor if epoch >= self.lr_drop_epoch else 1.0)

    def step_lr(self, epoch: int, step: int) -> float:
        """Learning rate actually used at a global optimizer step.

        RMSprop starts from ``v = 0``, so its first updates are up to
        ``1 / sqrt(1 - alpha)`` times larger than the nominal rate; the
        linear warmup over ``warmup_steps`` offsets that start-up bias.
        """
        ramp = min(1.0, (step + 1) / self.warmup_steps) if self.warmup_steps else 1.0
        return self.lr_at(epoch) * ramp

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_kind"] = self.model_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    best_checkpoint: Optional[str] = None
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    masks_seen: Dict[int, List[Tuple[int, ...]]] = field(default_factory=dict, repr=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr), f"{r.seconds:.3f}"])

    @staticmethod
    def read_csv(path) -> List[EpochRecord]:
        with open(path, newline="") as fh:
            return [
                EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["lr"]), float(r["seconds"]))
                for r in csv.DictReader(fh)
            ]


# ---------------------------------------------------------------------------
# data assembly
# ---------------------------------------------------------------------------


def to_network_domain(k: np.ndarray, kspace_scale: float = 1.0) -> np.ndarray:
    """Signed-log transform of ``kspace_scale * k``, the network's I/O domain."""
    return log_transform(np.asarray(k) * kspace_scale)


def make_training_pair(
    image: np.ndarray,
    mask: Mask,
    sigma: float = 0.0,
    *,
    mask_conditioned: bool,
    noise_seed: int = 0,
    kspace_scale: float = 1.0,
):
    """Return ``(k_input, mask_channel_or_None, target)`` tensors of batch 1."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape[1] != mask.width:
        raise ValueError(f"image width {image.shape[1]} does not match mask width {mask.width}")
    target = pack_channels(to_network_domain(fft2c(image), kspace_scale))
    k_us = apply_forward_model(image, mask, sigma, noise_seed)
    k_in = pack_channels(to_network_domain(k_us, kspace_scale))
    mch = mask_to_channel(mask, image.shape[0]) if mask_conditioned else None
    return k_in, mch, target


def _batch(arrays: Sequence[np.ndarray]) -> ad.Tensor:
    return ad.Tensor(np.concatenate(arrays, axis=0))


def train_mask_for(config: TrainConfig, width: int, epoch: int, index: int) -> Mask:
    base = MaskSpec(width, config.acceleration, config.center_fraction, config.train_pattern, 0)
    if config.train_pattern is Pattern.EQUISPACED_FIXED:
        return gen_mask(base)
    return gen_mask(base.with_seed(derive_seed(config.seed, "train-mask", epoch, index)))


def validation_mask_for(width: int, sample_id: str, acceleration: int = 4, center_fraction: float = 0.08) -> Mask:
    """One frozen draw per validation sample, independent of model kind and seed."""
    spec = MaskSpec(width, acceleration, center_fraction, Pattern.EQUISPACED_RANDOM_OFFSET, derive_seed(VAL_MASK_KEY, sample_id))
    return gen_mask(spec)


def _loss_over(model: UnetModel, inputs, masks, targets, batch_size: int) -> float:
    total = 0.0
    count = 0
    with ad.no_grad():
        for s in range(0, len(inputs), batch_size):
            x = _batch(inputs[s:s + batch_size])
            m = _batch(masks[s:s + batch_size]) if masks is not None else None
            y = _batch(targets[s:s + batch_size])
            out = model(x, m)
            n = x.shape[0]
            total += float(np.abs(out.data.astype(np.float64) - y.data).mean()) * n
            count += n
    return total / count


def _save(model: UnetModel, opt: RMSprop, config: TrainConfig, path: Path, epoch: int, val_loss: float) -> None:
    save_checkpoint(
        path,
        model.state_dict(),
        config={"unet": model.config.to_dict(), "train": config.to_dict()},
        seed=config.seed,
        epoch=epoch,
        optimizer=opt.hyperparameters(),
        optimizer_state=opt.v,
        extra={"model_kind": config.model_kind.value, "val_loss": val_loss},
    )


def train_model(config: TrainConfig, *, record_masks: bool = False) -> TrainLog:
    """Mini-batch RMSprop training; keeps the checkpoint with the best validation loss."""
    manifest = DatasetManifest.load(config.manifest)
    train_entries = manifest.split("train", "A")
    val_entries = manifest.split("val")
    if config.max_train is not None:
        train_entries = train_entries[: config.max_train]
    if config.max_val is not None:
        val_entries = val_entries[: config.max_val]
    if not train_entries:
        raise TrainingError("training split is empty")
    h, w = manifest.height, manifest.width
    mask_cond = config.model_kind is ModelKind.MASK

    images = [load_sample(manifest, e.sample_id).image.astype(np.float64) for e in train_entries]
    scale = config.kspace_scale
    targets = [pack_channels(to_network_domain(fft2c(img), scale)).data for img in images]

    val_in, val_mask, val_tgt = [], [] if mask_cond else None, []
    for e in val_entries:
        img = load_sample(manifest, e.sample_id).image
        k_in, mch, tgt = make_training_pair(img, validation_mask_for(w, e.sample_id), 0.0, mask_conditioned=mask_cond,
                                            kspace_scale=scale)
        val_in.append(k_in.data)
        val_tgt.append(tgt.data)
        if mask_cond:
            val_mask.append(mch.data)

    model = build_unet(config.unet_config(), config.seed)
    scales = model.fan_in_lr_scales() if config.lr_scaling == "fan_in" else None
    opt = RMSprop(model.parameters(), lr=config.lr, alpha=config.alpha, eps=config.eps, lr_scale=scales)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train_config.json").write_text(json.dumps(config.to_dict(), indent=1) + "\n")
    log = TrainLog()
    best_path = out_dir / "best.ckpt"
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(images))
        losses = []
        if record_masks:
            log.masks_seen[epoch] = []
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            xs, ms = [], []
            for i in idx:
                mask = train_mask_for(config, w, epoch, int(i))
                if record_masks:
                    log.masks_seen[epoch].append(tuple(int(c) for c in mask.indices))
                k_us = apply_forward_model(images[i], mask, config.sigma, derive_seed(config.seed, "noise", epoch, int(i)))
                xs.append(pack_channels(to_network_domain(k_us, scale)).data)
                if mask_cond:
                    ms.append(mask_to_channel(mask, h).data)
            x = _batch(xs)
            m = _batch(ms) if mask_cond else None
            y = _batch([targets[i] for i in idx])
            opt.lr = config.step_lr(epoch, step)
            opt.zero_grad()
            try:
                loss = ad.l1_loss(model(x, m), y)
                ad.backward(loss)
                opt.step()
            except ad.NonFiniteError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, step {step}: {exc}") from exc
            losses.append(loss.item() * len(idx))
            step += 1
        train_loss = float(sum(losses) / len(order))
        val_loss = float("nan")
        if val_in and ((epoch + 1) % config.val_every == 0 or epoch == config.epochs - 1):
            val_loss = _loss_over(model, val_in, val_mask, val_tgt, max(config.batch_size, 16))
        elif not val_in:
            val_loss = train_loss
        rec = EpochRecord(epoch, train_loss, val_loss, config.lr_at(epoch), time.perf_counter() - t0)
        log.records.append(rec)
        logger.info("%s epoch %d: train %.4f val %.4f lr %g (%.1fs)", config.model_kind.value, epoch, train_loss, val_loss, rec.lr, rec.seconds)
        if np.isfinite(val_loss) and val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            _save(model, opt, config, best_path, epoch, val_loss)
            log.best_checkpoint = str(best_path)
    log.write_csv(out_dir / "train_log.csv")
    return log


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class LoadedModel:
    model: UnetModel
    kind: ModelKind
    header: dict

    @property
    def kspace_scale(self) -> float:
        return float(self.header.get("config", {}).get("train", {}).get("kspace_scale", 1.0))


def load_model(path) -> LoadedModel:
    header, params, _ = load_checkpoint(path)
    cfg = UnetConfig.from_dict(header["config"]["unet"])
    model = build_unet(cfg, seed=0)
    model.load_state_dict(params)
    kind = ModelKind.parse(header.get("extra", {}).get("model_kind", "Mask" if cfg.in_channels == 3 else "Baseline"))
    return LoadedModel(model, kind, header)


def predict_kspace(model: UnetModel, k_us: np.ndarray, mask: Optional[Mask] = None, kspace_scale: float = 1.0) -> np.ndarray:
    """Full k-space estimate for one undersampled grid.

    The network output is a residual in the log domain; it is mapped back as
    ``k_us + (inv(t + r) - inv(t)) / kspace_scale`` so that a zero residual
    returns the measured data bit for bit instead of a log/exp round trip.
    """
    if model.config.mask_conditioned:
        if mask is None:
            raise ValueError("mask-conditioned model needs the sampling mask")
        mch = mask_to_channel(mask, k_us.shape[0])
    else:
        mch = None
    k_t = to_network_domain(k_us, kspace_scale)
    with ad.no_grad():
        out = model(pack_channels(k_t), mch)
    residual = unpack_channels(out) - unpack_channels(pack_channels(k_t))
    base = k_t.astype(np.complex128)
    k_hat = k_us + (inverse_log_transform(base + residual) - inverse_log_transform(base)) / kspace_scale
    return k_hat.astype(np.result_type(k_us, np.complex64), copy=False)


def reconstruct(model, k_us: np.ndarray, mask: Optional[Mask] = None, kspace_scale: Optional[float] = None) -> np.ndarray:
    """Magnitude image from a model, a :class:`LoadedModel` or a checkpoint path.

    ``kspace_scale`` defaults to the value stored with a loaded checkpoint,
    or 1 for a bare model.
    """
    if not isinstance(model, (UnetModel, LoadedModel)):
        model = load_model(model)
    if isinstance(model, LoadedModel):
        if kspace_scale is None:
            kspace_scale = model.kspace_scale
        model = model.model
    return np.abs(ifft2c(predict_kspace(model, k_us, mask, 1.0 if kspace_scale is None else kspace_scale)))
