"""Image export and comparison panels.

``export_png`` writes exact 8-bit pixels with Pillow so files can be decoded
and compared; the multi-panel figures go through matplotlib (Agg backend).
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from PIL import Image as PILImage

from .phantoms import BBox

RED = (255, 0, 0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Per-image min-max map onto 0..255; a constant image maps to zeros."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.rint((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def draw_box(rgb: np.ndarray, box: BBox, color=RED) -> None:
    """One-pixel rectangle outline along the box border, in place."""
    h, w = rgb.shape[:2]
    y0, y1 = max(box.y0, 0), min(box.y1, h) - 1
    x0, x1 = max(box.x0, 0), min(box.x1, w) - 1
    if y1 < y0 or x1 < x0:
        return
    rgb[y0, x0:x1 + 1] = color
    rgb[y1, x0:x1 + 1] = color
    rgb[y0:y1 + 1, x0] = color
    rgb[y0:y1 + 1, x1] = color


def export_png(image: np.ndarray, path, boxes: Optional[Iterable[BBox]] = None) -> Path:
    """Write ``image`` as an 8-bit PNG.

    Without boxes the file is single-channel grayscale. With boxes it is RGB,
    the gray image replicated into three channels with red box outlines.
    """
    gray = to_uint8(image)
    boxes = list(boxes or [])
    path = Path(path)
    if boxes:
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
        for b in boxes:
            draw_box(rgb, b)
        pil = PILImage.fromarray(rgb, mode="RGB")
    else:
        pil = PILImage.fromarray(gray, mode="L")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write PNG to {path}: {exc}") from exc
    return path


def read_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im).copy()


def comparison_panel(
    images: Dict[str, np.ndarray],
    path,
    boxes: Sequence[BBox] = (),
    title: str = "",
    scores: Optional[Dict[str, float]] = None,
) -> Path:
    """Row of images (target first) with optional PSNR captions and boxes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    names = list(images)
    fig, axes = plt.subplots(1, len(names), figsize=(2.2 * len(names), 2.6), squeeze=False)
    for ax, name in zip(axes[0], names):
        img = np.asarray(images[name])
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=max(float(np.max(images[names[0]])), 1e-12), interpolation="nearest")
        label = name
        if scores and name in scores:
            label += f"\n{scores[name]:.2f} dB"
        ax.set_title(label, fontsize=8)
        for b in boxes:
            ax.add_patch(Rectangle((b.x0 - 0.5, b.y0 - 0.5), b.width, b.height, fill=False, edgecolor="red", linewidth=0.8))
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def psnr_bar_chart(table: Dict[str, Dict[str, Dict[str, float]]], path, metric: str = "psnr") -> Path:
    """Grouped bars of mean metric (error bars = std) per scenario and model.

    ``table[scenario][model] = {"mean": .., "std": ..}``.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenarios = list(table)
    models = sorted({m for s in scenarios for m in table[s]}, key=_model_order)
    x = np.arange(len(scenarios))
    width = 0.8 / max(len(models), 1)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.4 * len(scenarios)), 3.2))
    for i, m in enumerate(models):
        means = [table[s].get(m, {}).get("mean", np.nan) for s in scenarios]
        stds = [table[s].get(m, {}).get("std", 0.0) for s in scenarios]
        ax.bar(x + (i - (len(models) - 1) / 2) * width, means, width, yerr=stds, label=m, capsize=2)
    ax.set_xticks(x)
    ax.set_xticklabels(scenarios, rotation=20, ha="right", fontsize=7)
    ax.set_ylabel(metric.upper())
    ax.legend(fontsize=7, ncol=len(models))
    finite = [table[s][m]["mean"] for s in scenarios for m in table[s] if np.isfinite(table[s][m]["mean"])]
    if finite:
        ax.set_ylim(min(finite) - 3.0, max(finite) + 3.0)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


_ORDER = ["zero-fill", "CS", "Fixed", "Baseline", "Mask"]


def _model_order(name: str):
    base = name.split("@")[0]
    return (_ORDER.index(base) if base in _ORDER else len(_ORDER), name)
