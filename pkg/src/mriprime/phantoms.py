"""Synthetic ground-truth images with pathology boxes, and dataset I/O.

Family ``A`` is smooth nested ellipses (the training anatomy); family ``B``
is sharp-edged rectangles and annuli (the shifted anatomy). Either may carry
one small high-contrast lesion with a bounding box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

FAMILIES = ("A", "B")
SPLITS = ("train", "val", "test")
MIN_BOX = 8
LESION_PREVALENCE = 0.5
_FAMILY_CODE = {"A": 0, "B": 1}


class DatasetError(Exception):
    pass


class SampleNotFound(DatasetError, KeyError):
    pass


class CorruptSample(DatasetError):
    pass


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box ``[x0, x1) x [y0, y1)``; x is the column index."""

    x0: int
    y0: int
    x1: int
    y1: int
    label: str = "lesion"

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def inside(self, h: int, w: int) -> bool:
        return 0 <= self.x0 and 0 <= self.y0 and self.x1 <= w and self.y1 <= h

    def crop(self, img: np.ndarray) -> np.ndarray:
        return img[self.y0:self.y1, self.x0:self.x1]

    def to_list(self) -> list:
        return [self.x0, self.y0, self.x1, self.y1, self.label]

    @classmethod
    def from_list(cls, v: Sequence) -> "BBox":
        return cls(int(v[0]), int(v[1]), int(v[2]), int(v[3]), str(v[4]) if len(v) > 4 else "lesion")


@dataclass
class PhantomSample:
    image: np.ndarray = field(repr=False)
    family: str
    pathology_boxes: List[BBox]
    sample_id: str = ""
    seed: int = 0

    def validate(self) -> None:
        h, w = self.image.shape
        if not np.isfinite(self.image).all():
            raise CorruptSample(f"{self.sample_id}: non-finite pixels")
        if self.image.min() < 0 or self.image.max() > 1:
            raise CorruptSample(f"{self.sample_id}: pixel values outside [0, 1]")
        for b in self.pathology_boxes:
            if not b.inside(h, w) or b.width < MIN_BOX or b.height < MIN_BOX:
                raise CorruptSample(f"{self.sample_id}: invalid box {b}")


def _grid(h: int, w: int):
    y = (np.arange(h) + 0.5) / h * 2 - 1
    x = (np.arange(w) + 0.5) / w * 2 - 1
    return np.meshgrid(y, x, indexing="ij")


def _ellipse_radius(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return np.sqrt((u / rx) ** 2 + (v / ry) ** 2)


def _family_a(rng, h, w) -> np.ndarray:
    yy, xx = _grid(h, w)
    n = int(rng.integers(4, 9))
    img = np.zeros((h, w))
    cy, cx = rng.uniform(-0.1, 0.1, 2)
    ry, rx = rng.uniform(0.65, 0.85), rng.uniform(0.55, 0.8)
    theta = rng.uniform(-0.4, 0.4)
    for i in range(n):
        # each ellipse nests inside the previous one
        soft = rng.uniform(0.04, 0.1)
        r = _ellipse_radius(yy, xx, cy, cx, ry, rx, theta)
        shape = 0.5 * (1.0 + np.tanh((1.0 - r) / (2.0 * soft)))
        gy, gx = rng.uniform(-0.3, 0.3, 2)
        ramp = 1.0 + gy * (yy - cy) + gx * (xx - cx)
        amp = rng.uniform(0.35, 0.6) if i == 0 else rng.uniform(-0.25, 0.3)
        img += amp * shape * ramp
        shrink = rng.uniform(0.45, 0.8)
        cy += rng.uniform(-0.3, 0.3) * ry * (1 - shrink)
        cx += rng.uniform(-0.3, 0.3) * rx * (1 - shrink)
        ry *= shrink
        rx *= shrink * rng.uniform(0.8, 1.2)
        theta += rng.uniform(-0.5, 0.5)
    return img


def _family_b(rng, h, w) -> np.ndarray:
    yy, xx = _grid(h, w)
    n = int(rng.integers(3, 7))
    img = np.zeros((h, w))
    for _ in range(n):
        amp = rng.uniform(0.2, 0.5)
        cy, cx = rng.uniform(-0.5, 0.5, 2)
        if rng.uniform() < 0.5:
            hy, hx = rng.uniform(0.12, 0.45, 2)
            region = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        else:
            outer = rng.uniform(0.2, 0.5)
            inner = outer * rng.uniform(0.4, 0.8)
            rr = np.hypot(yy - cy, xx - cx)
            region = (rr <= outer) & (rr >= inner)
        img += amp * region
    return img


def _place_lesion(rng, img: np.ndarray):
    h, w = img.shape
    radius = int(rng.integers(3, 8))
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    half = max(radius + 1, MIN_BOX // 2)
    ys, xs = np.nonzero(img > 0.15)
    ok = (ys >= half) & (ys < h - half) & (xs >= half) & (xs < w - half)
    if ok.any():
        j = int(rng.integers(ok.sum()))
        cy, cx = int(ys[ok][j]), int(xs[ok][j])
    else:
        cy, cx = int(rng.integers(half, h - half)), int(rng.integers(half, w - half))
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    blob = sign * 0.3 * np.exp(-d2 / (2 * (radius / 2.0) ** 2))
    blob[d2 > (radius + 0.5) ** 2] = 0.0
    box = BBox(cx - half, cy - half, cx + half, cy + half, "lesion")
    return blob, box, (cy, cx)


def _anatomy(family: str, h: int, w: int, seed: int):
    rng = np.random.default_rng([int(seed), _FAMILY_CODE[family], h, w])
    base = _family_a(rng, h, w) if family == "A" else _family_b(rng, h, w)
    base = np.clip(base, 0.0, None)
    peak = base.max()
    if peak > 0:
        base = base * (rng.uniform(0.75, 0.95) / peak)
    has_lesion = rng.uniform() < LESION_PREVALENCE
    lesion_rng = np.random.default_rng([int(seed), _FAMILY_CODE[family], h, w, 1])
    return base, has_lesion, lesion_rng


def gen_phantom(family: str, h: int, w: int, seed: int, lesion: Optional[bool] = None) -> PhantomSample:
    """Deterministic phantom for ``(family, h, w, seed)``.

    ``lesion`` forces the lesion on or off; by default it appears with
    probability 0.5. Forcing does not change the underlying anatomy.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if h < 32 or w < 32:
        raise ValueError(f"phantoms need H, W >= 32, got {h}x{w}")
    base, has_lesion, lesion_rng = _anatomy(family, h, w, seed)
    boxes: List[BBox] = []
    img = base
    if has_lesion if lesion is None else lesion:
        blob, box, _ = _place_lesion(lesion_rng, base)
        img = base + blob
        boxes.append(box)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    sample = PhantomSample(img, family, boxes, sample_id=f"{family}-{seed}", seed=int(seed))
    sample.validate()
    return sample


def lesion_center(family: str, h: int, w: int, seed: int):
    """(row, col) of the lesion peak that a forced-lesion phantom would carry."""
    base, _, lesion_rng = _anatomy(family, h, w, seed)
    return _place_lesion(lesion_rng, base)[2]


# ---------------------------------------------------------------------------
# dataset persistence
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    sample_id: str
    family: str
    file: str
    boxes: List[BBox]
    split: str
    seed: int

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "family": self.family,
            "file": self.file,
            "boxes": [b.to_list() for b in self.boxes],
            "split": self.split,
            "seed": self.seed,
        }


@dataclass
class DatasetManifest:
    root: Path
    height: int
    width: int
    entries: List[ManifestEntry]

    def __post_init__(self):
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate sample ids in manifest")
        for e in self.entries:
            if e.split not in SPLITS:
                raise DatasetError(f"{e.sample_id}: unknown split {e.split!r}")
        self._by_id: Dict[str, ManifestEntry] = {e.sample_id: e for e in self.entries}

    def split(self, name: str, family: Optional[str] = None) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name and (family is None or e.family == family)]

    def entry(self, sample_id: str) -> ManifestEntry:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise SampleNotFound(sample_id) from None

    def to_json(self) -> dict:
        return {
            "root": ".",
            "H": self.height,
            "W": self.width,
            "samples": [e.to_json() for e in self.entries],
        }

    def save(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        root = (path.parent / d.get("root", ".")).resolve()
        entries = [
            ManifestEntry(
                s["sample_id"], s["family"], s["file"], [BBox.from_list(b) for b in s.get("boxes", [])],
                s["split"], int(s.get("seed", 0)),
            )
            for s in d["samples"]
        ]
        return cls(root, int(d["H"]), int(d["W"]), entries)


def write_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_image(path, h: int, w: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) != h * w * 4:
        raise CorruptSample(f"{path}: expected {h * w * 4} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float32)


DEFAULT_COUNTS = {"train": {"A": 500}, "val": {"A": 100}, "test": {"A": 50, "B": 50}}


def make_dataset(root, counts: Optional[dict] = None, h: int = 64, w: int = 64, base_seed: int = 0) -> DatasetManifest:
    """Generate phantoms and write ``<root>/images/*.bin`` plus ``manifest.json``.

    Sample ``i`` (in split, then family order) uses seed ``base_seed + i``.
    """
    counts = DEFAULT_COUNTS if counts is None else counts
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    index = 0
    for split in SPLITS:
        for family in FAMILIES:
            for j in range(int(counts.get(split, {}).get(family, 0))):
                seed = base_seed + index
                index += 1
                sample = gen_phantom(family, h, w, seed)
                sid = f"{split}-{family}-{j:04d}"
                rel = f"images/{sid}.bin"
                write_image(root / rel, sample.image)
                entries.append(ManifestEntry(sid, family, rel, sample.pathology_boxes, split, seed))
    manifest = DatasetManifest(root.resolve(), h, w, entries)
    manifest.save()
    return manifest


def load_sample(manifest: DatasetManifest, sample_id: str) -> PhantomSample:
    e = manifest.entry(sample_id)
    img = read_image(manifest.root / e.file, manifest.height, manifest.width)
    sample = PhantomSample(img, e.family, list(e.boxes), sample_id=e.sample_id, seed=e.seed)
    sample.validate()
    return sample
