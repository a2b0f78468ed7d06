"""Distribution-shift evaluation of trained checkpoints against classical references.

A scenario fixes the test mask family (pattern, R, cf) and the anatomy
family. Every test sample gets one scenario mask, seeded from the scenario
name and the sample id, so all reconstructors see identical measurements.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .cs import CsConfig, cs_reconstruct
from .kspace import apply_forward_model, zero_fill_recon
from .masks import Mask, MaskSpec, Pattern, gen_mask
from .metrics import (
    MetricsRow,
    aggregate,
    full_metrics,
    paired_t_test,
    read_rows,
    region_metrics,
    write_rows,
)
from .phantoms import DatasetManifest, load_sample
from .seeding import derive_seed
from .train import LoadedModel, ModelKind, load_model, reconstruct

logger = logging.getLogger(__name__)

REFERENCES = ("zero-fill", "CS")
MODEL_KINDS = ("Fixed", "Baseline", "Mask")
TRAIN_ACCELERATION = 4
REGION_MODES = ("full", "pathology", "both")


class ScenarioError(ValueError):
    pass


def default_center_fraction(acceleration: int) -> float:
    """8% of columns at R=4 and 4% at R=8; other R scale as 0.32 / R."""
    return {4: 0.08, 8: 0.04}.get(int(acceleration), 0.32 / acceleration)


@dataclass(frozen=True)
class Scenario:
    name: str
    pattern: Pattern
    acceleration: int
    center_fraction: float
    family: str
    region_mode: str = "both"

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern.parse(self.pattern))
        if self.family not in ("A", "B"):
            raise ScenarioError(f"{self.name}: family must be A or B")
        if self.region_mode not in REGION_MODES:
            raise ScenarioError(f"{self.name}: region_mode must be one of {REGION_MODES}")
        key = (self.pattern, self.family)
        if key not in _SUPPORTED or self.acceleration not in (4, 8):
            raise ScenarioError(f"{self.name}: ({self.pattern.value}, R={self.acceleration}, family {self.family}) is not a supported scenario")

    def mask_for(self, width: int, sample_id: str) -> Mask:
        seed = derive_seed("scenario", self.name, sample_id)
        return gen_mask(MaskSpec(width, self.acceleration, self.center_fraction, self.pattern, seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pattern"] = self.pattern.value
        return d


_SUPPORTED = {
    (Pattern.EQUISPACED_RANDOM_OFFSET, "A"),
    (Pattern.RANDOM_UNIFORM, "A"),
    (Pattern.EQUISPACED_FIXED, "B"),
}


def _make(name, pattern, r, family):
    return Scenario(name, pattern, r, default_center_fraction(r), family)


SCENARIOS: Dict[str, Scenario] = {
    s.name: s
    for s in [
        _make("A-equispaced-R4", Pattern.EQUISPACED_RANDOM_OFFSET, 4, "A"),
        _make("A-equispaced-R8", Pattern.EQUISPACED_RANDOM_OFFSET, 8, "A"),
        _make("A-random-R4", Pattern.RANDOM_UNIFORM, 4, "A"),
        _make("A-random-R8", Pattern.RANDOM_UNIFORM, 8, "A"),
        _make("B-fixed-R4", Pattern.EQUISPACED_FIXED, 4, "B"),
        _make("B-fixed-R8", Pattern.EQUISPACED_FIXED, 8, "B"),
    ]
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def _as_loaded(ckpt: Union[str, Path, LoadedModel]) -> LoadedModel:
    return ckpt if isinstance(ckpt, LoadedModel) else load_model(ckpt)


def check_compatible(name: str, lm: LoadedModel) -> None:
    """Checkpoints must come from R=4 training and carry a consistent kind."""
    train_cfg = lm.header.get("config", {}).get("train", {})
    r = train_cfg.get("acceleration", TRAIN_ACCELERATION)
    if int(r) != TRAIN_ACCELERATION:
        raise ScenarioError(f"{name}: checkpoint trained at R={r}; evaluation expects R={TRAIN_ACCELERATION} models")
    if (lm.kind is ModelKind.MASK) != lm.model.config.mask_conditioned:
        raise ScenarioError(f"{name}: model kind {lm.kind.value} inconsistent with {lm.model.config.in_channels} input channels")


@dataclass
class EvalResult:
    scenario: Scenario
    rows: List[MetricsRow]
    aggregates: dict
    ttests: dict


def _rows_for(recon: np.ndarray, sample, scenario: Scenario, model: str) -> List[MetricsRow]:
    tags = dict(sample_id=sample.sample_id, pattern=scenario.pattern.value, R=scenario.acceleration,
                family=sample.family, model=model, scenario=scenario.name)
    out = []
    if scenario.region_mode in ("full", "both"):
        out.append(full_metrics(recon, sample.image, **tags))
    if scenario.region_mode in ("pathology", "both"):
        for box in sample.pathology_boxes:
            out.append(region_metrics(recon, sample.image, box, **tags))
    return out


def reference_rows(
    manifest: DatasetManifest,
    scenario: Scenario,
    cs_config: CsConfig = CsConfig(),
    max_samples: Optional[int] = None,
) -> List[MetricsRow]:
    """Zero-fill and CS rows for every test sample of the scenario family."""
    rows: List[MetricsRow] = []
    for sample, mask, k_us in _measurements(manifest, scenario, max_samples):
        rows += _rows_for(zero_fill_recon(k_us), sample, scenario, "zero-fill")
        rows += _rows_for(cs_reconstruct(k_us, mask, cs_config), sample, scenario, "CS")
    return rows


def _measurements(manifest: DatasetManifest, scenario: Scenario, max_samples: Optional[int]):
    entries = manifest.split("test", scenario.family)
    if max_samples is not None:
        entries = entries[:max_samples]
    if not entries:
        raise ScenarioError(f"{scenario.name}: no test samples of family {scenario.family}")
    for e in entries:
        sample = load_sample(manifest, e.sample_id)
        mask = scenario.mask_for(manifest.width, e.sample_id)
        k_us = apply_forward_model(sample.image.astype(np.float64), mask)
        yield sample, mask, k_us


def ttest_matrix(rows: Sequence[MetricsRow], pairs: Sequence[Tuple[str, str]] = (("Mask", "Baseline"), ("Mask", "Fixed"))) -> dict:
    """Paired t-tests on per-sample full-image metrics, keyed ``"A vs B"``."""
    per_model: Dict[str, Dict[str, MetricsRow]] = {}
    for r in rows:
        if r.region == "full":
            per_model.setdefault(r.model, {})[r.sample_id] = r
    out = {}
    for a, b in pairs:
        if a not in per_model or b not in per_model:
            continue
        ids = sorted(set(per_model[a]) & set(per_model[b]))
        entry = {}
        for metric in ("nmse", "psnr", "ssim"):
            va = [getattr(per_model[a][i], metric) for i in ids]
            vb = [getattr(per_model[b][i], metric) for i in ids]
            try:
                entry[metric] = paired_t_test(va, vb).to_dict()
            except ValueError as exc:
                entry[metric] = {"error": str(exc)}
        out[f"{a} vs {b}"] = entry
    return out


def evaluate(
    checkpoints: Mapping[str, Union[str, Path, LoadedModel]],
    manifest: Union[DatasetManifest, str, Path],
    scenario: Union[Scenario, str],
    *,
    cs_config: CsConfig = CsConfig(),
    references: Optional[List[MetricsRow]] = None,
    out_csv: Optional[Union[str, Path]] = None,
    max_samples: Optional[int] = None,
) -> EvalResult:
    """Reconstruct every test sample with each checkpoint and both references.

    ``checkpoints`` maps a display name (normally the model kind) to a
    checkpoint path or loaded model. Precomputed ``references`` rows (from
    :func:`reference_rows`) skip the zero-fill/CS work. When ``out_csv`` is
    given, aggregates and tests are recomputed from the written file.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    if not isinstance(scenario, Scenario):
        scenario = get_scenario(scenario)
    models = {}
    for name, ckpt in checkpoints.items():
        lm = _as_loaded(ckpt)
        check_compatible(name, lm)
        models[name] = lm
    model_rows: List[MetricsRow] = []
    for sample, mask, k_us in _measurements(manifest, scenario, max_samples):
        if references is None:
            model_rows += _rows_for(zero_fill_recon(k_us), sample, scenario, "zero-fill")
            model_rows += _rows_for(cs_reconstruct(k_us, mask, cs_config), sample, scenario, "CS")
        for name, lm in models.items():
            recon = reconstruct(lm, k_us, mask if lm.model.config.mask_conditioned else None)
            model_rows += _rows_for(recon, sample, scenario, name)
    rows = (list(references) if references is not None else []) + model_rows
    rows = sorted(rows, key=lambda r: (_model_rank(r.model), r.sample_id, r.region != "full", r.region))
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        write_rows(out_csv, rows)
        rows = read_rows(out_csv)
    return EvalResult(scenario, rows, aggregate(rows), ttest_matrix(rows))


def _model_rank(name: str):
    order = list(REFERENCES) + list(MODEL_KINDS)
    return (order.index(name) if name in order else len(order), name)
