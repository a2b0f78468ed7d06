"""End-to-end experiment: data, three model kinds per seed, six scenarios, report.

Output layout under ``out``::

    data/                 phantoms + manifest.json
    checkpoints/<Kind>-seed<s>/best.ckpt, train_log.csv, train_config.json
    metrics/<scenario>__seed<s>.csv
    aggregates.json, ttests.json, verdicts.json
    figures/*.png
    summary.md
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .cs import CsConfig
from .evaluate import (
    MODEL_KINDS,
    REFERENCES,
    SCENARIOS,
    Scenario,
    evaluate,
    get_scenario,
    reference_rows,
    ttest_matrix,
)
from .kspace import apply_forward_model, zero_fill_recon
from .metrics import MetricsRow, aggregate, psnr, read_rows, save_json
from .phantoms import DEFAULT_COUNTS, DatasetManifest, load_sample, make_dataset
from .train import TrainConfig, load_model, reconstruct, train_model

logger = logging.getLogger(__name__)

SCENARIO_A = "A-random-R4"
SCENARIO_B = "B-fixed-R4"
BUDGET_SECONDS = 2 * 3600.0


class SuiteError(RuntimeError):
    pass


@dataclass
class SuiteConfig:
    out: str = "suite_out"
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    height: int = 64
    width: int = 64
    counts: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_COUNTS)))
    data_seed: int = 0
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    cs: dict = field(default_factory=dict)  # CsConfig overrides
    scenarios: List[str] = field(default_factory=lambda: list(SCENARIOS))
    showcase: List[str] = field(default_factory=list)  # test sample ids; empty = automatic
    threads: int = 1
    max_test: Optional[int] = None
    resume: bool = False  # reuse finished checkpoints under out/

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for s in self.scenarios:
            get_scenario(s)
        TrainConfig.from_dict({**self.train})
        CsConfig(**self.cs)
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown suite config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SuiteConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SuiteReport:
    out: Path
    aggregates: dict
    ttests: dict
    verdicts: dict
    figures: List[str]
    stage_seconds: Dict[str, float]
    summary_path: Path

    @property
    def wall_seconds(self) -> float:
        return float(sum(self.stage_seconds.values()))


def _stage(name: str, fn: Callable, times: Dict[str, float]):
    t0 = time.perf_counter()
    logger.info("stage %s: start", name)
    try:
        result = fn()
    except Exception as exc:
        raise SuiteError(f"stage '{name}' failed: {type(exc).__name__}: {exc}") from exc
    times[name] = time.perf_counter() - t0
    logger.info("stage %s: done in %.1fs", name, times[name])
    return result


def _pool_map(fn, items: Sequence, threads: int) -> list:
    """Order-preserving map, in-process when ``threads == 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(fn, items))


def _train_job(cfg_dict: dict) -> str:
    cfg = TrainConfig.from_dict(cfg_dict)
    log = train_model(cfg)
    return log.best_checkpoint


def _reference_job(args) -> List[MetricsRow]:
    manifest_path, scenario_name, cs_dict, max_test = args
    return reference_rows(DatasetManifest.load(manifest_path), get_scenario(scenario_name), CsConfig(**cs_dict), max_test)


def _eval_job(args) -> str:
    manifest_path, scenario_name, ckpts, refs, csv_path, max_test = args
    evaluate(ckpts, manifest_path, scenario_name, references=refs, out_csv=csv_path, max_samples=max_test)
    return csv_path


def checkpoint_dir(out: Path, kind: str, seed: int) -> Path:
    return out / "checkpoints" / f"{kind}-seed{seed}"


def metrics_csv(out: Path, scenario: str, seed: int) -> Path:
    return out / "metrics" / f"{scenario}__seed{seed}.csv"


# ---------------------------------------------------------------------------
# aggregation from persisted CSVs
# ---------------------------------------------------------------------------


def load_suite_rows(out: Path, scenario: str, seeds: Sequence[int]) -> Dict[int, List[MetricsRow]]:
    return {s: read_rows(metrics_csv(out, scenario, s)) for s in seeds}


def pooled_rows(per_seed: Dict[int, List[MetricsRow]]) -> List[MetricsRow]:
    """Model rows from every seed plus reference rows from the first seed only.

    References do not depend on the model seed, so repeating them would
    only duplicate identical rows.
    """
    seeds = sorted(per_seed)
    rows = [r for r in per_seed[seeds[0]] if r.model in REFERENCES]
    for s in seeds:
        rows += [r for r in per_seed[s] if r.model not in REFERENCES]
    return rows


def seed_averaged_rows(per_seed: Dict[int, List[MetricsRow]]) -> List[MetricsRow]:
    """Full-image rows with each metric averaged over seeds per (model, sample)."""
    acc: Dict[tuple, List[MetricsRow]] = {}
    for s in sorted(per_seed):
        for r in per_seed[s]:
            if r.region == "full":
                acc.setdefault((r.model, r.sample_id), []).append(r)
    out = []
    for (model, sid), rs in sorted(acc.items()):
        r0 = rs[0]
        out.append(MetricsRow(sid, r0.pattern, r0.R, r0.family, "full",
                              float(np.mean([r.nmse for r in rs])), float(np.mean([r.psnr for r in rs])),
                              float(np.mean([r.ssim for r in rs])), model, r0.scenario))
    return out


def build_tables(out: Path, scenarios: Sequence[str], seeds: Sequence[int]):
    aggregates, ttests = {}, {}
    for name in scenarios:
        per_seed = load_suite_rows(out, name, seeds)
        aggregates[name] = {
            "per_seed": {str(s): aggregate(rows) for s, rows in per_seed.items()},
            "pooled": aggregate(pooled_rows(per_seed)),
        }
        ttests[name] = {
            "per_seed": {str(s): ttest_matrix(rows) for s, rows in per_seed.items()},
            "seed_averaged": ttest_matrix(seed_averaged_rows(per_seed)),
        }
    return aggregates, ttests


def _mean_psnr(aggregates: dict, scenario: str, seed: int, model: str) -> float:
    return aggregates[scenario]["per_seed"][str(seed)][model]["full"]["psnr"]["mean"]


def directional_verdicts(aggregates: dict, ttests: dict, seeds: Sequence[int], wall_seconds: float) -> dict:
    """Pass/fail per clause of the Mask > Baseline > Fixed replication check."""
    seeds = list(seeds)
    need = math.ceil(2 * len(seeds) / 3)
    clauses = {}
    for label, sc in (("a", SCENARIO_A), ("b", SCENARIO_B)):
        if sc not in aggregates:
            continue
        per = {s: (_mean_psnr(aggregates, sc, s, "Mask"), _mean_psnr(aggregates, sc, s, "Fixed")) for s in seeds}
        clauses[f"({label}) {sc}: PSNR Mask > Fixed for every seed"] = {
            "pass": all(m > f for m, f in per.values()),
            "detail": {str(s): {"Mask": m, "Fixed": f} for s, (m, f) in per.items()},
        }
        per_b = {s: (_mean_psnr(aggregates, sc, s, "Mask"), _mean_psnr(aggregates, sc, s, "Baseline")) for s in seeds}
        wins = sum(m >= b for m, b in per_b.values())
        clauses[f"({label}) {sc}: PSNR Mask >= Baseline in >= {need} of {len(seeds)} seeds"] = {
            "pass": wins >= need,
            "detail": {"wins": wins, **{str(s): {"Mask": m, "Baseline": b} for s, (m, b) in per_b.items()}},
        }
    if SCENARIO_B in ttests:
        res = ttests[SCENARIO_B]["seed_averaged"].get("Mask vs Fixed", {}).get("psnr", {})
        p = res.get("p_value", float("nan"))
        t = res.get("t_statistic", float("nan"))
        clauses[f"(b) {SCENARIO_B}: paired t-test Mask vs Fixed PSNR p < 0.05 (Mask better)"] = {
            "pass": bool(p < 0.05 and t > 0),
            "detail": {"t": t, "p": p, "per_seed_p": {
                s: m.get("Mask vs Fixed", {}).get("psnr", {}).get("p_value") for s, m in ttests[SCENARIO_B]["per_seed"].items()
            }},
        }
    clauses["wall clock < 2 hours"] = {
        "pass": wall_seconds < BUDGET_SECONDS,
        "detail": {"seconds": wall_seconds, "cpu_count": os.cpu_count()},
    }
    return clauses


# ---------------------------------------------------------------------------
# figures and markdown
# ---------------------------------------------------------------------------


def _showcase_ids(manifest: DatasetManifest, requested: Sequence[str]) -> List[str]:
    if requested:
        return list(requested)
    ids = []
    for fam in ("A", "B"):
        entries = manifest.split("test", fam)
        with_box = [e for e in entries if e.boxes]
        pick = (with_box or entries)[:1]
        ids += [e.sample_id for e in pick]
    return ids


def render_figures(out: Path, manifest: DatasetManifest, scenarios: Sequence[str], seed: int, showcase: Sequence[str]) -> List[str]:
    from .plotting import comparison_panel, export_png, psnr_bar_chart
    from .cs import cs_reconstruct

    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    models = {k: load_model(checkpoint_dir(out, k, seed) / "best.ckpt") for k in MODEL_KINDS}
    cs_cfg = CsConfig(**json.loads((out / "suite_config.json").read_text()).get("cs", {}))
    paths = []
    for sid in showcase:
        sample = load_sample(manifest, sid)
        for name in scenarios:
            sc = get_scenario(name)
            if sc.family != sample.family:
                continue
            mask = sc.mask_for(manifest.width, sid)
            k_us = apply_forward_model(sample.image.astype(np.float64), mask)
            images = {"target": sample.image, "zero-fill": zero_fill_recon(k_us)}
            for k, lm in models.items():
                images[k] = reconstruct(lm, k_us, mask if lm.model.config.mask_conditioned else None)
            images["CS"] = cs_reconstruct(k_us, mask, cs_cfg)
            scores = {k: psnr(v, sample.image) for k, v in images.items() if k != "target"}
            p = comparison_panel(images, fig_dir / f"{name}__{sid}.png", sample.pathology_boxes, f"{name} / {sid}", scores)
            paths.append(str(p))
        paths.append(str(export_png(sample.image, fig_dir / f"target__{sid}.png", sample.pathology_boxes)))
    return paths


def _fmt(ms: dict, digits: int) -> str:
    return f"{ms['mean']:.{digits}f} ± {ms['std']:.{digits}f}"


def write_summary(path: Path, cfg: SuiteConfig, aggregates: dict, ttests: dict, verdicts: dict, stage_seconds: dict, figures: Sequence[str]) -> Path:
    lines = ["# Suite summary", ""]
    lines.append(f"Seeds: {cfg.seeds}; image size {cfg.height}x{cfg.width}; test samples per family: "
                 f"{cfg.max_test if cfg.max_test is not None else 'all'}; CPUs visible: {os.cpu_count()}; threads: {cfg.threads}.")
    lines.append("")
    lines.append("## Directional verdicts")
    lines.append("")
    lines.append("| clause | result |")
    lines.append("|---|---|")
    for clause, v in verdicts.items():
        lines.append(f"| {clause} | {'PASS' if v['pass'] else 'FAIL'} |")
    lines.append("")
    lines.append(f"Overall: {'PASS' if all(v['pass'] for v in verdicts.values()) else 'FAIL'}")
    lines.append("")
    lines.append("## Wall clock")
    lines.append("")
    for k, v in stage_seconds.items():
        lines.append(f"- {k}: {v:.1f} s")
    lines.append(f"- total: {sum(stage_seconds.values()):.1f} s")
    lines.append("")
    lines.append("## Full-image metrics (mean ± std; models pooled over seeds)")
    for name, agg in aggregates.items():
        lines.append("")
        lines.append(f"### {name}")
        lines.append("")
        lines.append("| reconstructor | NMSE | PSNR (dB) | SSIM | lesion PSNR (dB) |")
        lines.append("|---|---|---|---|---|")
        pooled = agg["pooled"]
        for model in list(REFERENCES) + list(MODEL_KINDS):
            if model not in pooled:
                continue
            full = pooled[model]["full"]
            path_ps = pooled[model].get("pathology", {}).get("psnr")
            lines.append(f"| {model} | {_fmt(full['nmse'], 4)} | {_fmt(full['psnr'], 2)} | {_fmt(full['ssim'], 4)} | "
                         f"{_fmt(path_ps, 2) if path_ps else 'n/a'} |")
        lines.append("")
        lines.append("Per-seed mean PSNR: " + "; ".join(
            f"seed {s}: " + ", ".join(f"{m} {a[m]['full']['psnr']['mean']:.2f}" for m in MODEL_KINDS if m in a)
            for s, a in agg["per_seed"].items()))
        tt = ttests[name]["seed_averaged"]
        for pair, res in tt.items():
            r = res.get("psnr", {})
            if "p_value" in r:
                lines.append(f"- {pair} (PSNR, seed-averaged): t = {r['t_statistic']:.3f}, p = {r['p_value']:.3g}, n = {r['n']}")
    if figures:
        lines.append("")
        lines.append("## Figures")
        lines.append("")
        for f in figures:
            lines.append(f"- {os.path.relpath(f, path.parent)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def run_suite(cfg: SuiteConfig) -> SuiteReport:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "suite_config.json").write_text(json.dumps(cfg.to_dict(), indent=1) + "\n")
    times: Dict[str, float] = {}
    data_root = out / "data"

    def gen():
        if cfg.resume and (data_root / "manifest.json").exists():
            return DatasetManifest.load(data_root)
        return make_dataset(data_root, cfg.counts, cfg.height, cfg.width, cfg.data_seed)

    manifest = _stage("gen-data", gen, times)
    manifest_path = str(data_root / "manifest.json")

    def train_all():
        jobs = []
        for seed in cfg.seeds:
            for kind in MODEL_KINDS:
                d = checkpoint_dir(out, kind, seed)
                if cfg.resume and (d / "best.ckpt").exists() and (d / "train_log.csv").exists():
                    continue
                tc = TrainConfig.from_dict({**cfg.train, "model_kind": kind, "seed": seed,
                                            "manifest": manifest_path, "out_dir": str(d)})
                jobs.append(tc.to_dict())
        _pool_map(_train_job, jobs, cfg.threads)

    _stage("train", train_all, times)

    def eval_all():
        refs = _pool_map(_reference_job, [(manifest_path, s, cfg.cs, cfg.max_test) for s in cfg.scenarios], cfg.threads)
        jobs = []
        for name, ref in zip(cfg.scenarios, refs):
            for seed in cfg.seeds:
                ckpts = {k: str(checkpoint_dir(out, k, seed) / "best.ckpt") for k in MODEL_KINDS}
                jobs.append((manifest_path, name, ckpts, ref, str(metrics_csv(out, name, seed)), cfg.max_test))
        _pool_map(_eval_job, jobs, cfg.threads)

    _stage("evaluate", eval_all, times)

    def tables():
        return build_tables(out, cfg.scenarios, cfg.seeds)

    aggregates, ttests = _stage("aggregate", tables, times)
    save_json(out / "aggregates.json", aggregates)
    save_json(out / "ttests.json", ttests)

    def figs():
        from .plotting import psnr_bar_chart

        paths = render_figures(out, manifest, cfg.scenarios, cfg.seeds[0], _showcase_ids(manifest, cfg.showcase))
        table = {s: {m: a["pooled"][m]["full"]["psnr"] for m in a["pooled"]} for s, a in aggregates.items()}
        paths.append(str(psnr_bar_chart(table, out / "figures" / "psnr_by_scenario.png")))
        return paths

    figures = _stage("figures", figs, times)
    verdicts = directional_verdicts(aggregates, ttests, cfg.seeds, sum(times.values()))
    save_json(out / "verdicts.json", verdicts)
    summary = write_summary(out / "summary.md", cfg, aggregates, ttests, verdicts, times, figures)
    return SuiteReport(out, aggregates, ttests, verdicts, figures, times, summary)
