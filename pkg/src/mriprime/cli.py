"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

log = logging.getLogger("mriprime")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="JSON config file for the subcommand")
    p.add_argument("--seed", type=int, default=d, help="master seed override")
    p.add_argument("--out", type=Path, default=d, help="output directory (or file for mask/cs-recon/export-png)")
    p.add_argument("--threads", type=int, default=d, help="worker process bound")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mriprime", description="Mask-conditioned k-space U-Net experiments on synthetic phantoms.")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the phantom dataset")
    _common(p, True)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int, help="test samples per family")

    p = sub.add_parser("train", help="train one model")
    _common(p, True)
    p.add_argument("--kind", choices=["Fixed", "Baseline", "Mask"])
    p.add_argument("--manifest", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-train", type=int)

    p = sub.add_parser("eval", help="evaluate checkpoints on distribution-shift scenarios")
    _common(p, True)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--ckpt", action="append", default=[], metavar="KIND=PATH", help="repeatable")
    p.add_argument("--scenario", action="append", default=[], help="scenario name or 'all' (repeatable)")
    p.add_argument("--max-test", type=int)

    p = sub.add_parser("suite", help="run data generation, training and evaluation end to end")
    _common(p, True)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-test", type=int)
    p.add_argument("--resume", action="store_true", default=None)

    p = sub.add_parser("mask", help="emit a column mask as JSON (and optional PNG preview)")
    _common(p, True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--r", type=int, required=True, help="acceleration factor")
    p.add_argument("--cf", type=float, required=True, help="centre fraction")
    p.add_argument("--pattern", default="random")
    p.add_argument("--preview", type=Path, help="PNG preview path")
    p.add_argument("--height", type=int, default=None, help="preview height (default: width)")

    p = sub.add_parser("cs-recon", help="TV compressed-sensing reconstruction of one image")
    _common(p, True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", type=Path, help="raw float32 .bin image (needs --height/--width)")
    src.add_argument("--sample", help="sample id from --manifest")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--cf", type=float)
    p.add_argument("--pattern", default="random")
    p.add_argument("--lam", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--png", type=Path, help="also export the reconstruction as PNG")

    p = sub.add_parser("export-png", help="write a .bin image as 8-bit PNG")
    _common(p, True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--box", action="append", default=[], metavar="X0,Y0,X1,Y1")
    return parser


def _load_config(args) -> dict:
    if getattr(args, "config", None) is None:
        return {}
    try:
        d = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config} is not valid JSON: {exc}")
    if not isinstance(d, dict):
        raise UsageError(f"config file {args.config} must hold a JSON object")
    return d


def _set(d: dict, key: str, value) -> None:
    if value is not None:
        d[key] = value


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .phantoms import DEFAULT_COUNTS, make_dataset

    cfg = _load_config(args)
    unknown = set(cfg) - {"height", "width", "counts", "base_seed", "out"}
    if unknown:
        raise UsageError(f"unknown gen-data config keys: {sorted(unknown)}")
    counts = json.loads(json.dumps(cfg.get("counts", DEFAULT_COUNTS)))
    if args.n_train is not None:
        counts.setdefault("train", {})["A"] = args.n_train
    if args.n_val is not None:
        counts.setdefault("val", {})["A"] = args.n_val
    if args.n_test is not None:
        counts["test"] = {"A": args.n_test, "B": args.n_test}
    out = args.out or Path(cfg.get("out", "data"))
    h = args.height or cfg.get("height", 64)
    w = args.width or cfg.get("width", 64)
    seed = args.seed if args.seed is not None else cfg.get("base_seed", 0)
    m = make_dataset(out, counts, h, w, seed)
    print(json.dumps({"manifest": str(Path(out) / "manifest.json"), "samples": len(m.entries)}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import TrainConfig, train_model

    cfg = _load_config(args)
    _set(cfg, "model_kind", args.kind)
    _set(cfg, "manifest", str(args.manifest) if args.manifest else None)
    _set(cfg, "out_dir", str(args.out) if args.out else None)
    _set(cfg, "seed", args.seed)
    _set(cfg, "epochs", args.epochs)
    _set(cfg, "batch_size", args.batch_size)
    _set(cfg, "lr", args.lr)
    _set(cfg, "max_train", args.max_train)
    try:
        tc = TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}")
    tlog = train_model(tc)
    print(json.dumps({"best_checkpoint": tlog.best_checkpoint, "best_epoch": tlog.best_epoch,
                      "best_val_loss": tlog.best_val_loss}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import SCENARIOS, evaluate, get_scenario
    from .metrics import save_json

    cfg = _load_config(args)
    manifest = args.manifest or cfg.get("manifest")
    if manifest is None:
        raise UsageError("eval needs --manifest")
    ckpts = dict(cfg.get("checkpoints", {}))
    for item in args.ckpt:
        if "=" not in item:
            raise UsageError(f"--ckpt expects KIND=PATH, got {item!r}")
        k, v = item.split("=", 1)
        ckpts[k] = v
    names = args.scenario or cfg.get("scenarios", ["all"])
    if "all" in names:
        names = list(SCENARIOS)
    try:
        scenarios = [get_scenario(n) for n in names]
    except ValueError as exc:
        raise UsageError(str(exc))
    out = args.out or Path(cfg.get("out", "eval_out"))
    aggregates, ttests = {}, {}
    for sc in scenarios:
        res = evaluate(ckpts, manifest, sc, out_csv=Path(out) / "metrics" / f"{sc.name}.csv",
                       max_samples=args.max_test if args.max_test is not None else cfg.get("max_test"))
        aggregates[sc.name] = res.aggregates
        ttests[sc.name] = res.ttests
    save_json(Path(out) / "aggregates.json", aggregates)
    save_json(Path(out) / "ttests.json", ttests)
    print(json.dumps({"out": str(out), "scenarios": [s.name for s in scenarios]}))
    return EXIT_OK


def cmd_suite(args) -> int:
    from .suite import SuiteConfig, run_suite

    cfg = _load_config(args)
    _set(cfg, "out", str(args.out) if args.out else None)
    _set(cfg, "threads", args.threads)
    _set(cfg, "seeds", args.seeds)
    _set(cfg, "max_test", args.max_test)
    _set(cfg, "resume", args.resume)
    if args.seed is not None:
        cfg["data_seed"] = args.seed
    if args.epochs is not None:
        cfg["train"] = {**cfg.get("train", {}), "epochs": args.epochs}
    try:
        sc = SuiteConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid suite config: {exc}")
    rep = run_suite(sc)
    overall = all(v["pass"] for v in rep.verdicts.values())
    print("=" * 60)
    for clause, v in rep.verdicts.items():
        print(f"{'PASS' if v['pass'] else 'FAIL'}  {clause}")
    print("=" * 60)
    print(f"overall: {'PASS' if overall else 'FAIL'}; summary at {rep.summary_path}; wall {rep.wall_seconds:.1f}s")
    return EXIT_OK


def cmd_mask(args) -> int:
    from .masks import MaskSpec, center_block, gen_mask

    try:
        spec = MaskSpec(args.width, args.r, args.cf, args.pattern, args.seed if args.seed is not None else 0)
    except ValueError as exc:
        raise UsageError(str(exc))
    mask = gen_mask(spec)
    doc = mask.to_json()
    doc["central_indices"] = [int(i) for i in center_block(spec.width, spec.num_low)]
    doc["num_sampled"] = mask.num_sampled
    doc["num_central"] = spec.num_low
    text = json.dumps(doc)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.preview is not None:
        from .plotting import export_png

        h = args.height or args.width
        export_png(np.broadcast_to(mask.sampled.astype(float), (h, args.width)), args.preview)
    return EXIT_OK


def cmd_cs_recon(args) -> int:
    from .cs import CsConfig, cs_reconstruct
    from .evaluate import default_center_fraction
    from .kspace import apply_forward_model
    from .masks import MaskSpec, gen_mask
    from .phantoms import DatasetManifest, load_sample, read_image, write_image

    cfg = _load_config(args)
    if args.sample is not None:
        if args.manifest is None:
            raise UsageError("--sample needs --manifest")
        image = load_sample(DatasetManifest.load(args.manifest), args.sample).image
    else:
        if args.height is None or args.width is None:
            raise UsageError("--image needs --height and --width")
        image = read_image(args.image, args.height, args.width)
    cf = args.cf if args.cf is not None else default_center_fraction(args.r)
    try:
        mask = gen_mask(MaskSpec(image.shape[1], args.r, cf, args.pattern, args.seed if args.seed is not None else 0))
        cs_cfg = dict(cfg)
        _set(cs_cfg, "lam", args.lam)
        _set(cs_cfg, "outer_iters", args.iters)
        cs = CsConfig(**cs_cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))
    k_us = apply_forward_model(image.astype(np.float64), mask)
    recon = cs_reconstruct(k_us, mask, cs)
    out = args.out or Path("cs_recon.bin")
    write_image(out, recon)
    if args.png is not None:
        from .plotting import export_png

        export_png(recon, args.png)
    print(json.dumps({"out": str(out), "sampled_indices": [int(i) for i in mask.indices]}))
    return EXIT_OK


def cmd_export_png(args) -> int:
    from .phantoms import BBox, read_image
    from .plotting import export_png

    img = read_image(args.image, args.height, args.width)
    boxes = []
    for b in args.box:
        try:
            boxes.append(BBox(*[int(v) for v in b.split(",")]))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"--box expects X0,Y0,X1,Y1 integers: {exc}")
    out = args.out or Path(args.image).with_suffix(".png")
    export_png(img, out, boxes)
    print(json.dumps({"out": str(out)}))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "suite": cmd_suite,
    "mask": cmd_mask,
    "cs-recon": cmd_cs_recon,
    "export-png": cmd_export_png,
}


def _limit_threads(n: Optional[int]) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1" if n > 1 else str(n))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError(parser.format_help())
        _limit_threads(args.threads)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
