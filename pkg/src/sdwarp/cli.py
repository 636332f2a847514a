"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad arguments, config or data), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np
from PIL import Image

from .config import RunConfig, load_config, resolve_out
from .data import SCENARIOS, ScenarioSpec, _read_sample, generate_pair, read_dataset, write_dataset
from .errors import ArgumentError, ConfigurationError, FormatError, NumericError
from .evaluate import model_predictor, run_eval
from .pipeline import probe_checkpoint, render_sample_grid, run_ablation
from .train import restore_condition, train_condition, train_image

USER_ERRORS = (ArgumentError, ConfigurationError, FormatError, FileNotFoundError, FileExistsError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ArgumentError(f"resolution must look like HEIGHTxWIDTH, got {text!r}") from None
    return h, w


def cmd_gen_data(args) -> int:
    out = resolve_out(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    res = parse_resolution(args.resolution)
    kinds = [s.strip() for s in args.scenario.split(",") if s.strip()]
    for k in kinds:
        if k not in SCENARIOS:
            raise ArgumentError(f"unknown scenario {k!r}; expected one of {SCENARIOS}")
    samples = [generate_pair(ScenarioSpec(kind=k, texture=args.texture), args.seed + i, res)
               for k in kinds for i in range(args.count)]
    write_dataset(samples, out)
    counts = {k: sum(s.scenario == k for s in samples) for k in kinds}
    print(f"wrote {len(samples)} samples at {res[0]}x{res[1]} to {out}: "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "iterations", None):
        cfg = cfg.with_(iterations=args.iterations)
    return cfg


def cmd_train_condition(args) -> int:
    cfg = _load_cfg(args)
    res = train_condition(cfg, out_dir=args.out, resume=args.resume)
    print(f"final checkpoint: {res.final_checkpoint}")
    return 0


def cmd_train_image(args) -> int:
    cfg = _load_cfg(args)
    res = train_image(cfg, out_dir=args.out, resume=args.resume)
    print(f"final checkpoint: {res.final_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    model, _, _, _ = restore_condition(args.checkpoint)
    ds = read_dataset(args.dataset)
    summary = run_eval(model_predictor(model), ds, args.mode, resolve_out(args.out), seed=args.seed)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    base = load_config(args.config) if args.config else RunConfig()
    if args.iterations:
        base = base.with_(iterations=args.iterations)
    rows = run_ablation(args.dataset, resolve_out(args.out), seeds=args.seeds, base=base,
                        include_a=args.include_a, image_iterations=args.image_iterations)
    cols = ("config", "seed", "sleeve_gap_ratio", "waist_period_ratio", "ssim", "conflict_fraction", "zdist")
    print("\t".join(cols))
    for r in rows:
        print("\t".join("-" if r[c] is None else (f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]))
                        for c in cols))
    return 0


def cmd_probe(args) -> int:
    ds = read_dataset(args.dataset)
    report = probe_checkpoint(args.checkpoint, ds, batch_seed=args.batch_seed, batch_size=args.batch_size)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report.to_dict(), indent=1)
    out.write_text(text)
    print(text)
    return 0


def cmd_render_grid(args) -> int:
    sample_dir = Path(args.sample)
    sample = _read_sample(sample_dir, sample_dir.name)
    img = render_sample_grid(args.checkpoint, sample, args.cell)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(out)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdwarp", description="Sequential-deformation try-on condition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--scenario", required=True, help="scenario name or comma list")
    g.add_argument("--count", type=int, default=8, help="samples per scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", default="96x64", help="HEIGHTxWIDTH, both divisible by 16")
    g.add_argument("--texture", default="checkerboard")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen_data)

    for name, fn in (("train-condition", cmd_train_condition), ("train-image", cmd_train_image)):
        t = sub.add_parser(name)
        t.add_argument("--config", required=True)
        t.add_argument("--resume", help="checkpoint to continue from")
        t.add_argument("--out", help="override the config's out_dir")
        t.add_argument("--iterations", type=int)
        t.set_defaults(fn=fn)

    e = sub.add_parser("eval")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--mode", choices=("paired", "unpaired"), default="paired")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate")
    a.add_argument("--dataset", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--config", help="base run config")
    a.add_argument("--iterations", type=int)
    a.add_argument("--include-a", action="store_true", help="also run the no-composition-mask config")
    a.add_argument("--image-iterations", type=int, default=0)
    a.set_defaults(fn=cmd_ablate)

    pr = sub.add_parser("probe")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--batch-seed", type=int, default=0)
    pr.add_argument("--batch-size", type=int, default=8)
    pr.set_defaults(fn=cmd_probe)

    r = sub.add_parser("render-grid")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--sample", required=True, help="sample directory inside a dataset")
    r.add_argument("--cell", type=int, default=8)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render_grid)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
