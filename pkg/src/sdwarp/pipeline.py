"""Multi-step workflows behind the CLI: ablation, conflict probe, grid renders."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_checkpoint
from .condition import ABLATION_CONFIGS
from .config import RunConfig, serialize_config
from .data import Dataset, Sample, read_dataset
from .diagnostics import ConflictReport, gradient_conflict_probe, median_or_none, render_warped_grid, ssim, to_uint8
from .errors import ArgumentError, ConfigurationError
from .evaluate import evaluate, model_predictor, run_eval, summarize
from .image_gen import ImageGenerator
from .train import (condition_inputs, restore_condition, stack_samples, train_condition, train_image)

log = logging.getLogger(__name__)

REQUIRED_SCENARIOS = ("long_sleeve", "tucked_in")
ABLATION_COLUMNS = ("config", "seed", "split_hash", "sleeve_gap_ratio", "waist_period_ratio", "ssim",
                    "conflict_fraction", "conflict_mean_cosine", "zdist", "image_ssim")
EVAL_FRACTION = 0.25


def stratified_split(dataset: Dataset, seed: int) -> tuple[list[int], list[int], str]:
    """Seeded per-scenario 75/25 train/eval split and its hash."""
    rng = np.random.default_rng([seed, 75])
    train, ev = [], []
    for scen in sorted(dataset.scenarios):
        idx = np.array([i for i, s in enumerate(dataset.samples) if s.scenario == scen])
        idx = idx[rng.permutation(len(idx))]
        k = max(1, int(round(len(idx) * EVAL_FRACTION)))
        ev.extend(int(i) for i in idx[:k])
        train.extend(int(i) for i in idx[k:])
    train.sort()
    ev.sort()
    digest = hashlib.sha256(json.dumps([train, ev]).encode()).hexdigest()[:16]
    return train, ev, digest


def probe_batch(dataset: Dataset, indices: Sequence[int] | None = None, batch_seed: int = 0,
                batch_size: int = 8) -> dict:
    pool = [i for i in (range(len(dataset)) if indices is None else indices)
            if dataset.samples[i].scenario == "long_sleeve"]
    if not pool:
        raise ArgumentError("the conflict probe needs long_sleeve samples")
    rng = np.random.default_rng([batch_seed, 1])
    pick = rng.choice(pool, size=min(batch_size, len(pool)), replace=False)
    return stack_samples([dataset.samples[int(i)] for i in pick])


def probe_checkpoint(checkpoint: str | Path, dataset: Dataset, indices=None, batch_seed: int = 0,
                     batch_size: int = 8) -> ConflictReport:
    model, disc, _, meta = restore_condition(checkpoint)
    batch = probe_batch(dataset, indices, batch_seed, batch_size)
    return gradient_conflict_probe(model, batch, disc, seed=batch_seed, step=int(meta["step"]))


def render_sample_grid(checkpoint: str | Path, sample: Sample, cell: int = 8) -> np.ndarray:
    """Row of clothes | TVOB warp | final warp | warped grid for one sample."""
    model, _, _, _ = restore_condition(checkpoint)
    batch = stack_samples([sample])
    with torch.no_grad():
        out = model(batch["clothes"], batch["clothes_mask"], batch["agnostic_seg"], batch["pose"])
    flows = [out.tvob_flows[-1][0]] + ([out.taco_flow[0]] if out.taco_flow is not None else [])
    tiles = [to_uint8(batch["clothes"][0], -1, 1), to_uint8(out.warped_clothes_tvob[0], -1, 1),
             to_uint8(out.warped_clothes[0], -1, 1), to_uint8(render_warped_grid(flows, cell))]
    return np.concatenate(tiles, 1)


def _reusable(path: Path, cfg: RunConfig) -> bool:
    if not path.is_file():
        return False
    try:
        _, meta = load_checkpoint(path)
    except Exception:
        return False
    return meta.get("config") == serialize_config(cfg)


def _log_records(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    return [json.loads(l) for l in path.read_text().splitlines() if l.strip()]


def image_ssim(gen: ImageGenerator, cond_model, dataset: Dataset, indices: Sequence[int]) -> float | None:
    samples = [dataset.samples[i] for i in indices]
    batch = stack_samples(samples)
    with torch.no_grad():
        layout, warped = condition_inputs(batch, None, cond_model)
        out = gen(batch["agnostic_image"], batch["pose"], layout, warped)
    return median_or_none([ssim(out.image[k], batch["person_image"][k]) for k in range(len(samples))])


def run_ablation(dataset: Dataset | str | Path, out: str | Path, seeds: int | Sequence[int] = 3,
                 base: RunConfig | None = None, configs: Sequence[str] = ("b", "c", "d"),
                 include_a: bool = False, image_iterations: int = 0,
                 probe_step: int | None = None) -> list[dict]:
    """Train every config per seed on a shared split, then evaluate and probe each.

    Finished trainings whose checkpoint carries the same config are reused,
    so an interrupted ablation picks up where it stopped.
    """
    ds = dataset if isinstance(dataset, Dataset) else read_dataset(dataset)
    for scen in REQUIRED_SCENARIOS:
        if scen not in ds.scenarios:
            raise ConfigurationError(f"ablation dataset has no {scen!r} samples")
    if include_a and image_iterations < 1:
        raise ConfigurationError("config a differs only in the image stage; pass image_iterations > 0")
    base = base or RunConfig()
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    configs = list(configs)
    if include_a and "a" not in configs:
        configs = ["a"] + configs
    for name in configs:
        if name not in ABLATION_CONFIGS:
            raise ConfigurationError(f"unknown ablation config {name!r}")
    probe_step = probe_step or max(1, base.iterations // 2)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        train_idx, eval_idx, split_hash = stratified_split(ds, seed)
        for name in configs:
            connection, nonroi = ABLATION_CONFIGS[name]
            cond_name = "b" if name == "a" else name
            run_dir = out / f"seed{seed}" / cond_name
            cfg = base.with_(connection=connection, nonroi_removal=nonroi, seed=seed,
                             ckpt_every=probe_step, out_dir=str(run_dir), dataset=str(ds.root or ""),
                             lambda_zdist=base.lambda_zdist if nonroi else None)
            final = run_dir / "checkpoints" / f"condition_{cfg.iterations:06d}.ckpt"
            mid = run_dir / "checkpoints" / f"condition_{probe_step:06d}.ckpt"
            if not (_reusable(final, cfg) and _reusable(mid, cfg)):
                log.info("training config %s seed %d", cond_name, seed)
                train_condition(cfg, dataset=ds, indices=train_idx, out_dir=run_dir)
            model, _, _, _ = restore_condition(final)
            summary = run_eval(model_predictor(model), ds, "paired", run_dir / "eval", indices=eval_idx)
            report = probe_checkpoint(mid, ds, eval_idx, batch_seed=seed)
            (run_dir / "conflict.json").write_text(json.dumps(report.to_dict(), indent=1))
            records = _log_records(run_dir / "condition_log.jsonl")
            row = dict.fromkeys(ABLATION_COLUMNS)
            row.update(config=name, seed=seed, split_hash=split_hash,
                       sleeve_gap_ratio=summary.get("long_sleeve_median_sleeve_gap_ratio"),
                       waist_period_ratio=summary.get("tucked_in_median_waist_period_ratio"),
                       ssim=summary["median_ssim"], conflict_fraction=report.gap_opposed_fraction,
                       conflict_mean_cosine=float(np.mean(report.cosines)),
                       zdist=records[-1].get("zdist") if (nonroi and records) else None)
            if image_iterations > 0:
                img_dir = out / f"seed{seed}" / f"{name}_image"
                icfg = cfg.with_(iterations=image_iterations, ckpt_every=image_iterations, out_dir=str(img_dir),
                                 condition_checkpoint=str(final), composition=name != "a")
                ifinal = img_dir / "checkpoints" / f"image_{image_iterations:06d}.ckpt"
                if not _reusable(ifinal, icfg):
                    train_image(icfg, dataset=ds, indices=train_idx, out_dir=img_dir)
                payload, _ = load_checkpoint(ifinal)
                gen = ImageGenerator(icfg.image_widths, composition=icfg.composition)
                gen.load_state_dict(payload["generator"])
                gen.eval()
                row["image_ssim"] = image_ssim(gen, model, ds, eval_idx)
            rows.append(row)
    write_ablation(out, rows)
    return rows


def aggregate(rows: list[dict]) -> dict:
    """Per-config medians over seeds."""
    agg = {}
    for name in dict.fromkeys(r["config"] for r in rows):
        sub = [r for r in rows if r["config"] == name]
        agg[name] = {col: median_or_none([r[col] for r in sub])
                     for col in ABLATION_COLUMNS[3:]}
    return agg


def write_ablation(out: Path, rows: list[dict]) -> None:
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else r[c] for c in ABLATION_COLUMNS])
    (out / "ablation.json").write_text(json.dumps({"rows": rows, "per_config": aggregate(rows)}, indent=1))
