"""Paired/unpaired evaluation of a condition model.

``metrics.csv`` columns (fixed order, empty cell = not applicable):

    person, clothes, scenario      sample indices and the person's scenario
    ssim                           SSIM of post-processed vs. ground-truth warped clothes (paired only)
    l1_arm, ssim_arm               region errors over the arm band (paired only)
    l1_waist, ssim_waist           region errors over the waist band (paired only)
    sleeve_gap_ratio               uncovered fraction of the sleeve-gap band
    waist_period_ratio             texture period above the waist over the flat period
    waist_flagged                  1 when the waist band has no detectable period
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image

from .condition import ConditionGenerator
from .data import Dataset, Sample, make_splits
from .diagnostics import (median_or_none, region_error_report, render_warped_grid, squeeze_metrics,
                          ssim, to_uint8)
from .errors import ArgumentError
from .train import stack_samples

METRIC_COLUMNS = ("person", "clothes", "scenario", "ssim", "l1_arm", "ssim_arm", "l1_waist", "ssim_waist",
                  "sleeve_gap_ratio", "waist_period_ratio", "waist_flagged")
NUMERIC_COLUMNS = METRIC_COLUMNS[3:-1]

Predictor = Callable[[dict], dict]


def model_predictor(model: ConditionGenerator) -> Predictor:
    def predict(batch: dict) -> dict:
        with torch.no_grad():
            out = model(batch["clothes"], batch["clothes_mask"], batch["agnostic_seg"], batch["pose"])
        flows = [[f] for f in out.tvob_flows[-1]]
        if out.taco_flow is not None:
            flows = [fl + [t] for fl, t in zip(flows, out.taco_flow)]
        return {"warped_clothes": out.warped_clothes, "warped_mask": out.warped_mask,
                "clothes_hat": out.clothes_hat, "layout": out.layout, "flows": flows}
    return predict


def passthrough_predictor(batch: dict) -> dict:
    """Ground-truth warp, the upper bound of every paired metric."""
    zero = torch.zeros_like(batch["clothes"][:, :2])
    return {"warped_clothes": batch["gt_warped_clothes"], "warped_mask": batch["gt_clothes_region"],
            "clothes_hat": batch["gt_warped_clothes"], "layout": batch["segmentation"],
            "flows": [[z] for z in zero]}


def _pair_batch(samples: Sequence[Sample], pairs) -> dict:
    people = stack_samples([samples[p] for p, _ in pairs])
    clothes = stack_samples([samples[c] for _, c in pairs])
    for k in ("clothes", "clothes_mask"):
        people[k] = clothes[k]
    return people


def evaluate(predictor: Predictor, dataset: Dataset | Sequence[Sample], mode: str = "paired",
             indices: Sequence[int] | None = None, seed: int = 0, chunk: int = 16):
    """Returns (rows, outputs); ``outputs`` keeps the first few predictions for rendering."""
    samples = list(dataset.samples if isinstance(dataset, Dataset) else dataset)
    if indices is not None:
        samples = [samples[i] for i in indices]
    pairs = make_splits(len(samples), mode, seed)
    rows, kept = [], []
    for start in range(0, len(pairs), chunk):
        part = pairs[start: start + chunk]
        batch = _pair_batch(samples, part)
        pred = predictor(batch)
        for k, (p, c) in enumerate(part):
            person, garment = samples[p], samples[c]
            row = dict.fromkeys(METRIC_COLUMNS)
            row.update(person=p, clothes=c, scenario=person.scenario, waist_flagged=0)
            probe = Sample(**{**person.__dict__, "period": garment.period})
            sq = squeeze_metrics(pred["warped_mask"][k], pred["warped_clothes"][k], probe)
            row["sleeve_gap_ratio"] = sq.sleeve_gap_ratio
            row["waist_period_ratio"] = sq.waist_period_ratio
            row["waist_flagged"] = int(sq.waist_flagged)
            if mode == "paired":
                target = batch["gt_warped_clothes"][k]
                row["ssim"] = ssim(pred["clothes_hat"][k], target)
                for r in region_error_report(pred["clothes_hat"][k], target, person.segmentation,
                                             person.pose_map):
                    row[f"l1_{r.region}"] = r.l1
                    row[f"ssim_{r.region}"] = r.ssim
            rows.append(row)
            if len(kept) < 4:
                kept.append({"clothes": batch["clothes"][k], "target": batch["gt_warped_clothes"][k],
                             "clothes_hat": pred["clothes_hat"][k], "flows": pred["flows"][k]})
    return rows, kept


def summarize(rows: list[dict]) -> dict:
    out = {"count": len(rows)}
    for col in NUMERIC_COLUMNS:
        vals = [r[col] for r in rows if r[col] is not None]
        out[f"median_{col}"] = median_or_none(vals)
        out[f"mean_{col}"] = float(np.mean(vals)) if vals else None
    for scen in sorted({r["scenario"] for r in rows}):
        sub = [r for r in rows if r["scenario"] == scen]
        for col in ("ssim", "sleeve_gap_ratio", "waist_period_ratio"):
            out[f"{scen}_median_{col}"] = median_or_none([r[col] for r in sub])
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def write_renders(directory: Path, kept: list[dict]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, k in enumerate(kept):
        tiles = [to_uint8(k["clothes"], -1, 1), to_uint8(k["target"], -1, 1), to_uint8(k["clothes_hat"], -1, 1),
                 to_uint8(render_warped_grid(k["flows"]))]
        Image.fromarray(np.concatenate(tiles, 1)).save(directory / f"sample_{i:02d}.png")


def run_eval(predictor: Predictor, dataset: Dataset, mode: str, out: Path,
             indices: Sequence[int] | None = None, seed: int = 0) -> dict:
    if mode not in ("paired", "unpaired"):
        raise ArgumentError(f"mode must be 'paired' or 'unpaired', got {mode!r}")
    rows, kept = evaluate(predictor, dataset, mode, indices, seed)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", rows)
    summary = summarize(rows)
    summary["mode"] = mode
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    write_renders(out / "renders", kept)
    return summary
