"""Training loops for the condition generator and the image generator.

Batch ``k`` is drawn from ``np.random.default_rng([seed, k])``, so a resumed
run needs no saved RNG state to continue bitwise-identically.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .checkpoint import load_checkpoint, save_checkpoint
from .condition import ConditionGenerator, TopologyConfig
from .config import RunConfig, parse_config, resolve_out, serialize_config
from .data import Dataset, Sample, read_dataset
from .diagnostics import to_uint8
from .errors import ConfigurationError
from .image_gen import ImageDiscriminator, ImageGenerator
from .losses import (FeatureExtractor, LayoutDiscriminator, condition_objective, lsgan_d_loss,
                     lsgan_g_loss, make_report, masked_perceptual_loss)

log = logging.getLogger(__name__)

BETAS = (0.5, 0.999)


def stack_samples(samples: Sequence[Sample]) -> dict:
    """Batch dict used by the models and losses."""
    cat = lambda name: torch.stack([getattr(s, name) for s in samples])
    batch = {name: cat(name) for name in (
        "person_image", "clothes", "clothes_mask", "segmentation", "agnostic_seg", "agnostic_image",
        "gt_warped_clothes", "gt_clothes_region", "torso_mask", "nonroi_mask", "gap_band", "waist_band")}
    batch["pose"] = cat("pose_map")
    return batch


def index_batch(batch: dict, idx) -> dict:
    idx = torch.as_tensor(idx, dtype=torch.long)
    return {k: v[idx] for k, v in batch.items()}


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step])
    return rng.choice(n, size=batch_size, replace=n < batch_size)


def _topology_meta(t: TopologyConfig) -> dict:
    return {f.name: (list(v) if isinstance(v := getattr(t, f.name), tuple) else v) for f in fields(t)}


def topology_from_meta(meta: dict) -> TopologyConfig:
    d = dict(meta["topology"])
    d["widths"] = tuple(d["widths"])
    return TopologyConfig(**d)


def check_topology(expected: TopologyConfig, meta: dict) -> None:
    found = _topology_meta(topology_from_meta(meta))
    want = _topology_meta(expected)
    diff = [f"{k}: checkpoint={found[k]!r} config={want[k]!r}" for k in want if found.get(k) != want[k]]
    if diff:
        raise ConfigurationError("checkpoint topology does not match config: " + "; ".join(diff))


@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    records: list[dict]


class _Run:
    """Output directory bookkeeping shared by both trainers."""

    def __init__(self, cfg: RunConfig, kind: str, out_dir: str | Path | None):
        self.cfg = cfg
        self.kind = kind
        self.out = resolve_out(out_dir or cfg.out_dir)
        (self.out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.out / "renders").mkdir(exist_ok=True)
        (self.out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
        self.log_path = self.out / f"{kind}_log.jsonl"

    def truncate_log(self, step: int) -> list[dict]:
        """Drop records past ``step`` (left behind by an interrupted run)."""
        if not self.log_path.exists():
            return []
        kept = [json.loads(l) for l in self.log_path.read_text().splitlines() if l.strip()]
        kept = [r for r in kept if r["step"] <= step]
        self.log_path.write_text("".join(json.dumps(r) + "\n" for r in kept))
        return kept

    def append(self, rec: dict) -> None:
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")

    def checkpoint_path(self, step: int) -> Path:
        return self.out / "checkpoints" / f"{self.kind}_{step:06d}.ckpt"


def _load_split(cfg: RunConfig, dataset: Dataset | None, indices):
    ds = dataset if dataset is not None else read_dataset(cfg.dataset)
    if ds.resolution != cfg.resolution:
        raise ConfigurationError(f"dataset resolution {ds.resolution} does not match config {cfg.resolution}")
    samples = ds.samples if indices is None else [ds.samples[i] for i in indices]
    if not samples:
        raise ConfigurationError("training split is empty")
    return stack_samples(samples)


def build_condition(topology: TopologyConfig, seed: int):
    torch.manual_seed(seed)
    model = ConditionGenerator(topology)
    disc = LayoutDiscriminator(topology.num_labels)
    return model, disc


def restore_condition(path: str | Path):
    """Generator and discriminator from a condition checkpoint (plus payload and meta)."""
    payload, meta = load_checkpoint(path)
    if meta.get("kind") != "condition":
        raise ConfigurationError(f"{path} is not a condition checkpoint")
    topology = topology_from_meta(meta)
    model = ConditionGenerator(topology)
    model.load_state_dict(payload["generator"])
    disc = LayoutDiscriminator(topology.num_labels)
    disc.load_state_dict(payload["discriminator"])
    model.eval()
    return model, disc, payload, meta


def _render_condition(path: Path, model, batch) -> None:
    with torch.no_grad():
        out = model(batch["clothes"][:4], batch["clothes_mask"][:4], batch["agnostic_seg"][:4], batch["pose"][:4])
    rows = []
    for i in range(out.warped_clothes.shape[0]):
        tiles = [batch["clothes"][i], out.warped_clothes_tvob[i], out.warped_clothes[i],
                 out.clothes_hat[i], batch["gt_warped_clothes"][i]]
        rows.append(np.concatenate([to_uint8(t, -1, 1) for t in tiles], 1))
    Image.fromarray(np.concatenate(rows, 0)).save(path)


def train_condition(cfg: RunConfig, dataset: Dataset | None = None, indices=None,
                    out_dir: str | Path | None = None, resume: str | Path | None = None,
                    stop_at: int | None = None, render: bool = True) -> TrainResult:
    """Alternating generator/discriminator training of the condition model.

    ``stop_at`` ends the loop early (as if interrupted) without changing the
    schedule, which the resume tests rely on.
    """
    topology, weights = cfg.topology, cfg.weights
    data = _load_split(cfg, dataset, indices)
    n = data["clothes"].shape[0]
    run = _Run(cfg, "condition", out_dir)
    model, disc = build_condition(topology, cfg.seed)
    extractor = FeatureExtractor()
    opt_g = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=BETAS)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=BETAS)
    start = 0
    records = []
    if resume is not None:
        payload, meta = load_checkpoint(resume)
        if meta.get("kind") != "condition":
            raise ConfigurationError(f"{resume} is not a condition checkpoint")
        check_topology(topology, meta)
        model.load_state_dict(payload["generator"])
        disc.load_state_dict(payload["discriminator"])
        opt_g.load_state_dict(payload["opt_g"])
        opt_d.load_state_dict(payload["opt_d"])
        start = int(meta["step"])
        records = run.truncate_log(start)
    else:
        run.truncate_log(0)

    def save(step):
        payload = {"generator": model.state_dict(), "discriminator": disc.state_dict(),
                   "opt_g": opt_g.state_dict(), "opt_d": opt_d.state_dict()}
        meta = {"kind": "condition", "step": step, "topology": _topology_meta(topology),
                "config": serialize_config(cfg)}
        return save_checkpoint(run.checkpoint_path(step), payload, meta)

    last = run.checkpoint_path(start) if resume is not None else None
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    model.train()
    for step in range(start + 1, end + 1):
        batch = index_batch(data, batch_indices(cfg.seed, step, n, cfg.batch_size))
        out = model(batch["clothes"], batch["clothes_mask"], batch["agnostic_seg"], batch["pose"])
        total, terms, d_term = condition_objective(out, batch, topology, weights, extractor, disc)
        opt_g.zero_grad(set_to_none=True)
        total.backward()
        opt_g.step()
        opt_d.zero_grad(set_to_none=True)
        d_term.backward()
        opt_d.step()
        if step == 1 or step % cfg.log_every == 0 or step == end:
            rec = make_report(terms, total, d_term).as_record(step)
            records.append(rec)
            run.append(rec)
            log.info("condition step %d total %.4f", step, rec["total"])
        if step % cfg.ckpt_every == 0 or step == cfg.iterations:
            last = save(step)
            if render:
                _render_condition(run.out / "renders" / f"condition_{step:06d}.png", model, batch)
    if last is None or (stop_at is not None and end % cfg.ckpt_every):
        last = save(end)
    return TrainResult(run.out, last, records)


# ---------------------------------------------------------------------------
# image stage


def condition_inputs(batch: dict, cfg: RunConfig, condition_model: ConditionGenerator | None):
    """(layout labels, warped clothes) fed to the image generator."""
    if condition_model is None:
        return batch["segmentation"], batch["gt_warped_clothes"]
    with torch.no_grad():
        out = condition_model(batch["clothes"], batch["clothes_mask"], batch["agnostic_seg"], batch["pose"])
    return out.layout, out.clothes_hat


def train_image(cfg: RunConfig, dataset: Dataset | None = None, indices=None,
                out_dir: str | Path | None = None, resume: str | Path | None = None,
                stop_at: int | None = None, render: bool = True) -> TrainResult:
    """L1 + perceptual + LSGAN training of the try-on image generator."""
    if cfg.teacher_forced and cfg.condition_checkpoint:
        raise ConfigurationError("set either teacher_forced or condition_checkpoint, not both")
    if not cfg.teacher_forced and not cfg.condition_checkpoint:
        raise ConfigurationError("train-image needs a condition source: condition_checkpoint or teacher_forced = on")
    cond_model = None
    if cfg.condition_checkpoint:
        cond_model, _, _, _ = restore_condition(resolve_out(cfg.condition_checkpoint))
        cond_model.requires_grad_(False)
    data = _load_split(cfg, dataset, indices)
    n = data["clothes"].shape[0]
    run = _Run(cfg, "image", out_dir)
    torch.manual_seed(cfg.seed)
    gen = ImageGenerator(cfg.image_widths, composition=cfg.composition)
    disc = ImageDiscriminator()
    extractor = FeatureExtractor()
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=BETAS)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=BETAS)
    start, records = 0, []
    if resume is not None:
        payload, meta = load_checkpoint(resume)
        if meta.get("kind") != "image":
            raise ConfigurationError(f"{resume} is not an image checkpoint")
        gen.load_state_dict(payload["generator"])
        disc.load_state_dict(payload["discriminator"])
        opt_g.load_state_dict(payload["opt_g"])
        opt_d.load_state_dict(payload["opt_d"])
        start = int(meta["step"])
        records = run.truncate_log(start)
    else:
        run.truncate_log(0)

    def save(step):
        payload = {"generator": gen.state_dict(), "discriminator": disc.state_dict(),
                   "opt_g": opt_g.state_dict(), "opt_d": opt_d.state_dict()}
        meta = {"kind": "image", "step": step, "config": serialize_config(cfg),
                "image_widths": list(cfg.image_widths), "composition": cfg.composition}
        return save_checkpoint(run.checkpoint_path(step), payload, meta)

    last = run.checkpoint_path(start) if resume is not None else None
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    for step in range(start + 1, end + 1):
        batch = index_batch(data, batch_indices(cfg.seed, step, n, cfg.batch_size))
        layout, warped = condition_inputs(batch, cfg, cond_model)
        out = gen(batch["agnostic_image"], batch["pose"], layout, warped)
        target = batch["person_image"]
        l1 = (out.image - target).abs().mean()
        vgg = masked_perceptual_loss(out.image, target, None, extractor)
        g_adv = lsgan_g_loss(disc(out.image, batch["agnostic_image"], batch["pose"]))
        total = l1 + vgg + g_adv
        opt_g.zero_grad(set_to_none=True)
        total.backward()
        opt_g.step()
        d_term = lsgan_d_loss(disc(target, batch["agnostic_image"], batch["pose"]),
                              disc(out.image.detach(), batch["agnostic_image"], batch["pose"]))
        opt_d.zero_grad(set_to_none=True)
        d_term.backward()
        opt_d.step()
        if step == 1 or step % cfg.log_every == 0 or step == end:
            rec = {"step": step, "l1": float(l1.detach()), "vgg": float(vgg.detach()), "cgan_g": float(g_adv.detach()),
                   "cgan_d": float(d_term.detach()), "total": float(total.detach())}
            records.append(rec)
            run.append(rec)
        if step % cfg.ckpt_every == 0 or step == cfg.iterations:
            last = save(step)
            if render:
                tiles = [batch["agnostic_image"][0], warped[0], out.generated[0],
                         out.mask[0].expand(3, -1, -1) * 2 - 1, out.image[0]]
                Image.fromarray(np.concatenate([to_uint8(t.detach(), -1, 1) for t in tiles], 1)).save(
                    run.out / "renders" / f"image_{step:06d}.png")
    if last is None or (stop_at is not None and end % cfg.ckpt_every):
        last = save(end)
    return TrainResult(run.out, last, records)


def config_from_checkpoint_meta(meta: dict) -> RunConfig:
    return parse_config(meta["config"])
