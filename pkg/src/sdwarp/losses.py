"""Condition-generator objectives and the layout discriminator.

All reductions are means, so the loss weights do not depend on resolution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .condition import ConditionOutputs, TopologyConfig, one_hot_labels
from .data import NUM_LABELS
from .errors import ArgumentError, ConfigurationError
from .kernels import grid_sample_2d


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 10.0
    lambda_l1: float = 10.0
    lambda_tv: float = 2.0
    lambda_zdist: float = 1.0
    z0: float = -1.0
    z1: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigurationError(f"loss weight {f.name} must be finite")
        if not self.z0 < self.z1:
            raise ConfigurationError(f"depth anchors must satisfy z0 < z1, got {self.z0}, {self.z1}")


REPORT_KEYS = ("tv", "ce", "l1", "l1_masked", "vgg", "vgg_masked", "cgan_g", "cgan_d", "zdist", "total")


@dataclass
class LossReport:
    """Scalar loss terms of one step. Terms inactive for a topology are None."""

    tv: float
    ce: float
    l1: float
    vgg: float
    cgan_g: float
    cgan_d: float
    total: float
    l1_masked: float | None = None
    vgg_masked: float | None = None
    zdist: float | None = None

    def as_record(self, step: int) -> dict:
        rec = {"step": int(step)}
        d = asdict(self)
        rec.update({k: d[k] for k in REPORT_KEYS})
        return rec


def _unbatch(t: torch.Tensor, ndim: int) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == ndim else t


def tv_loss(flow: torch.Tensor, region: torch.Tensor | None = None) -> torch.Tensor:
    """L1 differences to the right and down neighbors, divided by the pixel count.

    With ``region`` ([H, W] or broadcastable), only neighbor pairs whose two
    pixels both lie in the region contribute.
    """
    f = _unbatch(flow, 3)
    b, _, h, w = f.shape
    dx = (f[..., :, 1:] - f[..., :, :-1]).abs()
    dy = (f[..., 1:, :] - f[..., :-1, :]).abs()
    if region is not None:
        r = region.to(f.dtype)
        dx = dx * (r[..., :, 1:] * r[..., :, :-1])
        dy = dy * (r[..., 1:, :] * r[..., :-1, :])
    return (dx.sum() + dy.sum()) / (b * h * w)


def masked_l1_loss(warped: torch.Tensor, target: torch.Tensor,
                   exclusion: torch.Tensor | None = None) -> torch.Tensor:
    """Mean of ``|warped - target| * (1 - exclusion)`` over all elements."""
    if warped.shape != target.shape:
        raise ArgumentError(f"shape mismatch: {tuple(warped.shape)} vs {tuple(target.shape)}")
    diff = (warped - target).abs()
    if exclusion is None:
        return diff.mean()
    if exclusion.shape[-2:] != warped.shape[-2:]:
        raise ArgumentError(f"mask shape {tuple(exclusion.shape)} does not match {tuple(warped.shape)}")
    return (diff * (1 - exclusion)).mean()


class FeatureExtractor(nn.Module):
    """Frozen strided conv stack standing in for a pretrained perceptual network.

    ``identity=True`` gives a single layer that returns its input unchanged.
    Weights come from a fixed seed, so every instance is the same function.
    """

    def __init__(self, channels: Sequence[int] = (8, 16, 16, 32), in_ch: int = 3, seed: int = 0,
                 identity: bool = False, dtype=torch.float32):
        super().__init__()
        self.identity = identity
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        if not identity:
            cin = in_ch
            for cout in channels:
                conv = nn.Conv2d(cin, cout, 3, 2, 1)
                with torch.no_grad():
                    bound = math.sqrt(6.0 / (cin * 9))
                    conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                    conv.bias.zero_()
                self.stages.append(conv)
                cin = cout
        self.to(dtype)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if self.identity:
            return [x]
        feats = []
        for conv in self.stages:
            x = F.gelu(conv(x))
            feats.append(x)
        return feats


def _feature_mask(keep: torch.Tensor, size) -> torch.Tensor:
    return (F.adaptive_avg_pool2d(keep, size) >= 0.5).to(keep.dtype)


def masked_perceptual_loss(a: torch.Tensor, b: torch.Tensor, keep: torch.Tensor | None,
                           extractor: FeatureExtractor) -> torch.Tensor:
    """Sum over extractor layers of the masked mean L1 feature distance."""
    a4, b4 = _unbatch(a, 3), _unbatch(b, 3)
    if a4.shape != b4.shape:
        raise ArgumentError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    keep4 = None if keep is None else _unbatch(keep, 3)
    total = a4.new_zeros(())
    for fa, fb in zip(extractor(a4), extractor(b4)):
        diff = (fa - fb).abs()
        if keep4 is not None:
            diff = diff * _feature_mask(keep4, fa.shape[-2:])
        total = total + diff.mean()
    return total


def ce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean pixelwise cross-entropy."""
    lg, lb = _unbatch(logits, 3), labels if labels.dim() == 3 else labels.unsqueeze(0)
    n = lg.shape[1]
    if lb.numel() and (int(lb.min()) < 0 or int(lb.max()) >= n):
        raise ArgumentError(f"labels must lie in [0, {n - 1}]")
    return F.cross_entropy(lg, lb.long())


class LayoutDiscriminator(nn.Module):
    """Patch discriminator over a layout and its conditioning (clothes, clothes mask, agnostic segmentation, pose)."""

    def __init__(self, num_labels: int = NUM_LABELS, width: int = 16):
        super().__init__()
        cin = num_labels + 3 + 1 + num_labels + 3
        self.num_labels = num_labels
        self.net = nn.Sequential(
            nn.Conv2d(cin, width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 2 * width, 3, 1, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 3, 1, 1),
        )

    def forward(self, layout: torch.Tensor, cond: dict) -> torch.Tensor:
        seg = one_hot_labels(cond["agnostic_seg"], self.num_labels, layout.dtype)
        x = torch.cat([layout, cond["clothes"], cond["clothes_mask"], seg, cond["pose"]], 1)
        return self.net(x)


def lsgan_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((d_real - 1) ** 2).mean() + 0.5 * (d_fake ** 2).mean()


def lsgan_g_loss(d_fake: torch.Tensor) -> torch.Tensor:
    return 0.5 * ((d_fake - 1) ** 2).mean()


def cgan_losses(discriminator: nn.Module, cond: dict, real_labels: torch.Tensor,
                fake_logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares GAN terms (generator, discriminator).

    The generator term backpropagates through the softmaxed logits; the
    discriminator term sees the fake layout detached.
    """
    fake = F.softmax(fake_logits, dim=1)
    real = one_hot_labels(real_labels, fake.shape[1], fake.dtype)
    g_term = lsgan_g_loss(discriminator(fake, cond))
    d_term = lsgan_d_loss(discriminator(real, cond), discriminator(fake.detach(), cond))
    return g_term, d_term


def zdist_loss(flow3d: torch.Tensor, clothes_region: torch.Tensor,
               weights: LossWeights | None = None) -> torch.Tensor:
    """Pull depth-0 z towards z0 inside the clothes region and towards z1 outside."""
    weights = weights or LossWeights()
    f = _unbatch(flow3d, 4)
    if clothes_region.shape[-2:] != f.shape[-2:]:
        raise ArgumentError(f"clothes region {tuple(clothes_region.shape)} does not match flow {tuple(flow3d.shape)}")
    sc = clothes_region.reshape(-1, *f.shape[-2:])
    if sc.shape[0] not in (1, f.shape[0]):
        raise ArgumentError(f"clothes region {tuple(clothes_region.shape)} does not match flow {tuple(flow3d.shape)}")
    z = f[:, 2, 0]
    return ((weights.z0 - z).abs() * sc + (weights.z1 - z).abs() * (1 - sc)).mean()


def total_condition_loss(terms: dict, weights: LossWeights, topology: TopologyConfig):
    """Weighted recomposition of the condition objective.

    ``terms`` maps report keys to scalars (tensors or floats). ``l1_masked``,
    ``vgg_masked`` and ``zdist`` are required exactly when non-ROI removal is on.
    """
    required = ["ce", "l1", "vgg", "cgan_g", "tv"]
    nonroi = ["l1_masked", "vgg_masked", "zdist"]
    for k in required + (nonroi if topology.nonroi_removal else []):
        if terms.get(k) is None:
            raise ConfigurationError(f"loss term {k!r} is required for this topology")
    if not topology.nonroi_removal and terms.get("zdist") is not None:
        raise ConfigurationError("z-distance term requires nonroi_removal=on")
    l1m = terms.get("l1_masked") or 0.0
    vggm = terms.get("vgg_masked") or 0.0
    total = (weights.lambda_ce * terms["ce"]
             + weights.lambda_l1 * (terms["l1"] + l1m)
             + (terms["vgg"] + vggm)
             + terms["cgan_g"]
             + weights.lambda_tv * terms["tv"])
    if topology.nonroi_removal:
        total = total + weights.lambda_zdist * terms["zdist"]
    return total


def _pool(t: torch.Tensor, factor: int) -> torch.Tensor:
    return t if factor == 1 else F.avg_pool2d(t, factor)


def condition_objective(out: ConditionOutputs, batch: dict, topology: TopologyConfig,
                        weights: LossWeights, extractor: FeatureExtractor,
                        discriminator: nn.Module):
    """Generator-side terms for one batch. Returns (total, terms, d_term)."""
    full_h = batch["clothes"].shape[-2]
    per_level_l1, per_level_vgg = [], []
    for flow in out.tvob_flows:
        factor = full_h // flow.shape[-2]
        c_l = _pool(batch["clothes"], factor)
        cm_l = _pool(batch["clothes_mask"], factor)
        sc_l = _pool(batch["gt_clothes_region"], factor)
        ic_l = _pool(batch["gt_warped_clothes"], factor)
        m_l = (_pool(batch["nonroi_mask"], factor) >= 0.5).to(c_l.dtype)
        exclusion = m_l if topology.nonroi_removal else None
        keep = 1 - m_l if topology.nonroi_removal else None
        per_level_l1.append(masked_l1_loss(grid_sample_2d(cm_l, flow, padding="zeros"), sc_l, exclusion))
        per_level_vgg.append(masked_perceptual_loss(grid_sample_2d(c_l, flow), ic_l, keep, extractor))
    level_l1 = torch.stack(per_level_l1).sum()
    level_vgg = torch.stack(per_level_vgg).sum()

    terms = {"tv": torch.stack([tv_loss(f) for f in out.tvob_flows]).sum(),
             "ce": ce_loss(out.layout_logits, batch["segmentation"])}
    final_l1 = masked_l1_loss(out.warped_mask, batch["gt_clothes_region"])
    final_vgg = masked_perceptual_loss(out.warped_clothes, batch["gt_warped_clothes"], None, extractor)
    if topology.nonroi_removal:
        terms.update(l1=final_l1, vgg=final_vgg, l1_masked=level_l1, vgg_masked=level_vgg,
                     zdist=zdist_loss(out.taco_flow, batch["gt_clothes_region"], weights))
    elif topology.has_taco:
        terms.update(l1=level_l1 + final_l1, vgg=level_vgg + final_vgg)
    else:
        # the final warp is the level-4 warp, already in the per-level sums
        terms.update(l1=level_l1, vgg=level_vgg)
    g_term, d_term = cgan_losses(discriminator, batch, batch["segmentation"], out.layout_logits)
    terms["cgan_g"] = g_term
    total = total_condition_loss(terms, weights, topology)
    return total, terms, d_term


def make_report(terms: dict, total, d_term) -> LossReport:
    val = lambda v: None if v is None else float(v.detach() if torch.is_tensor(v) else v)
    return LossReport(tv=val(terms["tv"]), ce=val(terms["ce"]), l1=val(terms["l1"]),
                      vgg=val(terms["vgg"]), cgan_g=val(terms["cgan_g"]), cgan_d=val(d_term),
                      total=val(total), l1_masked=val(terms.get("l1_masked")),
                      vgg_masked=val(terms.get("vgg_masked")), zdist=val(terms.get("zdist")))
