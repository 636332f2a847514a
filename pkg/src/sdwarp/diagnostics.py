"""Measurements of gradient conflict, sleeve gaps, waist squeezing and warp quality."""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .condition import ConditionGenerator
from .data import PARTS, UPPER_CLOTHES, decode_parts
from .errors import ArgumentError
from .kernels import grid_sample_2d, grid_sample_3d, stack_zero_depth
from .losses import cgan_losses, tv_loss

ARM_PARTS = (PARTS.index("left_arm"), PARTS.index("right_arm"))
TORSO_PART = PARTS.index("torso")
ERASED_TONE = (0.9, 0.35, 0.2)


# ---------------------------------------------------------------------------
# gradient conflict


def gradient_cosine(a: torch.Tensor, b: torch.Tensor) -> tuple[float, bool]:
    """Cosine of two flattened gradients. A zero norm gives (0.0, True)."""
    a = a.detach().reshape(-1).double()
    b = b.detach().reshape(-1).double()
    na, nb = a.norm(), b.norm()
    if na == 0 or nb == 0:
        return 0.0, True
    return float((a @ b / (na * nb)).clamp(-1, 1)), False


@dataclass
class ConflictReport:
    cosines: list[float]
    zero_gradient: list[bool]
    gap_opposed_fraction: float
    gap_entries: int
    batch_size: int
    seed: int
    step: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def dilate(mask: torch.Tensor, px: int = 1) -> torch.Tensor:
    m = mask if mask.dim() == 4 else mask.unsqueeze(0)
    out = F.max_pool2d(m.float(), 2 * px + 1, 1, px)
    return out if mask.dim() == 4 else out[0]


def gradient_conflict_probe(model: ConditionGenerator, batch: dict, discriminator: torch.nn.Module,
                            seed: int = 0, step: int | None = None) -> ConflictReport:
    """Gradients of the TV and adversarial generator terms w.r.t. every flow delta.

    The two gradients come from separate backward passes over one forward
    pass. The sign comparison runs over the level-4 delta entries inside the
    sleeve-gap band dilated by one pixel.
    """
    out = model(batch["clothes"], batch["clothes_mask"], batch["agnostic_seg"], batch["pose"])
    deltas = out.tvob_deltas
    tv = torch.stack([tv_loss(f) for f in out.tvob_flows]).sum()
    g_term, _ = cgan_losses(discriminator, batch, batch["segmentation"], out.layout_logits)
    g_tv = torch.autograd.grad(tv, deltas, retain_graph=True, allow_unused=True)
    g_gan = torch.autograd.grad(g_term, deltas, allow_unused=True)
    g_tv = [torch.zeros_like(d) if g is None else g for g, d in zip(g_tv, deltas)]
    g_gan = [torch.zeros_like(d) if g is None else g for g, d in zip(g_gan, deltas)]
    cos, flags = zip(*(gradient_cosine(a, b) for a, b in zip(g_tv, g_gan)))

    band = dilate(batch["gap_band"]) > 0.5                     # [B, 1, H, W]
    band = band.expand_as(g_tv[-1])
    prod = (g_tv[-1] * g_gan[-1])[band]
    n = int(band.sum())
    frac = float((prod < 0).sum()) / n if n else 0.0
    return ConflictReport(cosines=list(cos), zero_gradient=list(flags), gap_opposed_fraction=frac,
                          gap_entries=n, batch_size=int(batch["clothes"].shape[0]), seed=int(seed),
                          step=step)


# ---------------------------------------------------------------------------
# squeezing metrics


@dataclass
class SqueezeMetrics:
    sleeve_gap_ratio: float | None = None
    waist_period_ratio: float | None = None
    waist_flagged: bool = False


def _plane(t: torch.Tensor) -> torch.Tensor:
    t = t.detach()
    while t.dim() > 2:
        if t.shape[0] != 1:
            raise ArgumentError(f"expected a single-channel map, got shape {tuple(t.shape)}")
        t = t[0]
    return t


def sleeve_gap_metric(warped_mask: torch.Tensor, gap_band: torch.Tensor) -> float:
    """Fraction of gap-band pixels left uncovered (< 0.5) by the warped mask."""
    m, band = _plane(warped_mask), _plane(gap_band) > 0.5
    if m.shape != band.shape:
        raise ArgumentError(f"mask {tuple(m.shape)} and band {tuple(band.shape)} differ")
    n = int(band.sum())
    if n == 0:
        raise ArgumentError("gap band is empty")
    return float((m[band] < 0.5).sum()) / n


def _first_period(signal: np.ndarray) -> float | None:
    """First autocorrelation peak after the first zero crossing, sub-sample refined.

    The autocorrelation is normalized by the overlap length at each lag and
    only lags up to 3/4 of the signal are considered.
    """
    x = signal - signal.mean()
    n = len(x)
    var = float(x @ x) / max(n, 1)
    if n < 4 or var <= 1e-12:
        return None
    top = max(3, (3 * n) // 4)
    ac = np.array([x[: n - k] @ x[k:] / (n - k) for k in range(top + 1)]) / var
    below = np.nonzero(ac[1:] < 0)[0]
    if not len(below):
        return None
    start = below[0] + 1
    if start >= top:
        return None
    k = start + int(np.argmax(ac[start:top]))
    if k <= 0 or ac[k] <= 0 or ac[k] < ac[k - 1] or ac[k] < ac[k + 1]:
        return None
    if ac[k] >= 1 - 1e-9:
        return float(k)  # exact repeat at an integer lag
    # parabolic refinement of the peak
    a, b, c = ac[k - 1], ac[k], ac[k + 1]
    den = a - 2 * b + c
    off = 0.5 * (a - c) / den if den != 0 else 0.0
    return float(k + max(-0.5, min(0.5, off)))


def waist_period_metric(warped_clothes: torch.Tensor, waist_band: torch.Tensor,
                        flat_period: float) -> float | None:
    """Median vertical texture period in the band over the flat period.

    Each band column is read bottom-up from the band's lowest row. Returns None
    when no column shows a detectable period.
    """
    if flat_period <= 0:
        raise ArgumentError("flat period must be positive")
    img = warped_clothes.detach()
    img = img[0] if img.dim() == 4 else img
    lum = img.double().mean(0).numpy()
    band = (_plane(waist_band) > 0.5).numpy()
    if lum.shape != band.shape:
        raise ArgumentError(f"image {lum.shape} and band {band.shape} differ")
    periods = []
    for x in np.nonzero(band.any(0))[0]:
        rows = np.nonzero(band[:, x])[0]
        # longest contiguous run of band rows in this column
        splits = np.split(rows, np.nonzero(np.diff(rows) != 1)[0] + 1)
        run = max(splits, key=len)
        if len(run) < 4:
            continue
        p = _first_period(lum[run, x])
        if p is not None:
            periods.append(p)
    if not periods:
        return None
    return float(np.median(periods)) / float(flat_period)


def squeeze_metrics(warped_mask, warped_clothes, sample) -> SqueezeMetrics:
    """Metrics that apply to the sample's scenario; others stay None."""
    m = SqueezeMetrics()
    if float(sample.gap_band.sum()) > 0:
        m.sleeve_gap_ratio = sleeve_gap_metric(warped_mask, sample.gap_band)
    if float(sample.waist_band.sum()) > 0:
        m.waist_period_ratio = waist_period_metric(warped_clothes, sample.waist_band, sample.period)
        m.waist_flagged = m.waist_period_ratio is None
    return m


# ---------------------------------------------------------------------------
# SSIM and region errors

SSIM_WINDOW = 7
SSIM_K1, SSIM_K2 = 0.01, 0.03


def ssim_map(x: torch.Tensor, y: torch.Tensor, data_range: float = 2.0) -> torch.Tensor:
    """Per-pixel SSIM (averaged over channels) with a 7x7 uniform window."""
    if x.shape != y.shape:
        raise ArgumentError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    x4 = x.unsqueeze(0) if x.dim() == 3 else x
    y4 = y.unsqueeze(0) if y.dim() == 3 else y
    x4, y4 = x4.double(), y4.double()
    pad = SSIM_WINDOW // 2

    def blur(t):
        return F.avg_pool2d(F.pad(t, (pad,) * 4, mode="reflect"), SSIM_WINDOW, 1)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = blur(x4), blur(y4)
    sxx = blur(x4 * x4) - mx * mx
    syy = blur(y4 * y4) - my * my
    sxy = blur(x4 * y4) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    out = (num / den).mean(1)
    return out if x.dim() == 4 else out[0]


def ssim(x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor | None = None) -> float:
    m = ssim_map(x, y)
    if mask is None:
        return float(m.mean())
    sel = _plane(mask) > 0.5 if m.dim() == 2 else mask.reshape(m.shape) > 0.5
    if not bool(sel.any()):
        raise ArgumentError("SSIM mask is empty")
    return float(m[sel].mean())


def region_masks(segmentation: torch.Tensor, pose_map: torch.Tensor, waist_rows: int = 8) -> dict:
    """Arm band and waist band inside the upper-clothes region.

    The arm band is upper clothes over decoded arm parts; the waist band is
    upper clothes over the torso part within ``waist_rows`` of the lowest
    such row.
    """
    clothes = segmentation == UPPER_CLOTHES
    parts = decode_parts(pose_map)
    arm = clothes & torch.isin(parts, torch.tensor(ARM_PARTS))
    torso = clothes & (parts == TORSO_PART)
    waist = torch.zeros_like(torso)
    rows = torch.nonzero(torso.any(1)).flatten()
    if len(rows):
        bottom = int(rows.max())
        waist[max(0, bottom - waist_rows + 1): bottom + 1] = torso[max(0, bottom - waist_rows + 1): bottom + 1]
    return {"arm": arm, "waist": waist}


@dataclass
class RegionRow:
    region: str
    pixels: int
    l1: float | None
    ssim: float | None
    flagged: bool = False


def region_error_report(warped_clothes: torch.Tensor, target: torch.Tensor, segmentation: torch.Tensor,
                        pose_map: torch.Tensor) -> list[RegionRow]:
    """Region-wise L1 and SSIM; empty regions come back flagged with no values."""
    smap = ssim_map(warped_clothes.detach(), target.detach())
    rows = []
    for name, mask in region_masks(segmentation, pose_map).items():
        n = int(mask.sum())
        if n == 0:
            rows.append(RegionRow(name, 0, None, None, True))
            continue
        l1 = float((warped_clothes.detach() - target.detach()).abs().mean(0)[mask].mean())
        rows.append(RegionRow(name, n, l1, float(smap[mask].mean())))
    return rows


# ---------------------------------------------------------------------------
# warped grid rendering


def reference_grid(h: int, w: int, cell: int = 8, line: int = 1) -> torch.Tensor:
    """Black lines every ``cell`` pixels on white, [3, h, w] in [0, 1]."""
    if cell < 2:
        raise ArgumentError("grid cell must be at least 2 pixels")
    ys = (torch.arange(h) % cell) < line
    xs = (torch.arange(w) % cell) < line
    on = ys[:, None] | xs[None, :]
    return torch.where(on, 0.0, 1.0).expand(3, h, w).clone()


def render_warped_grid(flows: torch.Tensor | Sequence[torch.Tensor], cell: int = 8) -> torch.Tensor:
    """Push a reference grid through a chain of flows (applied in order).

    A 2D flow is [2, H, W] offsets, a 3D flow is [3, 2, H, W] coordinates; for
    the latter, depth 0 is rendered and pixels whose z is past the midpoint
    toward the zero plane are painted in a flat tone.
    """
    if isinstance(flows, torch.Tensor):
        flows = [flows]
    if not flows:
        raise ArgumentError("at least one flow is required")
    # render in the flows' own precision so identity snapping uses the right tolerance
    dtype = functools.reduce(torch.promote_types, [f.dtype for f in flows])
    flows = [f.detach().to(dtype) for f in flows]
    h, w = flows[0].shape[-2:]
    img = reference_grid(h, w, cell).to(dtype)
    erased = torch.zeros(h, w, dtype=torch.bool)
    for f in flows:
        if f.shape[-2:] != (h, w):
            raise ArgumentError("all flows in the chain must share one resolution")
        if f.dim() == 3:
            img = grid_sample_2d(img, f)
            erased = grid_sample_2d(erased[None].to(dtype), f, padding="zeros")[0] > 0.5
        elif f.dim() == 4:
            img = grid_sample_3d(stack_zero_depth(img), f)[:, 0]
            erased = f[2, 0] > 0
        else:
            raise ArgumentError(f"unsupported flow shape {tuple(f.shape)}")
    tone = torch.tensor(ERASED_TONE, dtype=img.dtype)[:, None, None].expand_as(img)
    return torch.where(erased.unsqueeze(0), tone, img).float()


def to_uint8(img: torch.Tensor, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    x = ((img.detach().float() - lo) / (hi - lo)).clamp(0, 1)
    return (x.permute(1, 2, 0).numpy() * 255 + 0.5).astype(np.uint8)


def median_or_none(values) -> float | None:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.median(vals)) if vals else None
