"""Sampling and flow primitives.

Conventions used everywhere in the package:

* 2D flows are offsets in normalized coordinates, added to the identity grid
  (a zero flow is the identity warp). Channel 0 is x, channel 1 is y.
* 3D flows hold absolute (x, y, z) coordinates per output depth. Depth 0 sits
  at z = -1 and depth 1 at z = +1.
* Pixel ``i`` of an axis of length ``n`` has normalized coordinate
  ``2 * (i + 0.5) / n - 1`` (the ``align_corners=False`` convention).

All functions accept batched tensors (``[B, ...]``) and also the unbatched
layouts used in the docs (``[C, H, W]`` images, ``[2, H, W]`` flows,
``[C, 2, H, W]`` volumes, ``[3, 2, H, W]`` 3D flows).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .errors import ArgumentError, NumericError

PADDING_MODES = ("border", "zeros")

# Coordinates this close to an integer pixel position are snapped onto it, so
# identity warps are exact. The snap is straight-through for gradients.
_SNAP_TOL = {torch.float64: 1e-9, torch.float32: 1e-4, torch.float16: 1e-2, torch.bfloat16: 1e-2}


def make_identity_grid(h: int, w: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Absolute normalized coordinates of every pixel center, shape [2, h, w]."""
    if int(h) != h or int(w) != w or h < 1 or w < 1:
        raise ArgumentError(f"grid dimensions must be positive integers, got ({h}, {w})")
    xs = (2 * torch.arange(w, dtype=torch.float64) + 1) / w - 1
    ys = (2 * torch.arange(h, dtype=torch.float64) + 1) / h - 1
    grid = torch.stack([xs.expand(h, w), ys[:, None].expand(h, w)])
    return grid.to(dtype=dtype, device=device)


def _batched(t: torch.Tensor, ndim: int, name: str) -> tuple[torch.Tensor, bool]:
    if t.dim() == ndim:
        return t.unsqueeze(0), True
    if t.dim() == ndim + 1:
        return t, False
    raise ArgumentError(f"{name} must have {ndim} or {ndim + 1} dims, got shape {tuple(t.shape)}")


def _check_padding(padding: str) -> None:
    if padding not in PADDING_MODES:
        raise ArgumentError(f"padding must be one of {PADDING_MODES}, got {padding!r}")


def _check_finite(t: torch.Tensor, name: str) -> None:
    if not bool(torch.isfinite(t).all()):
        raise NumericError(f"{name} contains non-finite entries")


def _to_pixel(coord: torch.Tensor, size: int) -> torch.Tensor:
    pix = ((coord + 1) * size - 1) / 2
    tol = _SNAP_TOL.get(pix.dtype, 1e-4)
    snapped = pix.detach().round()
    near = (pix.detach() - snapped).abs() <= tol
    return torch.where(near, pix + (snapped - pix).detach(), pix)


def _axis_taps(pix: torch.Tensor, size: int, padding: str):
    """Two-tap linear interpolation indices and weights along one axis."""
    if padding == "border":
        pix = pix.clamp(0, size - 1)
    i0 = pix.detach().floor()
    w1 = pix - i0
    w0 = 1 - w1
    i0 = i0.long()
    i1 = i0 + 1
    if padding == "zeros":
        w0 = w0 * ((i0 >= 0) & (i0 < size)).to(w0.dtype)
        w1 = w1 * ((i1 >= 0) & (i1 < size)).to(w1.dtype)
    return i0.clamp(0, size - 1), i1.clamp(0, size - 1), w0, w1


def _bilinear(inp: torch.Tensor, px: torch.Tensor, py: torch.Tensor, padding: str) -> torch.Tensor:
    """Sample ``inp`` [B, C, H, W] at pixel coordinates ``px``/``py`` [B, h, w]."""
    b, c, hh, ww = inp.shape
    oh, ow = px.shape[-2:]
    x0, x1, wx0, wx1 = _axis_taps(px, ww, padding)
    y0, y1, wy0, wy1 = _axis_taps(py, hh, padding)
    flat = inp.reshape(b, c, hh * ww)

    def tap(yi, xi):
        idx = (yi * ww + xi).reshape(b, 1, oh * ow).expand(b, c, oh * ow)
        return flat.gather(2, idx).reshape(b, c, oh, ow)

    out = tap(y0, x0) * (wx0 * wy0).unsqueeze(1)
    out = out + tap(y0, x1) * (wx1 * wy0).unsqueeze(1)
    out = out + tap(y1, x0) * (wx0 * wy1).unsqueeze(1)
    out = out + tap(y1, x1) * (wx1 * wy1).unsqueeze(1)
    return out


def grid_sample_2d(inp: torch.Tensor, flow: torch.Tensor, padding: str = "border") -> torch.Tensor:
    """Bilinearly sample ``inp`` at identity + ``flow``.

    Differentiable with respect to both arguments.
    """
    _check_padding(padding)
    x, unbatched = _batched(inp, 3, "input")
    f, flow_unbatched = _batched(flow, 3, "flow")
    if unbatched != flow_unbatched:
        raise ArgumentError("input and flow must both be batched or both unbatched")
    if f.shape[1] != 2:
        raise ArgumentError(f"2D flow needs 2 channels, got {f.shape[1]}")
    if f.shape[0] != x.shape[0] or f.shape[-2:] != x.shape[-2:]:
        raise ArgumentError(
            f"flow shape {tuple(flow.shape)} does not match input shape {tuple(inp.shape)}")
    _check_finite(f, "flow")
    h, w = x.shape[-2:]
    coords = make_identity_grid(h, w, dtype=f.dtype, device=f.device) + f
    out = _bilinear(x, _to_pixel(coords[:, 0], w), _to_pixel(coords[:, 1], h), padding)
    return out[0] if unbatched else out


def _depth_weight(iz: torch.Tensor, k: int) -> torch.Tensor:
    return torch.relu(1 - (iz - k).abs())


def grid_sample_3d(volume: torch.Tensor, flow: torch.Tensor, padding: str = "border") -> torch.Tensor:
    """Trilinearly sample a two-depth ``volume`` at absolute coordinates ``flow``.

    ``volume`` is [B, C, 2, H, W] and ``flow`` is [B, 3, 2, H, W]; depth 0 of the
    volume sits at z = -1 and depth 1 at z = +1.
    """
    _check_padding(padding)
    v, unbatched = _batched(volume, 4, "volume")
    f, flow_unbatched = _batched(flow, 4, "flow")
    if unbatched != flow_unbatched:
        raise ArgumentError("volume and flow must both be batched or both unbatched")
    if v.shape[2] != 2:
        raise ArgumentError(f"volume depth must be exactly 2, got {v.shape[2]}")
    if f.shape[1] != 3 or f.shape[2] != 2:
        raise ArgumentError(f"3D flow must be [B, 3, 2, H, W], got {tuple(flow.shape)}")
    if f.shape[0] != v.shape[0] or f.shape[-2:] != v.shape[-2:]:
        raise ArgumentError(
            f"flow shape {tuple(flow.shape)} does not match volume shape {tuple(volume.shape)}")
    _check_finite(f, "flow")
    b, c, _, h, w = v.shape
    planes = v.transpose(1, 2).reshape(b, 2 * c, h, w)
    outs = []
    for d in range(2):
        s = _bilinear(planes, _to_pixel(f[:, 0, d], w), _to_pixel(f[:, 1, d], h), padding)
        s0, s1 = s[:, :c], s[:, c:]
        iz = (f[:, 2, d] + 1) / 2
        if padding == "border":
            iz = iz.clamp(0, 1)
        outs.append(s0 * _depth_weight(iz, 0).unsqueeze(1) + s1 * _depth_weight(iz, 1).unsqueeze(1))
    out = torch.stack(outs, dim=2)
    return out[0] if unbatched else out


def upsample_flow(flow: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear spatial upsizing. Values are not rescaled (offsets are normalized)."""
    if int(factor) != factor or factor < 1:
        raise ArgumentError(f"upsampling factor must be a positive integer, got {factor}")
    f, unbatched = _batched(flow, 3, "flow")
    if factor == 1:
        return flow
    out = F.interpolate(f, scale_factor=int(factor), mode="bilinear", align_corners=False)
    return out[0] if unbatched else out


def accumulate_flows(previous: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    """Residual flow connective: ``previous + delta`` at matching resolution."""
    if previous.shape != delta.shape:
        raise ArgumentError(
            f"cannot accumulate flows of shapes {tuple(previous.shape)} and {tuple(delta.shape)}")
    return previous + delta


def stack_zero_depth(plane: torch.Tensor) -> torch.Tensor:
    """Expand [B, C, H, W] into a two-depth volume whose second depth is zeros."""
    p, unbatched = _batched(plane, 3, "plane")
    if p.shape[1] == 0:
        raise ArgumentError("plane must have at least one channel")
    out = torch.stack([p, torch.zeros_like(p)], dim=2)
    return out[0] if unbatched else out


def identity_flow_3d(h: int, w: int, dtype=torch.float32, device=None,
                     z: Sequence[float] = (-1.0, 1.0)) -> torch.Tensor:
    """3D coordinates that reproduce the volume: identity xy and per-depth z anchors."""
    grid = make_identity_grid(h, w, dtype=dtype, device=device)
    depths = []
    for zd in z:
        depths.append(torch.cat([grid, torch.full((1, h, w), float(zd), dtype=dtype, device=device)]))
    return torch.stack(depths, dim=1)


@dataclass
class GradientReport:
    """Central-difference versus autograd comparison for one operation."""

    errors: list[float]
    threshold: float
    perturbation: float
    flagged: list[bool] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return not any(self.flagged)


def finite_diff_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
                      perturbation: float = 1e-5, threshold: float = 1e-4,
                      wrt: Sequence[int] | None = None) -> GradientReport:
    """Compare autograd gradients of ``fn(*inputs).sum()`` against central differences.

    The relative error of each element is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = 1e-3 * max|n|`` (at least 1e-8), so near-zero entries are judged on
    an absolute scale. Inputs whose error exceeds ``threshold`` are flagged; this
    usually means a sample point sits on an interpolation cell boundary.
    """
    wrt = list(range(len(inputs))) if wrt is None else list(wrt)
    base = [t.detach().clone() for t in inputs]
    leaves = [t.clone().requires_grad_(i in wrt) for i, t in enumerate(base)]
    out = fn(*leaves).sum()
    grads = torch.autograd.grad(out, [leaves[i] for i in wrt], allow_unused=True)

    errors, flagged = [], []
    with torch.no_grad():
        for k, i in enumerate(wrt):
            analytic = grads[k] if grads[k] is not None else torch.zeros_like(base[i])
            numeric = torch.zeros_like(base[i])
            flat = base[i].view(-1)
            num_flat = numeric.view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + perturbation
                hi = fn(*base).sum().item()
                flat[j] = orig - perturbation
                lo = fn(*base).sum().item()
                flat[j] = orig
                num_flat[j] = (hi - lo) / (2 * perturbation)
            floor = max(1e-3 * numeric.abs().max().item(), 1e-8)
            denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()),
                                  torch.full_like(numeric, floor))
            err = ((analytic - numeric).abs() / denom).max().item() if numeric.numel() else 0.0
            errors.append(err)
            flagged.append(err >= threshold)
    return GradientReport(errors=errors, threshold=threshold, perturbation=perturbation,
                          flagged=flagged)
