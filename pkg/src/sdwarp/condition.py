"""Try-on condition generator.

Two five-level encoders (clothes and segmentation) feed four fusion blocks
that cascade appearance flows coarse to fine, followed by the last block.
The last block first predicts a flow the same way (the TV-dominant stage),
then optionally refines the warped result with a separate prediction layer
that is composed after it instead of being summed into it:

* ``residual_baseline``: no refinement, final warp is the level-4 cascade warp.
* ``sequential`` + ``nonroi_removal=off``: a 2D offset field applied to the
  already-warped clothes.
* ``sequential`` + ``nonroi_removal=on``: a 3D coordinate field over the
  warped clothes stacked on a zero plane, read back at depth 0; pixels whose
  z moves to +1 are erased.

Level 0 is the coarsest pyramid level (H/16) and level 4 is full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import NUM_LABELS, UPPER_CLOTHES
from .errors import ArgumentError, ConfigurationError
from .kernels import (accumulate_flows, grid_sample_2d, grid_sample_3d, identity_flow_3d,
                      stack_zero_depth, upsample_flow)

NUM_LEVELS = 5
CONNECTIONS = ("residual_baseline", "sequential")

ABLATION_CONFIGS = {
    "a": ("residual_baseline", False),
    "b": ("residual_baseline", False),
    "c": ("sequential", False),
    "d": ("sequential", True),
}


@dataclass(frozen=True)
class TopologyConfig:
    connection: str = "sequential"
    nonroi_removal: bool = True
    widths: tuple[int, ...] = (32, 64, 96, 128, 128)
    num_labels: int = NUM_LABELS

    def __post_init__(self):
        if self.connection not in CONNECTIONS:
            raise ConfigurationError(f"connection must be one of {CONNECTIONS}, got {self.connection!r}")
        if len(self.widths) != NUM_LEVELS or any(int(w) < 1 for w in self.widths):
            raise ConfigurationError(f"widths must be {NUM_LEVELS} positive ints, got {self.widths}")
        if self.nonroi_removal and self.connection != "sequential":
            raise ConfigurationError("nonroi_removal=on requires connection=sequential")

    @classmethod
    def ablation(cls, name: str, **kw) -> "TopologyConfig":
        try:
            connection, nonroi = ABLATION_CONFIGS[name]
        except KeyError:
            raise ConfigurationError(f"unknown ablation config {name!r}") from None
        return cls(connection=connection, nonroi_removal=nonroi, **kw)

    @property
    def has_taco(self) -> bool:
        return self.connection == "sequential"


@dataclass
class ConditionOutputs:
    layout_logits: torch.Tensor                 # [B, L, H, W]
    layout: torch.Tensor                        # [B, H, W] labels
    tvob_flows: list[torch.Tensor]              # cascade flows per level, offsets [B, 2, h_l, w_l]
    tvob_deltas: list[torch.Tensor]             # per-level predicted increments
    warped_clothes_tvob: torch.Tensor           # clothes through the level-4 flow
    warped_mask_tvob: torch.Tensor              # clothes mask through the level-4 flow
    warped_clothes: torch.Tensor                # final raw warp
    warped_mask: torch.Tensor                   # final raw mask warp
    clothes_hat: torch.Tensor                   # post-processed warped clothes
    mask_hat: torch.Tensor                      # post-processed warped mask
    seg_features: list[torch.Tensor] = field(default_factory=list)
    taco_flow: torch.Tensor | None = None       # [B, 2, H, W] offsets or [B, 3, 2, H, W] coords


def _act():
    return nn.LeakyReLU(0.2)


def _conv(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), _act())


def _zero_head(cin: int, cout: int) -> nn.Conv2d:
    head = nn.Conv2d(cin, cout, 3, 1, 1)
    nn.init.zeros_(head.weight)
    nn.init.zeros_(head.bias)
    return head


def one_hot_labels(labels: torch.Tensor, num_labels: int = NUM_LABELS, dtype=torch.float32) -> torch.Tensor:
    return F.one_hot(labels.long(), num_labels).permute(0, 3, 1, 2).to(dtype)


class PyramidEncoder(nn.Module):
    """Full-resolution stem followed by four stride-2 stages."""

    def __init__(self, in_ch: int, widths: Sequence[int]):
        super().__init__()
        self.stem = nn.Sequential(_conv(in_ch, widths[4]), _conv(widths[4], widths[4]))
        self.down = nn.ModuleList(
            nn.Sequential(_conv(widths[l + 1], widths[l], stride=2), _conv(widths[l], widths[l]))
            for l in reversed(range(NUM_LEVELS - 1)))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [self.stem(x)]
        for stage in self.down:
            feats.append(stage(feats[-1]))
        return feats[::-1]


class FusionBlock(nn.Module):
    """SEG pathway (joint features) and FLO pathway (flow increment)."""

    def __init__(self, level: int, widths: Sequence[int]):
        super().__init__()
        self.level = level
        w = widths[level]
        prev = widths[level - 1] if level > 0 else 0
        self.flow_body = _conv(2 * w + prev, w)
        self.flow_head = _zero_head(w, 2)
        self.seg = nn.Sequential(_conv(2 * w + prev, w), _conv(w, w))

    def forward(self, e_c, e_s, prev_flow=None, prev_seg=None):
        if (prev_flow is None) != (prev_seg is None) or (prev_flow is None) != (self.level == 0):
            raise ArgumentError(f"level {self.level} fusion block called with wrong previous state")
        if e_c.shape[-2:] != e_s.shape[-2:]:
            raise ArgumentError(f"level {self.level}: feature shapes {tuple(e_c.shape)} and {tuple(e_s.shape)} differ")
        if prev_flow is None:
            delta = self.flow_head(self.flow_body(torch.cat([e_c, e_s], 1)))
            flow = delta
            seg_in = [grid_sample_2d(e_c, flow), e_s]
        else:
            if prev_flow.shape[-2] * 2 != e_c.shape[-2] or prev_flow.shape[-1] * 2 != e_c.shape[-1]:
                raise ArgumentError(f"level {self.level}: previous flow {tuple(prev_flow.shape)} "
                                    f"does not match features {tuple(e_c.shape)}")
            up_flow = upsample_flow(prev_flow, 2)
            up_seg = F.interpolate(prev_seg, scale_factor=2, mode="bilinear", align_corners=False)
            warped = grid_sample_2d(e_c, up_flow)
            delta = self.flow_head(self.flow_body(torch.cat([warped, up_seg, e_s], 1)))
            flow = accumulate_flows(up_flow, delta)
            seg_in = [grid_sample_2d(e_c, flow), e_s, up_seg]
        return flow, self.seg(torch.cat(seg_in, 1)), delta


class Taco2d(nn.Module):
    def __init__(self, w: int):
        super().__init__()
        self.head = _zero_head(2 * w, 2)

    def forward(self, warped_feat, e_s):
        return self.head(torch.cat([warped_feat, e_s], 1))


class Taco3d(nn.Module):
    """Volumetric 3x3x3 conv over the features stacked on a zero depth.

    The head is zero-initialized and its output is added to the identity
    coordinates (z = -1 at depth 0, +1 at depth 1), so it starts as the
    identity refinement.
    """

    def __init__(self, w: int):
        super().__init__()
        self.conv = nn.Conv3d(2 * w, 3, 3, 1, 1, padding_mode="replicate")
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, warped_feat, e_s):
        vol = stack_zero_depth(torch.cat([warped_feat, e_s], 1))
        b, _, _, h, w = vol.shape
        base = identity_flow_3d(h, w, dtype=vol.dtype, device=vol.device)
        return base.unsqueeze(0) + self.conv(vol)


def post_process(layout_logits: torch.Tensor, warped_clothes: torch.Tensor, warped_mask: torch.Tensor):
    """Labels by argmax (ties go to the lowest label), clothes mask gated by the layout."""
    layout = layout_logits.argmax(dim=1)
    mask = warped_mask.clamp(0, 1) * (layout == UPPER_CLOTHES).unsqueeze(1).to(warped_mask.dtype)
    return layout, warped_clothes * mask, mask


class ConditionGenerator(nn.Module):
    def __init__(self, topology: TopologyConfig | None = None):
        super().__init__()
        self.topology = topology or TopologyConfig()
        widths = self.topology.widths
        nl = self.topology.num_labels
        self.clothes_encoder = PyramidEncoder(4, widths)
        self.seg_encoder = PyramidEncoder(nl + 3, widths)
        self.blocks = nn.ModuleList(FusionBlock(l, widths) for l in range(NUM_LEVELS))
        if self.topology.has_taco:
            self.taco = Taco3d(widths[4]) if self.topology.nonroi_removal else Taco2d(widths[4])
        else:
            self.taco = None
        self.layout_head = nn.Conv2d(3 + nl + 3 + 1 + widths[4], nl, 3, 1, 1)

    def extract_pyramids(self, clothes, clothes_mask, agnostic_seg, pose):
        h, w = clothes.shape[-2:]
        if h % 16 or w % 16:
            raise ArgumentError(f"input resolution {h}x{w} is not divisible by 16")
        seg = one_hot_labels(agnostic_seg, self.topology.num_labels, clothes.dtype)
        e_c = self.clothes_encoder(torch.cat([clothes, clothes_mask], 1))
        e_s = self.seg_encoder(torch.cat([seg, pose], 1))
        return e_c, e_s

    def sd_block(self, e_c4, e_s4, flow3, seg3, clothes, clothes_mask, agnostic_seg, pose,
                 taco_flow_override: torch.Tensor | None = None):
        flow4, seg4, delta4 = self.blocks[4](e_c4, e_s4, flow3, seg3)
        warped_c = grid_sample_2d(clothes, flow4)
        warped_m = grid_sample_2d(clothes_mask, flow4, padding="zeros")
        taco_flow = None
        final_c, final_m = warped_c, warped_m
        if self.taco is not None:
            feat = grid_sample_2d(e_c4, flow4)
            taco_flow = self.taco(feat, e_s4) if taco_flow_override is None else taco_flow_override
            if self.topology.nonroi_removal:
                final_c = grid_sample_3d(stack_zero_depth(warped_c), taco_flow)[:, :, 0]
                final_m = grid_sample_3d(stack_zero_depth(warped_m), taco_flow)[:, :, 0]
            else:
                final_c = grid_sample_2d(warped_c, taco_flow)
                final_m = grid_sample_2d(warped_m, taco_flow, padding="zeros")
        seg_onehot = one_hot_labels(agnostic_seg, self.topology.num_labels, clothes.dtype)
        logits = self.layout_head(torch.cat([pose, seg_onehot, final_c, final_m, seg4], 1))
        return dict(flow4=flow4, seg4=seg4, delta4=delta4, warped_c=warped_c, warped_m=warped_m,
                    final_c=final_c, final_m=final_m, taco_flow=taco_flow, logits=logits)

    def forward(self, clothes, clothes_mask, agnostic_seg, pose,
                taco_flow_override: torch.Tensor | None = None) -> ConditionOutputs:
        e_c, e_s = self.extract_pyramids(clothes, clothes_mask, agnostic_seg, pose)
        flows, deltas, segs = [], [], []
        flow = seg = None
        for l in range(NUM_LEVELS - 1):
            flow, seg, delta = self.blocks[l](e_c[l], e_s[l], flow, seg)
            flows.append(flow)
            deltas.append(delta)
            segs.append(seg)
        out = self.sd_block(e_c[4], e_s[4], flow, seg, clothes, clothes_mask, agnostic_seg, pose,
                            taco_flow_override=taco_flow_override)
        flows.append(out["flow4"])
        deltas.append(out["delta4"])
        segs.append(out["seg4"])
        layout, clothes_hat, mask_hat = post_process(out["logits"], out["final_c"], out["final_m"])
        return ConditionOutputs(
            layout_logits=out["logits"], layout=layout, tvob_flows=flows, tvob_deltas=deltas,
            warped_clothes_tvob=out["warped_c"], warped_mask_tvob=out["warped_m"],
            warped_clothes=out["final_c"], warped_mask=out["final_m"], clothes_hat=clothes_hat,
            mask_hat=mask_hat, seg_features=segs, taco_flow=out["taco_flow"])


def upscale_conditions(outputs: ConditionOutputs, clothes: torch.Tensor, clothes_mask: torch.Tensor,
                       factor: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Apply a trained condition model at ``factor`` times its training resolution.

    The flows and layout logits are upsampled; the high-resolution clothes are
    then warped through the same path. Returns (layout, clothes_hat, mask_hat).
    """
    flow4 = upsample_flow(outputs.tvob_flows[-1], factor)
    warped_c = grid_sample_2d(clothes, flow4)
    warped_m = grid_sample_2d(clothes_mask, flow4, padding="zeros")
    taco = outputs.taco_flow
    if taco is not None and taco.dim() == 5:
        b, _, _, h, w = taco.shape
        # upsample as offsets from the identity so borders stay identity-exact
        offsets = taco - identity_flow_3d(h, w, dtype=taco.dtype, device=taco.device)
        up = F.interpolate(offsets.reshape(b, 6, h, w), scale_factor=factor, mode="bilinear",
                           align_corners=False).reshape(b, 3, 2, h * factor, w * factor)
        up = up + identity_flow_3d(h * factor, w * factor, dtype=taco.dtype, device=taco.device)
        warped_c = grid_sample_3d(stack_zero_depth(warped_c), up)[:, :, 0]
        warped_m = grid_sample_3d(stack_zero_depth(warped_m), up)[:, :, 0]
    elif taco is not None:
        up = upsample_flow(taco, factor)
        warped_c = grid_sample_2d(warped_c, up)
        warped_m = grid_sample_2d(warped_m, up, padding="zeros")
    logits = F.interpolate(outputs.layout_logits, scale_factor=factor, mode="bilinear",
                           align_corners=False)
    return post_process(logits, warped_c, warped_m)
