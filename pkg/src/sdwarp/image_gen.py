"""Try-on image generator with a composition mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .condition import one_hot_labels
from .data import NUM_LABELS
from .errors import ArgumentError


@dataclass
class TryOnOutputs:
    generated: torch.Tensor     # person rendered by the network, [B, 3, H, W]
    mask: torch.Tensor          # composition mask, [B, 1, H, W]
    image: torch.Tensor         # final composite


def compose_tryon(generated: torch.Tensor, warped_clothes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Blend the generated person with the warped clothes by ``mask``."""
    if generated.shape != warped_clothes.shape:
        raise ArgumentError(f"shape mismatch: {tuple(generated.shape)} vs {tuple(warped_clothes.shape)}")
    if mask.shape[-2:] != generated.shape[-2:]:
        raise ArgumentError(f"mask shape {tuple(mask.shape)} does not match {tuple(generated.shape)}")
    if mask.numel() and (float(mask.detach().min()) < 0 or float(mask.detach().max()) > 1):
        raise ArgumentError("composition mask must lie in [0, 1]")
    return generated * (1 - mask) + warped_clothes * mask


def _block(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, 1, 1), nn.LeakyReLU(0.2),
                         nn.Conv2d(cout, cout, 3, 1, 1), nn.LeakyReLU(0.2))


class ImageGenerator(nn.Module):
    """Four-scale U-shaped encoder/decoder over [agnostic image, pose, one-hot layout, warped clothes]."""

    def __init__(self, widths: Sequence[int] = (16, 32, 48, 64), num_labels: int = NUM_LABELS,
                 composition: bool = True):
        super().__init__()
        self.composition = composition
        if len(widths) != 4:
            raise ArgumentError(f"image generator needs 4 widths, got {widths}")
        self.num_labels = num_labels
        cin = 3 + 3 + num_labels + 3
        self.down = nn.ModuleList()
        for w in widths:
            self.down.append(_block(cin, w))
            cin = w
        self.up = nn.ModuleList()
        for w_skip in reversed(widths[:-1]):
            self.up.append(_block(cin + w_skip, w_skip))
            cin = w_skip
        self.out = nn.Conv2d(cin, 4, 3, 1, 1)

    def forward(self, agnostic_image, pose, layout, warped_clothes) -> TryOnOutputs:
        if layout.dim() == 3:
            layout = one_hot_labels(layout, self.num_labels, agnostic_image.dtype)
        shapes = {tuple(t.shape[-2:]) for t in (agnostic_image, pose, layout, warped_clothes)}
        if len(shapes) != 1:
            raise ArgumentError(f"inputs must share one resolution, got {sorted(shapes)}")
        h, w = agnostic_image.shape[-2:]
        if h % 8 or w % 8:
            raise ArgumentError(f"resolution {h}x{w} is not divisible by 8")
        x = torch.cat([agnostic_image, pose, layout, warped_clothes], 1)
        skips = []
        for i, block in enumerate(self.down):
            x = block(x if i == 0 else F.avg_pool2d(x, 2))
            skips.append(x)
        for block, skip in zip(self.up, reversed(skips[:-1])):
            x = block(torch.cat([F.interpolate(x, scale_factor=2, mode="nearest"), skip], 1))
        y = self.out(x)
        generated = torch.tanh(y[:, :3])
        mask = torch.sigmoid(y[:, 3:])
        if not self.composition:
            # ablation without the mask: the network output is the final image
            mask = torch.zeros_like(mask)
        return TryOnOutputs(generated, mask, compose_tryon(generated, warped_clothes, mask))


class ImageDiscriminator(nn.Module):
    """Patch discriminator over [image, agnostic image, pose]."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(9, width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 3, 1, 1),
        )

    def forward(self, image, agnostic_image, pose):
        return self.net(torch.cat([image, agnostic_image, pose], 1))
