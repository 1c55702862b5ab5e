"""Cascaded top-down decoder with per-level side masks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import NUM_LEVELS
from .errors import ShapeError


@dataclass
class DecoderOutput:
    d: list          # D_1..D_4
    g_side: list     # G_1..G_4, probabilities at each level's resolution
    g_glass: torch.Tensor


class Decoder(nn.Module):
    """``D_4 = F_4``; ``D_i = conv3x3(cat(up2(D_{i+1}), F_i))``; sigmoid side heads.

    ``mode="paper_literal"`` passes ``F_4`` through an explicit same-size
    resize before use; numerically this matches the default.
    """

    def __init__(self, channels: Sequence[int], base_stride: int,
                 mode: Literal["default", "paper_literal"] = "default"):
        super().__init__()
        if len(channels) != NUM_LEVELS:
            raise ValueError(f"need {NUM_LEVELS} level channel counts")
        if mode not in ("default", "paper_literal"):
            raise ValueError(f"unknown decoder mode {mode!r}")
        self.channels = list(channels)
        self.base_stride = base_stride
        self.mode = mode
        self.L = nn.ModuleDict()
        for i in range(1, NUM_LEVELS + 1):
            c = self.channels[i - 1]
            layer = nn.ModuleDict({"side": nn.Conv2d(c, 1, 1)})
            if i < NUM_LEVELS:
                layer["conv"] = nn.Sequential(
                    nn.Conv2d(self.channels[i] + c, c, 3, padding=1), nn.GELU())
            self.L[f"L{i}"] = layer
        self.final = nn.Conv2d(self.channels[0], 1, 3, padding=1)

    def forward(self, f_rgam: Sequence[torch.Tensor]) -> DecoderOutput:
        if len(f_rgam) != NUM_LEVELS:
            raise ShapeError(f"expected {NUM_LEVELS} levels, got {len(f_rgam)}")
        for i, (t, c) in enumerate(zip(f_rgam, self.channels), start=1):
            if t.ndim != 4 or t.shape[1] != c:
                raise ShapeError(f"level {i}: expected {c} channels, got {tuple(t.shape)}")
        for i in range(1, NUM_LEVELS):
            hi, lo = f_rgam[i - 1].shape[-2:], f_rgam[i].shape[-2:]
            if (hi[0], hi[1]) != (2 * lo[0], 2 * lo[1]):
                raise ShapeError(f"level {i} is {tuple(hi)}, level {i + 1} is {tuple(lo)}")

        top = f_rgam[-1]
        if self.mode == "paper_literal":
            top = F.interpolate(top, size=top.shape[-2:], mode="bilinear", align_corners=False)
        d = [None] * NUM_LEVELS
        d[-1] = top
        for i in range(NUM_LEVELS - 1, 0, -1):
            up = F.interpolate(d[i], scale_factor=2, mode="bilinear", align_corners=False)
            d[i - 1] = self.L[f"L{i}"]["conv"](torch.cat([up, f_rgam[i - 1]], dim=1))
        g_side = [torch.sigmoid(self.L[f"L{i + 1}"]["side"](d[i])) for i in range(NUM_LEVELS)]
        d1 = d[0]
        if self.base_stride > 1:
            d1 = F.interpolate(d1, scale_factor=self.base_stride, mode="bilinear", align_corners=False)
        g_glass = torch.sigmoid(self.final(d1))
        return DecoderOutput(d, g_side, g_glass)


def decode(f_rgam, decoder: Decoder) -> DecoderOutput:
    return decoder(f_rgam)
