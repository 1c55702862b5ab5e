"""Dual hierarchical encoders producing 4-level feature pyramids.

Level ``i`` (1-based) has spatial size ``H / (s0 * 2**(i-1))`` and
``C * 2**(i-1)`` channels.  Tensors are NCHW.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import torch
import torch.nn as nn

from .errors import ConfigMismatch, ShapeError

NUM_LEVELS = 4

FeaturePyramid = list  # list of 4 NCHW tensors


@dataclass(frozen=True)
class EncoderParams:
    base_channels: int = 16
    base_stride: int = 4
    variant: Literal["toy_conv", "external"] = "toy_conv"

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.base_stride not in (1, 2, 4):
            raise ValueError("base_stride must be 1, 2 or 4")
        if self.variant not in ("toy_conv", "external"):
            raise ValueError(f"unknown encoder variant {self.variant!r}")

    def level_channels(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(NUM_LEVELS)]

    def level_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        """(h, w, c) of every level for an ``h x w`` input."""
        check_divisible(h, w, self.base_stride)
        out = []
        for i, c in enumerate(self.level_channels()):
            f = self.base_stride * 2 ** i
            out.append((h // f, w // f, c))
        return out


def check_divisible(h: int, w: int, base_stride: int) -> None:
    div = base_stride * 2 ** (NUM_LEVELS - 1)
    if h % div or w % div:
        raise ShapeError(f"input {h}x{w} not divisible by {div} (base stride {base_stride})")


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(1, channels)


class ToyConvEncoder(nn.Module):
    """Per level: one strided conv, group norm, GELU."""

    def __init__(self, params: EncoderParams = EncoderParams(), in_channels: int = 3):
        super().__init__()
        self.params = params
        chans = params.level_channels()
        s0 = params.base_stride
        if s0 == 4:
            first = nn.Conv2d(in_channels, chans[0], kernel_size=4, stride=4)
        else:
            first = nn.Conv2d(in_channels, chans[0], kernel_size=3, stride=s0, padding=1)
        stages = [nn.Sequential(first, _norm(chans[0]), nn.GELU())]
        for cin, cout in zip(chans[:-1], chans[1:]):
            stages.append(nn.Sequential(
                nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1), _norm(cout), nn.GELU()))
        self.stages = nn.ModuleList(stages)

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        check_divisible(image.shape[-2], image.shape[-1], self.params.base_stride)
        levels = []
        x = image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return levels


def encode(image: torch.Tensor, encoder: ToyConvEncoder) -> FeaturePyramid:
    return encoder(image)


def encode_pair(no_flash: torch.Tensor, flash: torch.Tensor,
                enc_no_flash: ToyConvEncoder, enc_flash: ToyConvEncoder):
    """Encode both shots.  Passing the same module twice ties the weights."""
    a, b = enc_no_flash.params, enc_flash.params
    if (a.base_channels, a.base_stride) != (b.base_channels, b.base_stride):
        raise ConfigMismatch(f"encoder configs differ: {a} vs {b}")
    if no_flash.shape != flash.shape:
        raise ShapeError(f"pair shapes differ: {tuple(no_flash.shape)} vs {tuple(flash.shape)}")
    return enc_no_flash(no_flash), enc_flash(flash)


def check_pyramid(levels: Sequence[torch.Tensor], params: EncoderParams, h: int, w: int) -> None:
    """Raise ShapeError unless ``levels`` obeys the shape law for an h x w input."""
    if len(levels) != NUM_LEVELS:
        raise ShapeError(f"expected {NUM_LEVELS} levels, got {len(levels)}")
    for i, (t, (lh, lw, lc)) in enumerate(zip(levels, params.level_shapes(h, w)), start=1):
        if tuple(t.shape[1:]) != (lc, lh, lw):
            raise ShapeError(f"level {i}: got {tuple(t.shape[1:])}, expected {(lc, lh, lw)}")
