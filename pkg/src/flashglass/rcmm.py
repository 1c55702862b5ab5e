"""Reflection contrast mining.

Per pyramid level, each stream goes through a bank of dilated 3x3 convs
(rates 1, 2, 4, 8).  Bank outputs are summed pairwise, the flash/no-flash
difference of every pair is concatenated (the contrast branch), and the result
gates two per-stream U-shaped refinement branches.  Two 1x1 heads turn the
gated stream features into reflection images.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

DILATION_RATES = (1, 2, 4, 8)
# lexicographic in (ri, rj): (1,2), (1,4), (1,8), (2,4), (2,8), (4,8)
RATE_PAIRS = tuple(combinations(DILATION_RATES, 2))
STREAMS = ("no_flash", "flash")


@dataclass
class RcmmOutput:
    f_refle: torch.Tensor
    r_no_flash: torch.Tensor
    r_flash: torch.Tensor
    f_refle_no_flash: Optional[torch.Tensor] = None
    f_refle_flash: Optional[torch.Tensor] = None
    f_cb: Optional[torch.Tensor] = None


def _check_level(x: torch.Tensor, channels: int) -> None:
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"expected N x {channels} x H x W, got {tuple(x.shape)}")


class DilatedBank(nn.Module):
    def __init__(self, channels: int, rates: Sequence[int] = DILATION_RATES):
        super().__init__()
        self.channels = channels
        self.rates = tuple(rates)
        self.convs = nn.ModuleDict({
            f"r{r}": nn.Conv2d(channels, channels, 3, padding=r, dilation=r) for r in self.rates})

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        _check_level(x, self.channels)
        return {r: self.convs[f"r{r}"](x) for r in self.rates}


def dilated_bank(x: torch.Tensor, bank: DilatedBank) -> dict[int, torch.Tensor]:
    return bank(x)


def pairwise_fuse(df: dict[int, torch.Tensor]) -> list[torch.Tensor]:
    """Sum every unordered pair of bank outputs, in canonical pair order."""
    return [df[a] + df[b] for a, b in RATE_PAIRS]


class ContrastBranch(nn.Module):
    """Concatenate per-pair flash minus no-flash differences and reduce with a 1x1 conv."""

    def __init__(self, channels: int, n_terms: int = len(RATE_PAIRS), subtract: bool = True):
        super().__init__()
        self.channels = channels
        self.n_terms = n_terms
        self.subtract = subtract
        self.reduce = nn.Conv2d(n_terms * channels, channels, 1)
        nn.init.zeros_(self.reduce.bias)

    def concat(self, rf_flash: Sequence[torch.Tensor], rf_no_flash: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(rf_flash) != self.n_terms or len(rf_no_flash) != self.n_terms:
            raise ShapeError(f"expected {self.n_terms} terms per stream")
        diffs = []
        for a, b in zip(rf_flash, rf_no_flash):
            if a.shape != b.shape:
                raise ShapeError(f"term shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
            diffs.append(a - b if self.subtract else a + b)
        return torch.cat(diffs, dim=1)

    def forward(self, rf_flash, rf_no_flash) -> torch.Tensor:
        return self.reduce(self.concat(rf_flash, rf_no_flash))


def contrast_branch(rf_flash, rf_no_flash, branch: ContrastBranch) -> torch.Tensor:
    return branch(rf_flash, rf_no_flash)


def _conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1), nn.GELU())


class UBranch(nn.Module):
    """U-net with ``depth`` stride-2 downsamplings and skip connections.

    Preserves the input shape.  Needs spatial size >= ``2 ** depth``.
    """

    def __init__(self, channels: int, depth: int = 2):
        super().__init__()
        if depth < 0:
            raise ValueError("depth must be >= 0")
        c = channels
        self.channels = c
        self.depth = depth
        self.enc0 = _conv_block(c, c)
        widths = [c * 2 ** k for k in range(depth + 1)]
        self.downs = nn.ModuleList(_conv_block(widths[k], widths[k + 1], stride=2) for k in range(depth))
        self.ups = nn.ModuleList(_conv_block(widths[k + 1] + widths[k], widths[k]) for k in range(depth))

    @property
    def min_size(self) -> int:
        return 2 ** self.depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_level(x, self.channels)
        if min(x.shape[-2:]) < self.min_size:
            raise ShapeError(f"U-branch of depth {self.depth} needs spatial size >= {self.min_size}, "
                             f"got {tuple(x.shape[-2:])}")
        skips = [self.enc0(x)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        y = skips.pop()
        for k in range(self.depth - 1, -1, -1):
            skip = skips.pop()
            y = F.interpolate(y, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            y = self.ups[k](torch.cat([y, skip], dim=1))
        return y


def unet_depth_for(size: int, max_depth: int = 2) -> int:
    """Deepest U-branch that fits a level whose smaller side is ``size``."""
    depth = 0
    while depth < max_depth and 2 ** (depth + 1) <= size:
        depth += 1
    return depth


def u_branch(x: torch.Tensor, branch: UBranch) -> torch.Tensor:
    return branch(x)


class RCMM(nn.Module):
    """One pyramid level of reflection contrast mining.

    Ablation switches: ``perm_add=False`` feeds the four bank outputs to the
    contrast branch directly, ``subtract=False`` adds instead of subtracting,
    ``use_contrast=False`` drops the contrast branch (plain dual U-net) and
    ``use_unet=False`` drops the U-branches.
    """

    def __init__(self, channels: int, perm_add: bool = True, subtract: bool = True,
                 use_contrast: bool = True, use_unet: bool = True, unet_depth: int = 2):
        super().__init__()
        if not (use_contrast or use_unet):
            raise ValueError("RCMM needs at least one of the contrast and U-net branches")
        self.channels = channels
        self.perm_add = perm_add
        self.use_contrast = use_contrast
        self.use_unet = use_unet
        if use_contrast:
            self.bank = nn.ModuleDict({s: DilatedBank(channels) for s in STREAMS})
            n_terms = len(RATE_PAIRS) if perm_add else len(DILATION_RATES)
            self.contrast = ContrastBranch(channels, n_terms, subtract)
        if use_unet:
            self.unet = nn.ModuleDict({s: UBranch(channels, unet_depth) for s in STREAMS})
        self.head = nn.ModuleDict({s: nn.Conv2d(channels, 3, 1) for s in STREAMS})

    def contrast_features(self, f_no_flash: torch.Tensor, f_flash: torch.Tensor) -> torch.Tensor:
        df_f = self.bank["flash"](f_flash)
        df_nf = self.bank["no_flash"](f_no_flash)
        if self.perm_add:
            terms_f, terms_nf = pairwise_fuse(df_f), pairwise_fuse(df_nf)
        else:
            terms_f = [df_f[r] for r in DILATION_RATES]
            terms_nf = [df_nf[r] for r in DILATION_RATES]
        return self.contrast(terms_f, terms_nf)

    def forward(self, f_no_flash: torch.Tensor, f_flash: torch.Tensor) -> RcmmOutput:
        _check_level(f_no_flash, self.channels)
        _check_level(f_flash, self.channels)
        if f_no_flash.shape != f_flash.shape:
            raise ShapeError("stream features differ in shape")
        f_cb = self.contrast_features(f_no_flash, f_flash) if self.use_contrast else None
        if self.use_unet:
            ub_f = self.unet["flash"](f_flash)
            ub_nf = self.unet["no_flash"](f_no_flash)
            if f_cb is not None:
                ref_f, ref_nf = f_cb * ub_f, f_cb * ub_nf
            else:
                ref_f, ref_nf = ub_f, ub_nf
        else:
            ref_f = ref_nf = f_cb
        f_refle = ref_nf + ref_f
        r_f = torch.sigmoid(self.head["flash"](ref_f))
        r_nf = torch.sigmoid(self.head["no_flash"](ref_nf))
        return RcmmOutput(f_refle, r_nf, r_f, ref_nf, ref_f, f_cb)


def rcmm_forward(f_no_flash, f_flash, module: RCMM) -> RcmmOutput:
    return module(f_no_flash, f_flash)
