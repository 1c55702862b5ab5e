"""Reflection guided attention.

The glass feature (fused from both streams) and the reflection feature take
turns as the query of two parallel cross-attention branches.  The two raw
attention maps are each shifted by their minimum, multiplied elementwise and
softmax-normalized into one shared map, which then weights the values of both
branches.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

Mode = Literal["shared", "separate", "no_shift", "shift_relu", "serial"]
QueryMode = Literal["alternate", "glass_only", "refle_only"]


class GlassFusion(nn.Module):
    """Fuse the two stream features into one glass feature with a 1x1 conv.

    ``mode="concat"`` concatenates along channels; ``mode="sum"`` adds the two
    features before the conv.
    """

    def __init__(self, channels: int, mode: Literal["concat", "sum"] = "concat"):
        super().__init__()
        if mode not in ("concat", "sum"):
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.channels = channels
        self.mode = mode
        self.conv = nn.Conv2d(2 * channels if mode == "concat" else channels, channels, 1)

    def forward(self, f_no_flash: torch.Tensor, f_flash: torch.Tensor) -> torch.Tensor:
        if f_no_flash.shape != f_flash.shape or f_no_flash.shape[1] != self.channels:
            raise ShapeError(f"cannot fuse {tuple(f_no_flash.shape)} and {tuple(f_flash.shape)}")
        if self.mode == "concat":
            return self.conv(torch.cat([f_no_flash, f_flash], dim=1))
        return self.conv(f_no_flash + f_flash)


def fuse_glass_features(f_no_flash, f_flash, fusion: GlassFusion) -> torch.Tensor:
    return fusion(f_no_flash, f_flash)


def to_tokens(x: torch.Tensor, heads: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, H*W, heads, C/heads)."""
    b, c, h, w = x.shape
    if c % heads:
        raise ShapeError(f"{c} channels not divisible by {heads} heads")
    return x.flatten(2).transpose(1, 2).reshape(b, h * w, heads, c // heads)


def from_tokens(t: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """(B, heads, H*W, d) -> (B, heads*d, H, W)."""
    b, n, hw, d = t.shape
    return t.transpose(1, 2).reshape(b, hw, n * d).transpose(1, 2).reshape(b, n * d, h, w)


class Projection(nn.Module):
    """Query/key/value projections of one attention branch."""

    def __init__(self, channels: int):
        super().__init__()
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)

    def project(self, which: str, tokens: torch.Tensor) -> torch.Tensor:
        # tokens: (B, HW, N, d) -> (B, N, HW, d)
        b, hw, n, d = tokens.shape
        out = getattr(self, which)(tokens.reshape(b, hw, n * d))
        return out.reshape(b, hw, n, d).transpose(1, 2)


def attention_maps(q_refle, k_glass, q_glass, k_refle):
    """Raw (unscaled) per-head attention maps, each (B, N, HW_q, HW_k)."""
    if q_refle.shape[-1] != k_glass.shape[-1] or q_glass.shape[-1] != k_refle.shape[-1]:
        raise ShapeError("query and key head dims differ")
    if q_refle.shape[:-2] != k_glass.shape[:-2] or q_glass.shape[:-2] != k_refle.shape[:-2]:
        raise ShapeError("query and key batch/head dims differ")
    return q_refle @ k_glass.transpose(-1, -2), q_glass @ k_refle.transpose(-1, -2)


def _min_shift(m: torch.Tensor) -> torch.Tensor:
    # minimum over each head's full matrix
    return m - m.amin(dim=(-2, -1), keepdim=True)


def shared_attention(m_refle: torch.Tensor, m_glass: torch.Tensor, mode: Mode = "shared") -> torch.Tensor:
    """Combine the two maps into one row-stochastic map.

    ``shared``     softmax((A - min A) * (B - min B))
    ``no_shift``   softmax(A * B)
    ``shift_relu`` softmax(relu(A) * relu(B))
    """
    if m_refle.shape != m_glass.shape:
        raise ShapeError(f"map shapes differ: {tuple(m_refle.shape)} vs {tuple(m_glass.shape)}")
    if mode == "shared":
        product = _min_shift(m_refle) * _min_shift(m_glass)
    elif mode == "no_shift":
        product = m_refle * m_glass
    elif mode == "shift_relu":
        product = F.relu(m_refle) * F.relu(m_glass)
    else:
        raise ValueError(f"shared_attention has no mode {mode!r}")
    return torch.softmax(product, dim=-1)


@dataclass
class AttentionMaps:
    m_refle: torch.Tensor
    m_glass: torch.Tensor
    m_shared: torch.Tensor


class RGAM(nn.Module):
    """One pyramid level of reflection guided attention.

    Consumes the reflection feature and an already fused glass feature.
    ``pool_stride > 1`` average-pools keys and values spatially to bound the
    memory of the (HW x HW) maps.
    """

    def __init__(self, channels: int, heads: int = 2, mode: Mode = "shared",
                 query: QueryMode = "alternate", pool_stride: int = 1):
        super().__init__()
        if channels % heads:
            raise ShapeError(f"{channels} channels not divisible by {heads} heads")
        if mode not in ("shared", "separate", "no_shift", "shift_relu", "serial"):
            raise ValueError(f"unknown attention mode {mode!r}")
        if query not in ("alternate", "glass_only", "refle_only"):
            raise ValueError(f"unknown query mode {query!r}")
        if mode == "serial" and query != "alternate":
            raise ValueError("serial branch already fixes the query order")
        self.channels = channels
        self.heads = heads
        self.mode = mode
        self.query = query
        self.pool_stride = pool_stride
        d = channels // heads
        self.ln_refle = nn.LayerNorm(d)
        self.ln_glass = nn.LayerNorm(d)
        self.top = Projection(channels)
        self.bottom = Projection(channels)

    def project_qkv(self, x: torch.Tensor, which: str, role: str):
        """Tokens of ``x`` through the ``which`` ("top"/"bottom") projections.

        Returns Q, K, V each of shape (B, N, HW, C/N); K and V are pooled
        when ``pool_stride > 1``.
        """
        ln = self.ln_refle if role == "refle" else self.ln_glass
        proj = self.top if which == "top" else self.bottom
        tokens = ln(to_tokens(x, self.heads))
        q = proj.project("q", tokens)
        if self.pool_stride > 1:
            pooled = F.avg_pool2d(x, self.pool_stride, ceil_mode=True)
            tokens = ln(to_tokens(pooled, self.heads))
        return q, proj.project("k", tokens), proj.project("v", tokens)

    def maps(self, f_refle: torch.Tensor, f_glass: torch.Tensor):
        """Attention maps plus the two value tensors they weight."""
        if self.query == "alternate":
            top_q, top_kv = ("refle", f_refle), ("glass", f_glass)
            bot_q, bot_kv = ("glass", f_glass), ("refle", f_refle)
        elif self.query == "glass_only":
            top_q = bot_q = ("glass", f_glass)
            top_kv = bot_kv = ("refle", f_refle)
        else:
            top_q = bot_q = ("refle", f_refle)
            top_kv = bot_kv = ("glass", f_glass)
        q_t, _, _ = self.project_qkv(top_q[1], "top", top_q[0])
        _, k_t, v_t = self.project_qkv(top_kv[1], "top", top_kv[0])
        q_b, _, _ = self.project_qkv(bot_q[1], "bottom", bot_q[0])
        _, k_b, v_b = self.project_qkv(bot_kv[1], "bottom", bot_kv[0])
        m_refle, m_glass = attention_maps(q_t, k_t, q_b, k_b)
        return m_refle, m_glass, v_t, v_b

    def forward(self, f_refle: torch.Tensor, f_glass: torch.Tensor, return_maps: bool = False):
        if f_refle.shape != f_glass.shape or f_refle.ndim != 4 or f_refle.shape[1] != self.channels:
            raise ShapeError(f"RGAM inputs {tuple(f_refle.shape)} / {tuple(f_glass.shape)}")
        h, w = f_refle.shape[-2:]
        if self.mode == "serial":
            out = self._serial(f_refle, f_glass)
            return (out, None) if return_maps else out
        m_refle, m_glass, v_top, v_bottom = self.maps(f_refle, f_glass)
        if self.mode == "separate":
            out = torch.softmax(m_refle, -1) @ v_top + torch.softmax(m_glass, -1) @ v_bottom
            m_shared = None
        else:
            m_shared = shared_attention(m_refle, m_glass, self.mode)
            out = m_shared @ v_top + m_shared @ v_bottom
        out = from_tokens(out, h, w)
        if return_maps:
            return out, AttentionMaps(m_refle, m_glass, m_shared)
        return out

    def _serial(self, f_refle, f_glass):
        # glass queries reflection first, then reflection queries that result
        h, w = f_refle.shape[-2:]
        q, _, _ = self.project_qkv(f_glass, "bottom", "glass")
        _, k, v = self.project_qkv(f_refle, "bottom", "refle")
        z = from_tokens(torch.softmax(q @ k.transpose(-1, -2), -1) @ v, h, w)
        q, _, _ = self.project_qkv(f_refle, "top", "refle")
        _, k, v = self.project_qkv(z, "top", "glass")
        return from_tokens(torch.softmax(q @ k.transpose(-1, -2), -1) @ v, h, w)


def rgam_forward(f_refle, f_no_flash, f_flash, fusion: GlassFusion, rgam: RGAM) -> torch.Tensor:
    return rgam(f_refle, fusion(f_no_flash, f_flash))


class CBAM(nn.Module):
    """Channel then spatial attention; stands in for RGAM in the ablation."""

    def __init__(self, channels: int, reduction: int = 4, kernel: int = 7):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(nn.Conv2d(channels, hidden, 1), nn.GELU(), nn.Conv2d(hidden, channels, 1))
        self.spatial = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = self.mlp(x.mean(dim=(2, 3), keepdim=True))
        mx = self.mlp(x.amax(dim=(2, 3), keepdim=True))
        x = x * torch.sigmoid(avg + mx)
        s = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.spatial(s))
