"""Full network: dual encoders -> per-level reflection mining and guided
attention -> cascaded decoder.  The ablation mode picks which per-level
blocks exist; parameter names follow ``enc.*``, ``fuse.L{i}``, ``rcmm.L{i}``,
``rgam.L{i}``, ``dec.*``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from .config import ModelConfig
from .decoder import Decoder
from .encoder import NUM_LEVELS, EncoderParams, ToyConvEncoder, check_pyramid, encode_pair
from .errors import ConfigError, ShapeError
from .rcmm import RCMM, unet_depth_for
from .rgam import CBAM, RGAM, GlassFusion


@dataclass
class NetOutput:
    g_side: list
    g_glass: torch.Tensor
    refl: Optional[dict] = None     # {"no_flash": [R_1..R_4], "flash": [...]}
    f_rgam: list = field(default_factory=list)
    rcmm: list = field(default_factory=list)


class ReflectionEncoder(nn.Module):
    """Encodes given reflection images into a pyramid (``rgam_only`` ablation)."""

    def __init__(self, params: EncoderParams):
        super().__init__()
        self.body = ToyConvEncoder(params, in_channels=6)

    def forward(self, r_no_flash, r_flash):
        return self.body(torch.cat([r_no_flash, r_flash], dim=1))


class GlassNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        p = cfg.encoder
        chans = p.level_channels()
        shapes = p.level_shapes(*cfg.input_size)
        depths = [unet_depth_for(min(h, w)) for h, w, _ in shapes]
        if cfg.encoder_variant == "toy_conv":
            self.enc = nn.ModuleDict({"no_flash": ToyConvEncoder(p), "flash": ToyConvEncoder(p)})
        self.fuse = nn.ModuleDict({f"L{i}": GlassFusion(c, cfg.fglass_mode) for i, c in enumerate(chans, 1)})
        if cfg.has_rcmm:
            self.rcmm = nn.ModuleDict({
                f"L{i}": RCMM(c, perm_add=not cfg.no_perm_add, subtract=not cfg.sub_to_add,
                              use_unet=not cfg.no_unet_branch, unet_depth=d)
                for i, (c, d) in enumerate(zip(chans, depths), 1)})
        if cfg.ablation == "dual_unet":
            self.unet = nn.ModuleDict({
                f"L{i}": RCMM(c, use_contrast=False, unet_depth=d)
                for i, (c, d) in enumerate(zip(chans, depths), 1)})
        if cfg.has_rgam:
            self.rgam = nn.ModuleDict({
                f"L{i}": RGAM(c, cfg.heads, cfg.attention_mode, cfg.query_mode, cfg.attn_pool_stride)
                for i, c in enumerate(chans, 1)})
        if cfg.ablation == "rgam_only":
            self.refl_enc = ReflectionEncoder(p)
        if cfg.ablation == "cbam":
            self.cbam = nn.ModuleDict({
                f"L{i}": nn.ModuleDict({"reduce": nn.Conv2d(2 * c, c, 1), "att": CBAM(c)})
                for i, c in enumerate(chans, 1)})
        self.dec = Decoder(chans, cfg.base_stride, cfg.decoder_mode)

    def encode(self, no_flash, flash, pyramids=None):
        if pyramids is not None:
            pyr_nf, pyr_f = pyramids
        elif self.cfg.encoder_variant == "external":
            raise ConfigError("external encoder variant needs precomputed pyramids")
        else:
            pyr_nf, pyr_f = encode_pair(no_flash, flash, self.enc["no_flash"], self.enc["flash"])
        h, w = no_flash.shape[-2:]
        check_pyramid(pyr_nf, self.cfg.encoder, h, w)
        check_pyramid(pyr_f, self.cfg.encoder, h, w)
        return pyr_nf, pyr_f

    def forward(self, no_flash: torch.Tensor, flash: torch.Tensor, pyramids=None,
                reflections=None) -> NetOutput:
        """``no_flash``/``flash`` are (B, 3, H, W) in [0, 1].

        ``reflections`` (pair of (B, 3, H, W) tensors) is only consumed by the
        ``rgam_only`` ablation.
        """
        if no_flash.shape != flash.shape:
            raise ShapeError(f"pair shapes differ: {tuple(no_flash.shape)} vs {tuple(flash.shape)}")
        cfg = self.cfg
        pyr_nf, pyr_f = self.encode(no_flash, flash, pyramids)
        refl_pyr = None
        if cfg.ablation == "rgam_only":
            if reflections is None:
                raise ConfigError("rgam_only needs reflection images at forward time")
            refl_pyr = self.refl_enc(*reflections)

        fused, rc_outs = [], []
        for i in range(NUM_LEVELS):
            key = f"L{i + 1}"
            f_nf, f_f = pyr_nf[i], pyr_f[i]
            f_glass = self.fuse[key](f_nf, f_f)
            rc = None
            if cfg.has_rcmm:
                rc = self.rcmm[key](f_nf, f_f)
            elif cfg.ablation == "dual_unet":
                rc = self.unet[key](f_nf, f_f)
            if rc is not None:
                rc_outs.append(rc)

            if cfg.ablation == "base":
                x = f_glass
            elif cfg.ablation == "rcmm_only":
                x = f_glass + rc.f_refle
            elif cfg.ablation == "cbam":
                blk = self.cbam[key]
                x = blk["att"](blk["reduce"](torch.cat([f_glass, rc.f_refle], dim=1)))
            elif cfg.ablation == "rgam_only":
                x = self.rgam[key](refl_pyr[i], f_glass)
            else:
                x = self.rgam[key](rc.f_refle, f_glass)
            fused.append(x)

        dec = self.dec(fused)
        refl = None
        if rc_outs:
            refl = {"no_flash": [r.r_no_flash for r in rc_outs], "flash": [r.r_flash for r in rc_outs]}
        return NetOutput(dec.g_side, dec.g_glass, refl, fused, rc_outs)


def build_model(cfg: ModelConfig, seed: Optional[int] = None) -> GlassNet:
    if seed is not None:
        torch.manual_seed(seed)
    return GlassNet(cfg)


def param_prefixes(model: nn.Module) -> set[str]:
    return {name.split(".", 1)[0] for name, _ in model.named_parameters()}
