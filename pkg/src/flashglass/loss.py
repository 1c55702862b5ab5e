"""Training objective: deeply supervised glass loss plus weighted reflection loss.

    total = sum_i [ glass(G_i, Gt_i) + lam * sum_j refle(R_i^j, Rt_i^j) ]
            + final_weight * glass(G_glass, Gt)

with ``glass = soft-IoU + BCE`` and ``refle = 1 - SSIM + L1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F

from .errors import MissingTarget, ShapeError

STREAMS = ("no_flash", "flash")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.8
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    bce_eps: float = 1e-7
    # weight of the full-resolution output mask term
    final_weight: float = 1.0
    use_glass: bool = True
    use_refle_flash: bool = True
    use_refle_no_flash: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")
        if not 0 < self.bce_eps < 1e-3:
            raise ValueError("bce_eps must lie in (0, 1e-3)")
        if self.final_weight < 0:
            raise ValueError("final_weight must be >= 0")


def _batched(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ShapeError(f"expected a 2-4 dim map, got shape {tuple(x.shape)}")


def gaussian_window(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-coords ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).to(dtype)


def fit_window(window: int, h: int, w: int) -> int:
    """Largest odd window <= ``window`` that fits an ``h x w`` map."""
    k = min(window, h, w)
    return k if k % 2 else k - 1


def ssim(x: torch.Tensor, y: torch.Tensor, window: int = 11, sigma: float = 1.5,
         c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> torch.Tensor:
    """Mean local SSIM over a Gaussian window (valid positions only).

    Accepts (H, W), (C, H, W) or (N, C, H, W) tensors in [0, 1].
    """
    if x.shape != y.shape:
        raise ShapeError(f"ssim shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    x, y = _batched(x), _batched(y)
    c = x.shape[1]
    if window > min(x.shape[-2:]):
        raise ShapeError(f"window {window} larger than map {tuple(x.shape[-2:])}")
    k = gaussian_window(window, sigma, x.dtype).to(x.device).expand(c, 1, window, window)

    def filt(t):
        return F.conv2d(t, k, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    s_x = filt(x * x) - mu_x * mu_x
    s_y = filt(y * y) - mu_y * mu_y
    s_xy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * s_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (s_x + s_y + c2)
    return (num / den).mean()


def reflection_loss(r: torch.Tensor, r_hat: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    if r.shape != r_hat.shape:
        raise ShapeError(f"reflection shapes differ: {tuple(r.shape)} vs {tuple(r_hat.shape)}")
    h, w = r.shape[-2:]
    k = fit_window(cfg.ssim_window, h, w)
    s = ssim(r, r_hat, k, cfg.ssim_sigma, cfg.ssim_c1, cfg.ssim_c2)
    return 1.0 - s + (r - r_hat).abs().mean()


def soft_iou_term(g: torch.Tensor, g_hat: torch.Tensor) -> torch.Tensor:
    """Per-sample ``1 - sum(g*gt) / sum(g + gt - g*gt)``, averaged over the batch.

    An empty union counts as perfect agreement (term 0).
    """
    g, g_hat = _batched(g), _batched(g_hat)
    inter = (g * g_hat).flatten(1).sum(1)
    union = (g + g_hat - g * g_hat).flatten(1).sum(1)
    empty = union <= 0
    ratio = inter / torch.where(empty, torch.ones_like(union), union)
    return torch.where(empty, torch.zeros_like(ratio), 1.0 - ratio).mean()


def bce_term(g: torch.Tensor, g_hat: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    gc = g.clamp(eps, 1.0 - eps)
    return -(g_hat * torch.log(gc) + (1.0 - g_hat) * torch.log(1.0 - gc)).mean()


def glass_loss(g: torch.Tensor, g_hat: torch.Tensor, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    if g.shape != g_hat.shape:
        raise ShapeError(f"glass shapes differ: {tuple(g.shape)} vs {tuple(g_hat.shape)}")
    return soft_iou_term(g, g_hat) + bce_term(g, g_hat, cfg.bce_eps)


@dataclass
class SupervisionTargets:
    glass: list                            # Gt_1..Gt_4, binary, level resolution
    glass_full: torch.Tensor               # full-resolution binary mask
    refl: Optional[dict] = None            # {"no_flash": [4], "flash": [4]}


def level_sizes(h: int, w: int, base_stride: int, levels: int = 4) -> list[tuple[int, int]]:
    return [(h // (base_stride * 2 ** i), w // (base_stride * 2 ** i)) for i in range(levels)]


def downsample_mask(mask: torch.Tensor, size) -> torch.Tensor:
    """Area interpolation, then re-binarize at 0.5."""
    return (F.interpolate(mask, size=size, mode="area") >= 0.5).to(mask.dtype)


def make_targets(mask: torch.Tensor, base_stride: int, refl_no_flash: Optional[torch.Tensor] = None,
                 refl_flash: Optional[torch.Tensor] = None) -> SupervisionTargets:
    """Build per-level targets from full-resolution NCHW tensors."""
    sizes = level_sizes(mask.shape[-2], mask.shape[-1], base_stride)
    glass = [downsample_mask(mask, s) for s in sizes]
    refl = None
    if refl_no_flash is not None and refl_flash is not None:
        refl = {
            "no_flash": [F.interpolate(refl_no_flash, size=s, mode="area") for s in sizes],
            "flash": [F.interpolate(refl_flash, size=s, mode="area") for s in sizes],
        }
    return SupervisionTargets(glass, mask, refl)


def combine(glass_terms: Sequence, refle_terms: dict, lam: float, final=None, final_weight: float = 1.0):
    """``sum_i (glass_i + lam * sum_j refle_j_i) + final_weight * final``."""
    total = 0.0
    for i, g in enumerate(glass_terms):
        total = total + g + lam * sum(terms[i] for terms in refle_terms.values())
    if final is not None:
        total = total + final_weight * final
    return total


def total_loss(outputs, targets: SupervisionTargets, cfg: LossConfig = LossConfig()):
    """Return ``(total, breakdown)``.

    ``outputs`` needs ``g_side`` (4 maps), ``g_glass`` and ``refl`` (dict of
    per-stream lists, or None when the model predicts no reflections).  The
    breakdown holds the 4 glass and 8 reflection terms plus ``glass_final``.
    """
    g_side = list(outputs.g_side)
    if len(g_side) != 4 or len(targets.glass) != 4:
        raise ShapeError("total_loss needs 4 levels of side outputs and targets")
    zero = g_side[0].new_zeros(())
    breakdown = {}
    glass_terms = []
    for i, (g, gt) in enumerate(zip(g_side, targets.glass), start=1):
        term = glass_loss(g, gt, cfg) if cfg.use_glass else zero
        breakdown[f"glass_L{i}"] = term
        glass_terms.append(term)

    refle_terms = {}
    enabled = {"no_flash": cfg.use_refle_no_flash, "flash": cfg.use_refle_flash}
    for stream in STREAMS:
        terms = []
        for i in range(4):
            if outputs.refl is None or not enabled[stream]:
                term = zero
            else:
                if targets.refl is None:
                    raise MissingTarget("model predicts reflections but no reflection targets were given")
                term = reflection_loss(outputs.refl[stream][i], targets.refl[stream][i], cfg)
            breakdown[f"refle_{stream}_L{i + 1}"] = term
            terms.append(term)
        refle_terms[stream] = terms

    final = glass_loss(outputs.g_glass, targets.glass_full, cfg) if cfg.use_glass else zero
    breakdown["glass_final"] = final
    total = combine(glass_terms, refle_terms, cfg.lam, final, cfg.final_weight)
    return total, breakdown


def _scalar(v) -> float:
    return v.detach().item() if isinstance(v, torch.Tensor) else float(v)


def format_breakdown(step: int, total, breakdown: dict, **extra) -> str:
    """One ``key=value`` log line."""
    parts = [f"step={step}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    parts.append(f"total={_scalar(total):.6g}")
    parts += [f"{k}={_scalar(v):.6g}" for k, v in breakdown.items()]
    return " ".join(parts)
