"""Finite-difference gradient checks on double-precision micro-instances.

Each check builds a tiny module, reduces its outputs to a scalar with fixed
random weights, and compares autograd against central differences over every
parameter and input element.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import torch
import torch.nn as nn

from .decoder import Decoder
from .loss import LossConfig, glass_loss, reflection_loss
from .rcmm import RCMM
from .rgam import RGAM

MODULES = ("rcmm", "rgam", "decoder", "loss")
EPS = 1e-4
# denominators below this are treated as this; keeps near-zero gradients from
# turning round-off into huge ratios
REL_FLOOR = 1e-6


@dataclass
class GradcheckReport:
    module: str
    seed: int
    max_rel_err: float
    worst: str
    n_checked: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _scalarize(outputs, gen: torch.Generator) -> Callable:
    weights = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in outputs]

    def reduce(outs):
        return sum((o * w).sum() for o, w in zip(outs, weights))

    return reduce


def check(fn: Callable[[], list], tensors: dict, gen: torch.Generator, eps: float = EPS):
    """Compare analytic and numeric gradients of ``fn`` w.r.t. ``tensors``.

    ``fn`` returns a list of output tensors; ``tensors`` maps names to leaf
    tensors with ``requires_grad``.  Returns ``(max_rel_err, worst, count)``.
    """
    reduce = _scalarize(fn(), gen)
    for t in tensors.values():
        t.grad = None
    reduce(fn()).backward()
    analytic = {k: t.grad.detach().clone() for k, t in tensors.items()}

    worst, worst_name, count = 0.0, "", 0
    with torch.no_grad():
        for name, t in tensors.items():
            flat = t.view(-1)
            a_flat = analytic[name].view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + eps
                up = reduce(fn()).item()
                flat[j] = orig - eps
                down = reduce(fn()).item()
                flat[j] = orig
                num = (up - down) / (2 * eps)
                a = a_flat[j].item()
                err = abs(a - num) / max(abs(a), abs(num), REL_FLOOR)
                count += 1
                if err > worst:
                    worst, worst_name = err, f"{name}[{j}]"
    return worst, worst_name, count


def _leaves(module: nn.Module, inputs: dict) -> dict:
    tensors = {f"param:{k}": p for k, p in module.named_parameters()}
    tensors.update({f"input:{k}": v.requires_grad_(True) for k, v in inputs.items()})
    return tensors


def _rcmm(gen):
    m = RCMM(4, unet_depth=2).double()
    x = {"no_flash": torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64),
         "flash": torch.randn(1, 4, 4, 4, generator=gen, dtype=torch.float64)}
    # give the zero-initialized contrast bias a value so its gradient is generic
    with torch.no_grad():
        m.contrast.reduce.bias.normal_(generator=gen)

    def fn():
        out = m(x["no_flash"], x["flash"])
        return [out.f_refle, out.r_no_flash, out.r_flash]

    return fn, _leaves(m, x)


def _rgam(gen):
    m = RGAM(4, heads=1).double()
    # 1 x 2 map: two tokens
    x = {"f_refle": torch.randn(1, 4, 1, 2, generator=gen, dtype=torch.float64),
         "f_glass": torch.randn(1, 4, 1, 2, generator=gen, dtype=torch.float64)}
    return (lambda: [m(x["f_refle"], x["f_glass"])]), _leaves(m, x)


def _decoder(gen):
    chans = [2, 4, 4, 8]
    m = Decoder(chans, base_stride=2).double()
    x = {f"F{i}": torch.randn(1, c, 8 // 2 ** (i - 1), 8 // 2 ** (i - 1), generator=gen, dtype=torch.float64)
         for i, c in enumerate(chans, 1)}

    def fn():
        out = m([x[f"F{i}"] for i in range(1, 5)])
        return [*out.g_side, out.g_glass]

    return fn, _leaves(m, x)


def _loss(gen):
    cfg = LossConfig(ssim_window=3)
    # predictions kept away from 0/1 so the BCE clamp is inactive
    x = {"g": (0.1 + 0.8 * torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64)),
         "r": (0.1 + 0.8 * torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64)),
         "r_hat": (0.1 + 0.8 * torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64))}
    g_hat = (torch.rand(1, 1, 4, 4, generator=gen, dtype=torch.float64) > 0.5).double()

    def fn():
        return [glass_loss(x["g"], g_hat, cfg) + reflection_loss(x["r"], x["r_hat"], cfg)]

    tensors = {f"input:{k}": v.requires_grad_(True) for k, v in x.items()}
    return fn, tensors


_BUILDERS = {"rcmm": _rcmm, "rgam": _rgam, "decoder": _decoder, "loss": _loss}


def gradcheck(module: str, seed: int = 0) -> GradcheckReport:
    if module not in _BUILDERS:
        raise ValueError(f"module must be one of {MODULES}, got {module!r}")
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    fn, tensors = _BUILDERS[module](gen)
    err, worst, count = check(fn, tensors, gen)
    return GradcheckReport(module, seed, err, worst, count, time.perf_counter() - t0)
