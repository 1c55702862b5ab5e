"""Training loop, evaluation and single-pair inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt_io
from .config import ModelConfig
from .core import DatasetSplit, GlassMask, ImagePair, Sample, apply_augment, draw_augment, resize_sample
from .errors import DataError, DimensionMismatch, EmptyDataset, MissingFile
from .loss import format_breakdown, make_targets, total_loss
from .metrics import MetricReport, aggregate, compute_metrics
from .model import GlassNet, build_model

log = logging.getLogger("flashglass.train")


def to_tensor(a: np.ndarray) -> torch.Tensor:
    """(H, W, C) array -> (1, C, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32)).permute(2, 0, 1)[None].contiguous()


def batch_tensors(samples: list[Sample], need_refl: bool):
    nf = torch.cat([to_tensor(s.pair.no_flash) for s in samples])
    fl = torch.cat([to_tensor(s.pair.flash) for s in samples])
    mask = torch.cat([to_tensor(s.mask.values) for s in samples])
    r_nf = r_f = None
    if need_refl:
        r_nf = torch.cat([to_tensor(s.refl_no_flash) for s in samples])
        r_f = torch.cat([to_tensor(s.refl_flash) for s in samples])
    return nf, fl, mask, r_nf, r_f


def needs_reflections(cfg: ModelConfig) -> bool:
    return cfg.predicts_reflections or cfg.ablation == "rgam_only"


def load_split(data_root, split: str, cfg: ModelConfig) -> list[Sample]:
    try:
        ds = DatasetSplit.open(data_root, split)
    except MissingFile as exc:
        raise DataError(str(exc)) from exc
    return [resize_sample(s, cfg.input_size) for s in ds]


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    losses: list = field(default_factory=list)
    model: Optional[GlassNet] = None


def make_optimizer(model: torch.nn.Module, cfg: ModelConfig) -> torch.optim.Optimizer:
    o = cfg.optimizer
    return torch.optim.AdamW(model.parameters(), lr=o.lr, betas=(o.beta1, o.beta2),
                             weight_decay=o.weight_decay)


def train(cfg: ModelConfig, data_root, out_dir=None, seed: int = 0,
          samples: Optional[list[Sample]] = None, log_every: int = 1) -> TrainResult:
    """Train on ``data_root/train`` (or on ``samples`` when given).

    Writes ``last.nfgl`` after every epoch, ``final.nfgl`` and ``train.log``
    to ``out_dir`` when it is set.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    if samples is None:
        samples = load_split(data_root, "train", cfg)
    else:
        samples = [resize_sample(s, cfg.input_size) for s in samples]
    if not samples:
        raise EmptyDataset("training split is empty")
    need_refl = needs_reflections(cfg)
    if need_refl and not all(s.has_reflections for s in samples):
        raise DataError("this configuration needs reflection targets; run `pseudogt` on the dataset first")

    out = Path(out_dir) if out_dir is not None else None
    handler = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out / "train.log", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
        prev_level = log.level
        log.setLevel(logging.INFO)

    model = build_model(cfg, seed)
    model.train()
    opt = make_optimizer(model, cfg)
    o = cfg.optimizer
    step = 0
    losses = []
    try:
        for epoch in range(o.epochs):
            order = rng.permutation(len(samples))
            for start in range(0, len(order), o.batch):
                if o.max_steps and step >= o.max_steps:
                    break
                batch = []
                for idx in order[start:start + o.batch]:
                    s = samples[idx]
                    batch.append(apply_augment(s, draw_augment(rng, s.size, cfg.augment)))
                nf, fl, mask, r_nf, r_f = batch_tensors(batch, need_refl)
                outputs = model(nf, fl, reflections=(r_nf, r_f) if cfg.ablation == "rgam_only" else None)
                targets = make_targets(mask, cfg.base_stride, r_nf, r_f)
                loss, parts = total_loss(outputs, targets, cfg.loss)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                step += 1
                losses.append(loss.item())
                if log_every and step % log_every == 0:
                    log.info(format_breakdown(step, loss, parts, epoch=epoch))
            if out is not None:
                ckpt_io.save_model(out / "last.nfgl", model, cfg, step)
            if o.max_steps and step >= o.max_steps:
                break
        ck = ckpt_io.from_model(model, cfg, step)
        if out is not None:
            ckpt_io.save(out / "final.nfgl", ck)
    finally:
        if handler is not None:
            log.removeHandler(handler)
            log.setLevel(prev_level)
            handler.close()
    return TrainResult(ck, losses, model)


@torch.no_grad()
def predict(model: GlassNet, pair: ImagePair, reflections=None):
    """Glass probability map (H, W) at the pair's own resolution, plus the
    per-level reflection predictions (or None)."""
    cfg = model.cfg
    was_training = model.training
    model.eval()
    h, w = pair.size
    s = resize_sample(
        Sample(pair, _dummy_mask(h, w), *(reflections if reflections is not None else (None, None))),
        cfg.input_size)
    nf, fl = to_tensor(s.pair.no_flash), to_tensor(s.pair.flash)
    refl_in = None
    if cfg.ablation == "rgam_only":
        if not s.has_reflections:
            raise DataError("rgam_only inference needs reflection images")
        refl_in = (to_tensor(s.refl_no_flash), to_tensor(s.refl_flash))
    out = model(nf, fl, reflections=refl_in)
    g = out.g_glass
    if g.shape[-2:] != (h, w):
        g = F.interpolate(g, size=(h, w), mode="bilinear", align_corners=False)
    model.train(was_training)
    return g[0, 0].clamp(0, 1).numpy(), out.refl


def _dummy_mask(h, w):
    return GlassMask(np.zeros((h, w, 1), dtype=np.float32), "binary")


def evaluate(model: GlassNet, data_root=None, split: str = "test",
             samples: Optional[list[Sample]] = None, threshold: float = 0.5) -> MetricReport:
    if samples is None:
        samples = list(DatasetSplit.open(data_root, split))
    if not samples:
        raise EmptyDataset(f"split {split!r} is empty")
    entries = []
    for s in samples:
        refl = (s.refl_no_flash, s.refl_flash) if s.has_reflections else None
        prob, _ = predict(model, s.pair, refl)
        entries.append(compute_metrics(prob, s.mask.values[..., 0], threshold))
    return aggregate(entries)


def check_pair(no_flash: np.ndarray, flash: np.ndarray) -> None:
    if no_flash.shape[:2] != flash.shape[:2]:
        raise DimensionMismatch(f"no-flash {no_flash.shape[:2]} vs flash {flash.shape[:2]}")
