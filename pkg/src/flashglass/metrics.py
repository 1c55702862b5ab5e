"""Glass detection metrics and dataset statistics.

IoU, F-beta, BER and ACC come from integer confusion counts of the
binarized prediction; MAE uses the raw probability map.  Aggregation pools
the counts over the dataset and averages MAE per image.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import DatasetSplit, _resize_bilinear
from .errors import EmptyDataset, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    n_tp: int = 0
    n_tn: int = 0
    n_fp: int = 0
    n_fn: int = 0

    @property
    def n_p(self) -> int:
        return self.n_tp + self.n_fn

    @property
    def n_n(self) -> int:
        return self.n_tn + self.n_fp

    @property
    def total(self) -> int:
        return self.n_tp + self.n_tn + self.n_fp + self.n_fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.n_tp + other.n_tp, self.n_tn + other.n_tn,
                               self.n_fp + other.n_fp, self.n_fn + other.n_fn)

    def to_dict(self) -> dict:
        return {"n_tp": self.n_tp, "n_tn": self.n_tn, "n_fp": self.n_fp, "n_fn": self.n_fn}


@dataclass
class MetricEntry:
    iou: float
    f_beta: float
    mae: float
    ber: float
    acc: float
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("iou", "f_beta", "mae", "ber", "acc")}
        d["counts"] = self.counts.to_dict()
        return d


@dataclass
class MetricReport(MetricEntry):
    per_image: list = field(default_factory=list)

    def to_dict(self, percent_ber: bool = False) -> dict:
        d = super().to_dict()
        d["per_image"] = [e.to_dict() for e in self.per_image]
        if percent_ber:
            d["ber"] *= 100.0
            for e in d["per_image"]:
                e["ber"] *= 100.0
        return d

    def to_json(self, percent_ber: bool = False) -> str:
        return json.dumps(self.to_dict(percent_ber), indent=2)


def confusion(pred_bin: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    p = np.asarray(pred_bin).astype(bool)
    g = np.asarray(gt).astype(bool)
    return ConfusionCounts(
        n_tp=int(np.count_nonzero(p & g)),
        n_tn=int(np.count_nonzero(~p & ~g)),
        n_fp=int(np.count_nonzero(p & ~g)),
        n_fn=int(np.count_nonzero(~p & g)),
    )


def rates(c: ConfusionCounts, beta2: float = 0.3) -> dict:
    """IoU, F-beta, BER and ACC from counts, with the degenerate-case rules.

    * empty union (no glass predicted or present): IoU = 1
    * n_p = 0: recall/ACC = 1 if there are no false positives, else 0
    * n_n = 0: the true-negative rate counts as 1
    * nothing predicted: precision = 1 if n_p = 0, else 0
    * F-beta = 0 when precision and recall are both 0
    """
    union = c.n_tp + c.n_fp + c.n_fn
    iou = 1.0 if union == 0 else c.n_tp / union
    if c.n_p == 0:
        recall = 1.0 if c.n_fp == 0 else 0.0
    else:
        recall = c.n_tp / c.n_p
    predicted = c.n_tp + c.n_fp
    if predicted == 0:
        precision = 1.0 if c.n_p == 0 else 0.0
    else:
        precision = c.n_tp / predicted
    denom = beta2 * precision + recall
    f_beta = 0.0 if denom == 0 else (1 + beta2) * precision * recall / denom
    tnr = 1.0 if c.n_n == 0 else c.n_tn / c.n_n
    ber = 1.0 - 0.5 * (recall + tnr)
    return {"iou": iou, "f_beta": f_beta, "ber": ber, "acc": recall}


def compute_metrics(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5,
                    beta2: float = 0.3) -> MetricEntry:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    counts = confusion(pred >= threshold, gt >= 0.5)
    r = rates(counts, beta2)
    mae = float(np.abs(pred - gt).mean()) if pred.size else 0.0
    return MetricEntry(r["iou"], r["f_beta"], mae, r["ber"], r["acc"], counts)


def aggregate(entries: list, beta2: float = 0.3) -> MetricReport:
    if not entries:
        raise EmptyDataset("cannot aggregate zero metric entries")
    counts = ConfusionCounts()
    for e in entries:
        counts = counts + e.counts
    r = rates(counts, beta2)
    mae = float(np.mean([e.mae for e in entries]))
    return MetricReport(r["iou"], r["f_beta"], mae, r["ber"], r["acc"], counts, list(entries))


def location_distribution(split: DatasetSplit, grid: tuple[int, int] = (64, 64)) -> np.ndarray:
    """Mean glass mask over the split, resampled to ``grid``."""
    if len(split) == 0:
        raise EmptyDataset(f"split {split.split!r} has no samples")
    acc = np.zeros(grid, dtype=np.float64)
    for s in split:
        acc += resize_mask_to_grid(s.mask.values, grid)
    return (acc / len(split)).astype(np.float32)


def resize_mask_to_grid(mask: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float32)
    if m.ndim == 2:
        m = m[..., None]
    if m.shape[:2] == tuple(grid):
        return m[..., 0].astype(np.float64)
    return np.clip(_resize_bilinear(m, grid)[..., 0], 0.0, 1.0).astype(np.float64)


def area_ratio(mask: np.ndarray) -> float:
    m = np.asarray(mask)
    return float(np.count_nonzero(m >= 0.5)) / m.size


def histogram_bin(ratio: float, bins: int = 10) -> int:
    # right-open bins, last bin closed at 1
    return min(int(np.floor(ratio * bins)), bins - 1)


def area_ratio_histogram(split: DatasetSplit, bins: int = 10) -> list[int]:
    if len(split) == 0:
        raise EmptyDataset(f"split {split.split!r} has no samples")
    counts = [0] * bins
    for s in split:
        counts[histogram_bin(area_ratio(s.mask.values), bins)] += 1
    return counts


def dataset_stats(split: DatasetSplit, grid=(64, 64), bins: int = 10) -> dict:
    ratios = []
    acc = np.zeros(grid, dtype=np.float64)
    for s in split:
        ratios.append(area_ratio(s.mask.values))
        acc += resize_mask_to_grid(s.mask.values, grid)
    if not ratios:
        raise EmptyDataset(f"split {split.split!r} has no samples")
    hist = [0] * bins
    for r in ratios:
        hist[histogram_bin(r, bins)] += 1
    loc = acc / len(ratios)
    return {
        "split": split.split,
        "count": len(ratios),
        "area_ratio": {"bins": bins, "counts": hist, "mean": float(np.mean(ratios))},
        "location": {"grid": list(grid), "values": np.round(loc, 6).tolist()},
    }
