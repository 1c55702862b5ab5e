"""Synthetic flash/no-flash scenes and pseudo ground-truth reflections.

A scene is built from a background (transmission) texture ``B``, a reflection
texture ``R`` and a binary glass mask ``G``.  When the camera side of the glass
is bright, the no-flash shot carries the reflection and the flash shot mostly
suppresses it; when the camera side is dark, the reflection only shows up under
flash.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal, Optional, Protocol

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, ImageDraw

from .core import (
    REFL_FLASH_FILE,
    REFL_NOFLASH_FILE,
    DatasetSplit,
    GlassMask,
    ImagePair,
    Sample,
    read_image,
    save_sample,
)
from .errors import ExtractorFailure, MissingFile

TRANSMISSION_DIM = 0.5


@dataclass(frozen=True)
class SynthParams:
    size: tuple[int, int] = (64, 64)
    side: Literal["bright", "dark"] = "bright"
    glass_region_count: int = 1
    reflection_strength: float = 0.5
    flash_gain: float = 2.0
    texture_seed: Optional[int] = None
    octaves: int = 3

    def __post_init__(self):
        if self.side not in ("bright", "dark"):
            raise ValueError(f"side must be bright or dark, got {self.side!r}")
        # alpha == 0 is accepted as the reflection-free degenerate case
        if not 0.0 <= self.reflection_strength <= 1.0:
            raise ValueError("reflection_strength must lie in [0, 1]")
        if not self.flash_gain > 1.0:
            raise ValueError("flash_gain must exceed 1")
        if self.glass_region_count < 1:
            raise ValueError("glass_region_count must be >= 1")
        if not 2 <= self.octaves <= 4:
            raise ValueError("octaves must be in [2, 4]")


def value_noise(rng: np.random.Generator, size: tuple[int, int], octaves: int = 3,
                channels: int = 3, base_cells: int = 4) -> np.ndarray:
    """Multi-octave value noise in [0, 1], shape (H, W, channels)."""
    h, w = size
    acc = np.zeros((channels, h, w), dtype=np.float64)
    total = 0.0
    for o in range(octaves):
        cells = base_cells * 2 ** o
        grid = rng.random((1, channels, cells + 1, cells + 1))
        up = F.interpolate(torch.from_numpy(grid), size=(h, w), mode="bilinear", align_corners=True)
        weight = 0.5 ** o
        acc += weight * up[0].numpy()
        total += weight
    acc /= total
    lo, hi = acc.min(), acc.max()
    acc = (acc - lo) / (hi - lo) if hi > lo else np.zeros_like(acc)
    return np.ascontiguousarray(acc.transpose(1, 2, 0), dtype=np.float32)


def random_glass_mask(rng: np.random.Generator, size: tuple[int, int], count: int) -> np.ndarray:
    """Union of random axis-aligned rectangles and convex polygons."""
    h, w = size
    canvas = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    for _ in range(count):
        rh = rng.uniform(0.25, 0.55) * h
        rw = rng.uniform(0.25, 0.55) * w
        cy = rng.uniform(rh / 2, h - rh / 2)
        cx = rng.uniform(rw / 2, w - rw / 2)
        if rng.random() < 0.5:
            draw.rectangle([cx - rw / 2, cy - rh / 2, cx + rw / 2, cy + rh / 2], fill=255)
        else:
            # points on an ellipse at sorted angles form a convex polygon
            k = int(rng.integers(4, 8))
            angles = np.sort(rng.uniform(0, 2 * np.pi, k))
            pts = [(cx + rw / 2 * np.cos(a), cy + rh / 2 * np.sin(a)) for a in angles]
            draw.polygon(pts, fill=255)
    return (np.asarray(canvas) >= 128).astype(np.float32)[..., None]


def compose(background: np.ndarray, reflection: np.ndarray, glass: np.ndarray,
            side: str, alpha: float, gain: float):
    """Apply the flash/no-flash composition law.

    Returns ``(no_flash, flash, refl_no_flash, refl_flash)`` clamped to [0, 1].
    """
    trans = background * TRANSMISSION_DIM
    trans_flash = np.clip(trans * gain, 0.0, 1.0)
    layer = alpha * reflection * glass
    if side == "bright":
        refl_nf, refl_f = layer, layer / gain
    else:
        refl_nf, refl_f = np.zeros_like(layer), layer
    no_flash = np.clip(trans + refl_nf, 0.0, 1.0)
    flash = np.clip(trans_flash + refl_f, 0.0, 1.0)
    return (no_flash.astype(np.float32), flash.astype(np.float32),
            np.clip(refl_nf, 0, 1).astype(np.float32), np.clip(refl_f, 0, 1).astype(np.float32))


def generate_scene(rng: np.random.Generator, p: SynthParams = SynthParams(), scene_id: str = "") -> Sample:
    tex_rng = rng if p.texture_seed is None else np.random.default_rng(p.texture_seed)
    background = value_noise(tex_rng, p.size, p.octaves)
    reflection = value_noise(tex_rng, p.size, p.octaves)
    glass = random_glass_mask(rng, p.size, p.glass_region_count)
    nf, fl, r_nf, r_f = compose(background, reflection, glass, p.side,
                                p.reflection_strength, p.flash_gain)
    return Sample(ImagePair(nf, fl, scene_id), GlassMask(glass, "binary"), r_nf, r_f)


class ReflectionExtractor(Protocol):
    def extract(self, masked_image: np.ndarray, **context) -> np.ndarray: ...


class IdentityExtractor:
    """Returns the masked image itself; useful for contract tests."""

    def extract(self, masked_image, **context):
        return np.asarray(masked_image, dtype=np.float32)


class OracleExtractor:
    """Reads back the exact injected reflection layer of a synthetic sample."""

    def __init__(self, sample: Sample):
        if not sample.has_reflections:
            raise ExtractorFailure("oracle extractor needs a sample with stored reflection layers")
        self.sample = sample

    def extract(self, masked_image, stream: str = "no_flash", **context):
        layer = self.sample.refl_no_flash if stream == "no_flash" else self.sample.refl_flash
        return layer * self.sample.mask.values


class ExternalExtractor:
    """Loads precomputed reflection images from ``root/<scene_id>/refl_*.png``.

    The images are expected to come from a full-image reflection detector run
    on the masked inputs.
    """

    def __init__(self, root):
        self.root = Path(root)

    def extract(self, masked_image, stream: str = "no_flash", scene_id: str = "", **context):
        name = REFL_NOFLASH_FILE if stream == "no_flash" else REFL_FLASH_FILE
        path = self.root / scene_id / name
        try:
            layer = read_image(path)
        except MissingFile as exc:
            raise ExtractorFailure(f"no precomputed reflection at {path}") from exc
        if layer.shape[:2] != masked_image.shape[:2]:
            raise ExtractorFailure(f"{path}: size {layer.shape[:2]} != {masked_image.shape[:2]}")
        return layer


def pseudo_gt_reflection(s: Sample, extractor: ReflectionExtractor) -> tuple[np.ndarray, np.ndarray]:
    """Mask both shots with the GT glass mask and run the extractor on each."""
    mask = s.mask.values
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError("pseudo-GT generation needs a binary mask")
    out = []
    for stream, image in (("no_flash", s.pair.no_flash), ("flash", s.pair.flash)):
        masked = image * mask
        try:
            r = extractor.extract(masked, stream=stream, scene_id=s.pair.scene_id)
        except ExtractorFailure:
            raise
        except Exception as exc:
            raise ExtractorFailure(f"extractor failed on {s.pair.scene_id}/{stream}: {exc}") from exc
        r = np.clip(np.asarray(r, dtype=np.float32), 0.0, 1.0)
        out.append(r * mask)
    return out[0], out[1]


def write_synth_dataset(out, count: int, p: SynthParams = SynthParams(), seed: int = 0,
                        split: str = "train") -> DatasetSplit:
    """Write ``count`` scenes to ``out/<split>/<scene_id>/`` in the dataset layout."""
    directory = Path(out) / split
    directory.mkdir(parents=True, exist_ok=True)
    ids = []
    # per-scene child seeds keep scenes independent of generation order
    children = np.random.SeedSequence(seed).spawn(count)
    for i, child in enumerate(children):
        sid = f"scene_{i:05d}"
        s = generate_scene(np.random.default_rng(child), p, sid)
        save_sample(directory / sid, s)
        ids.append(sid)
    meta = {"count": count, "seed": seed, "params": asdict(p)}
    (directory / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return DatasetSplit(Path(out), split, ids)
