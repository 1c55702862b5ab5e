"""Image data model, dataset layout I/O and paired geometric augmentation.

Images are channel-last float32 arrays (H, W, C) with values in [0, 1].
Binary masks use the values {0, 1}.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import CropTooLarge, DecodeError, DimensionMismatch, MissingFile

NOFLASH_FILE = "noflash.png"
FLASH_FILE = "flash.png"
MASK_FILE = "mask.png"
REFL_NOFLASH_FILE = "refl_noflash.png"
REFL_FLASH_FILE = "refl_flash.png"
REQUIRED_FILES = (NOFLASH_FILE, FLASH_FILE, MASK_FILE)

# pixel value >= 128 counts as glass when reading 8-bit masks
MASK_LOAD_THRESHOLD = 128


@dataclass
class ImagePair:
    no_flash: np.ndarray
    flash: np.ndarray
    scene_id: str = ""

    def __post_init__(self):
        self.no_flash = _as_image(self.no_flash)
        self.flash = _as_image(self.flash)
        if self.no_flash.shape[:2] != self.flash.shape[:2]:
            raise DimensionMismatch(
                f"no_flash {self.no_flash.shape[:2]} != flash {self.flash.shape[:2]}")

    @property
    def size(self) -> tuple[int, int]:
        return self.no_flash.shape[0], self.no_flash.shape[1]


@dataclass
class GlassMask:
    values: np.ndarray
    kind: Literal["probability", "binary"] = "binary"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3 or v.shape[2] != 1:
            raise ValueError(f"mask must be HxW or HxWx1, got {v.shape}")
        if self.kind == "binary" and not np.isin(v, (0.0, 1.0)).all():
            raise ValueError("binary mask contains values outside {0, 1}")
        if self.kind == "probability" and (v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1):
            raise ValueError("probability mask outside [0, 1]")
        self.values = v

    @property
    def size(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


@dataclass
class Sample:
    pair: ImagePair
    mask: GlassMask
    refl_no_flash: Optional[np.ndarray] = None
    refl_flash: Optional[np.ndarray] = None

    def __post_init__(self):
        size = self.pair.size
        if self.mask.size != size:
            raise DimensionMismatch(f"mask {self.mask.size} != images {size}")
        for name in ("refl_no_flash", "refl_flash"):
            layer = getattr(self, name)
            if layer is not None:
                layer = _as_image(layer)
                if layer.shape[:2] != size:
                    raise DimensionMismatch(f"{name} {layer.shape[:2]} != images {size}")
                setattr(self, name, layer)

    @property
    def size(self) -> tuple[int, int]:
        return self.pair.size

    @property
    def has_reflections(self) -> bool:
        return self.refl_no_flash is not None and self.refl_flash is not None


@dataclass
class DatasetSplit:
    root: Path
    split: str
    samples: list[str] = field(default_factory=list)

    @property
    def directory(self) -> Path:
        return Path(self.root) / self.split

    @classmethod
    def open(cls, root, split: str) -> "DatasetSplit":
        directory = Path(root) / split
        if not directory.is_dir():
            raise MissingFile(f"split directory not found: {directory}")
        ids = sorted(p.name for p in directory.iterdir() if p.is_dir())
        for sid in ids:
            for name in REQUIRED_FILES:
                if not (directory / sid / name).is_file():
                    raise MissingFile(f"{directory / sid / name}")
        return cls(Path(root), split, ids)

    def load(self, scene_id: str) -> Sample:
        return load_image_pair(self.directory, scene_id)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        for sid in self.samples:
            yield self.load(sid)


def _as_image(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.ndim != 3:
        raise ValueError(f"expected HxWxC image, got shape {a.shape}")
    return a


def _read_png(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB", "RGBA", "P", "LA"):
                raise DecodeError(f"{path}: unsupported mode {im.mode}")
            return np.asarray(im.convert(mode))
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    return _read_png(Path(path), "RGB").astype(np.float32) / 255.0


def read_mask(path) -> np.ndarray:
    raw = _read_png(Path(path), "L")
    return (raw >= MASK_LOAD_THRESHOLD).astype(np.float32)[..., None]


def to_uint8(a: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to bytes, rounding half up."""
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def write_image(path, a: np.ndarray) -> None:
    a = np.asarray(a)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    Image.fromarray(to_uint8(a)).save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    Image.fromarray(np.where(m >= 0.5, 255, 0).astype(np.uint8)).save(path, format="PNG")


def load_image_pair(root, scene_id: str) -> Sample:
    """Load one scene from ``root/<scene_id>/``.

    ``root`` is a split directory (e.g. ``data/train``). Reflection layers are
    loaded when both ``refl_*.png`` files are present.
    """
    scene = Path(root) / scene_id
    for name in REQUIRED_FILES:
        if not (scene / name).is_file():
            raise MissingFile(str(scene / name))
    no_flash = read_image(scene / NOFLASH_FILE)
    flash = read_image(scene / FLASH_FILE)
    mask = read_mask(scene / MASK_FILE)
    refl_nf = refl_f = None
    if (scene / REFL_NOFLASH_FILE).is_file() and (scene / REFL_FLASH_FILE).is_file():
        refl_nf = read_image(scene / REFL_NOFLASH_FILE)
        refl_f = read_image(scene / REFL_FLASH_FILE)
    shapes = {a.shape[:2] for a in (no_flash, flash, mask, refl_nf, refl_f) if a is not None}
    if len(shapes) != 1:
        raise DimensionMismatch(f"{scene}: members differ in size {sorted(shapes)}")
    return Sample(ImagePair(no_flash, flash, scene_id), GlassMask(mask, "binary"), refl_nf, refl_f)


def save_sample(directory, s: Sample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_image(directory / NOFLASH_FILE, s.pair.no_flash)
    write_image(directory / FLASH_FILE, s.pair.flash)
    write_mask(directory / MASK_FILE, s.mask.values)
    if s.refl_no_flash is not None:
        write_image(directory / REFL_NOFLASH_FILE, s.refl_no_flash)
    if s.refl_flash is not None:
        write_image(directory / REFL_FLASH_FILE, s.refl_flash)


def _resize_bilinear(a: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32)).permute(2, 0, 1)[None]
    down = size[0] < a.shape[0] or size[1] < a.shape[1]
    out = F.interpolate(t, size=size, mode="bilinear", align_corners=False, antialias=down)
    return out[0].permute(1, 2, 0).numpy()


def _resize_nearest(a: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=size, mode="nearest-exact")
    return out[0].permute(1, 2, 0).numpy()


def resize_sample(s: Sample, size: tuple[int, int]) -> Sample:
    """Bilinear for images and reflection layers, nearest for the mask."""
    h, w = int(size[0]), int(size[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"size must be positive, got {size}")
    if (h, w) == s.size:
        return Sample(
            ImagePair(s.pair.no_flash.copy(), s.pair.flash.copy(), s.pair.scene_id),
            GlassMask(s.mask.values.copy(), s.mask.kind),
            None if s.refl_no_flash is None else s.refl_no_flash.copy(),
            None if s.refl_flash is None else s.refl_flash.copy(),
        )

    def img(a):
        return None if a is None else np.clip(_resize_bilinear(a, (h, w)), 0.0, 1.0)

    mask = (_resize_nearest(s.mask.values, (h, w)) >= 0.5).astype(np.float32)
    return Sample(
        ImagePair(img(s.pair.no_flash), img(s.pair.flash), s.pair.scene_id),
        GlassMask(mask, "binary"),
        img(s.refl_no_flash),
        img(s.refl_flash),
    )


@dataclass(frozen=True)
class AugmentConfig:
    crop: Optional[tuple[int, int]] = None
    hflip: bool = True
    rotate: bool = True
    # arbitrary-angle rotation with reflect padding instead of quarter turns
    arbitrary_rotation: bool = False
    max_angle: float = 15.0


@dataclass(frozen=True)
class AugmentDraw:
    top: int = 0
    left: int = 0
    crop: Optional[tuple[int, int]] = None
    flip: bool = False
    quarter_turns: int = 0
    angle: float = 0.0


def draw_augment(rng: np.random.Generator, size: tuple[int, int], cfg: AugmentConfig) -> AugmentDraw:
    h, w = size
    top = left = 0
    if cfg.crop is not None:
        ch, cw = cfg.crop
        if ch > h or cw > w:
            raise CropTooLarge(f"crop {cfg.crop} exceeds sample size {size}")
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < 0.5) if cfg.hflip else False
    turns, angle = 0, 0.0
    if cfg.rotate:
        if cfg.arbitrary_rotation:
            angle = float(rng.uniform(-cfg.max_angle, cfg.max_angle))
        else:
            turns = int(rng.integers(0, 4))
    return AugmentDraw(top, left, cfg.crop, flip, turns, angle)


def apply_augment(s: Sample, d: AugmentDraw) -> Sample:
    """Apply one geometric draw identically to every member of ``s``."""

    def geo(a, order):
        if a is None:
            return None
        if d.crop is not None:
            a = a[d.top:d.top + d.crop[0], d.left:d.left + d.crop[1]]
        if d.flip:
            a = a[:, ::-1]
        if d.quarter_turns:
            a = np.rot90(a, d.quarter_turns, axes=(0, 1))
        if d.angle:
            from scipy.ndimage import rotate
            a = rotate(a, d.angle, axes=(1, 0), reshape=False, order=order, mode="reflect")
        return np.ascontiguousarray(a, dtype=np.float32)

    mask = geo(s.mask.values, 0)
    if d.angle:
        mask = (mask >= 0.5).astype(np.float32)
    imgs = [geo(a, 1) for a in (s.pair.no_flash, s.pair.flash, s.refl_no_flash, s.refl_flash)]
    if d.angle:
        imgs = [None if a is None else np.clip(a, 0.0, 1.0) for a in imgs]
    return Sample(ImagePair(imgs[0], imgs[1], s.pair.scene_id), GlassMask(mask, "binary"), imgs[2], imgs[3])


def augment(s: Sample, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Sample:
    return apply_augment(s, draw_augment(rng, s.size, cfg))


def binarize(mask: GlassMask | np.ndarray, threshold: float = 0.5) -> GlassMask:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    values = mask.values if isinstance(mask, GlassMask) else mask
    return GlassMask((np.asarray(values) >= threshold).astype(np.float32), "binary")
