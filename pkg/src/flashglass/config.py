"""Model/training configuration and its ``key = value`` text format.

Top-level fields use bare keys (``base_channels = 16``); nested sections use
dotted keys (``loss.lam = 0.8``, ``optimizer.lr = 1e-5``).  ``#`` starts a
comment.  Unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .core import AugmentConfig
from .encoder import EncoderParams
from .errors import ConfigError
from .loss import LossConfig

ABLATIONS = ("base", "rcmm_only", "rgam_only", "dual_unet", "cbam", "full")
RCMM_MODES = ("rcmm_only", "cbam", "full")
RGAM_MODES = ("rgam_only", "dual_unet", "full")
RCMM_FLAGS = ("no_perm_add", "sub_to_add", "no_unet_branch")
RGAM_FLAGS = ("shared_to_separate", "q_glass_only", "q_refle_only", "serial_branch",
              "no_shift", "shift_relu")


@dataclass(frozen=True)
class OptimConfig:
    name: str = "adamw"
    lr: float = 1e-5
    batch: int = 2
    epochs: int = 150
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    # 0 means no cap beyond ``epochs``
    max_steps: int = 0


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple = (384, 384)
    base_channels: int = 96
    base_stride: int = 4
    heads: int = 2
    encoder_variant: str = "toy_conv"
    ablation: str = "full"
    no_perm_add: bool = False
    sub_to_add: bool = False
    no_unet_branch: bool = False
    shared_to_separate: bool = False
    q_glass_only: bool = False
    q_refle_only: bool = False
    serial_branch: bool = False
    no_shift: bool = False
    shift_relu: bool = False
    fglass_mode: str = "concat"
    decoder_mode: str = "default"
    attn_pool_stride: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        validate(self)

    @property
    def encoder(self) -> EncoderParams:
        return EncoderParams(self.base_channels, self.base_stride, self.encoder_variant)

    @property
    def has_rcmm(self) -> bool:
        return self.ablation in RCMM_MODES

    @property
    def has_rgam(self) -> bool:
        return self.ablation in RGAM_MODES

    @property
    def predicts_reflections(self) -> bool:
        return self.ablation in ("rcmm_only", "cbam", "full", "dual_unet")

    @property
    def attention_mode(self) -> str:
        if self.serial_branch:
            return "serial"
        if self.shared_to_separate:
            return "separate"
        if self.no_shift:
            return "no_shift"
        if self.shift_relu:
            return "shift_relu"
        return "shared"

    @property
    def query_mode(self) -> str:
        if self.q_glass_only:
            return "glass_only"
        if self.q_refle_only:
            return "refle_only"
        return "alternate"

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def toy_profile(**overrides) -> ModelConfig:
    """64x64 inputs, C=16, two heads: the desk-scale tested path."""
    base = dict(
        input_size=(64, 64), base_channels=16, base_stride=4, heads=2,
        optimizer=OptimConfig(lr=2e-3, batch=2, epochs=125, weight_decay=0.01, max_steps=500),
    )
    base.update(overrides)
    return ModelConfig(**base)


def validate(cfg: ModelConfig) -> None:
    if cfg.ablation not in ABLATIONS:
        raise ConfigError(f"ablation must be one of {ABLATIONS}, got {cfg.ablation!r}")
    h, w = cfg.input_size
    if cfg.base_stride not in (1, 2, 4):
        raise ConfigError("base_stride must be 1, 2 or 4")
    div = cfg.base_stride * 8
    if h % div or w % div:
        raise ConfigError(f"input_size {h}x{w} must be divisible by {div}")
    if cfg.base_channels < 1 or cfg.base_channels % cfg.heads:
        raise ConfigError(f"base_channels {cfg.base_channels} must be a positive multiple of heads {cfg.heads}")
    if cfg.encoder_variant not in ("toy_conv", "external"):
        raise ConfigError(f"unknown encoder_variant {cfg.encoder_variant!r}")
    if cfg.fglass_mode not in ("concat", "sum"):
        raise ConfigError("fglass_mode must be concat or sum")
    if cfg.decoder_mode not in ("default", "paper_literal"):
        raise ConfigError("decoder_mode must be default or paper_literal")
    if cfg.attn_pool_stride < 1:
        raise ConfigError("attn_pool_stride must be >= 1")
    for flag in RCMM_FLAGS:
        if getattr(cfg, flag) and not cfg.has_rcmm:
            raise ConfigError(f"{flag} needs an ablation with RCMM ({', '.join(RCMM_MODES)})")
    for flag in RGAM_FLAGS:
        if getattr(cfg, flag) and not cfg.has_rgam:
            raise ConfigError(f"{flag} needs an ablation with RGAM ({', '.join(RGAM_MODES)})")
    modes = [f for f in ("shared_to_separate", "serial_branch", "no_shift", "shift_relu") if getattr(cfg, f)]
    if len(modes) > 1:
        raise ConfigError(f"attention variants are mutually exclusive: {modes}")
    if cfg.q_glass_only and cfg.q_refle_only:
        raise ConfigError("q_glass_only and q_refle_only are mutually exclusive")
    if cfg.serial_branch and (cfg.q_glass_only or cfg.q_refle_only):
        raise ConfigError("serial_branch fixes the query order; drop q_*_only")
    if cfg.optimizer.name != "adamw":
        raise ConfigError(f"only adamw is supported, got {cfg.optimizer.name!r}")
    if cfg.optimizer.batch < 1 or cfg.optimizer.epochs < 0 or cfg.optimizer.lr < 0:
        raise ConfigError("optimizer batch >= 1, epochs >= 0, lr >= 0 required")


# ---- text format ---------------------------------------------------------

_SECTIONS = {"loss": LossConfig, "optimizer": OptimConfig, "augment": AugmentConfig}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return "x".join(str(int(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple) or key.endswith("crop"):
            if raw.lower() == "none":
                return None
            parts = raw.lower().replace(",", "x").split("x")
            if len(parts) != 2:
                raise ValueError(raw)
            return (int(parts[0]), int(parts[1]))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def to_text(cfg: ModelConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sf in fields(v):
                lines.append(f"{f.name}.{sf.name} = {_format_value(getattr(v, sf.name))}")
        else:
            lines.append(f"{f.name} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def from_text(text: str, base: Optional[ModelConfig] = None) -> ModelConfig:
    """Parse config text on top of ``base`` (defaults to the full-scale config).

    A ``profile = toy`` line switches the base to the toy profile; it must
    come before any other key.
    """
    top, nested = {}, {name: {} for name in _SECTIONS}
    cfg_base = base
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key == "profile":
            if len(seen) > 1:
                raise ConfigError("profile must be the first key")
            if raw == "toy":
                cfg_base = toy_profile()
            elif raw == "full":
                cfg_base = ModelConfig()
            else:
                raise ConfigError(f"unknown profile {raw!r}")
            continue
        if cfg_base is None:
            cfg_base = ModelConfig()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            current = getattr(cfg_base, section)
            if name not in {f.name for f in fields(current)}:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            nested[section][name] = _parse_value(key, raw, getattr(current, name))
        else:
            if key not in {f.name for f in fields(ModelConfig)} or key in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            top[key] = _parse_value(key, raw, getattr(cfg_base, key))
    if cfg_base is None:
        cfg_base = ModelConfig()
    try:
        for section, values in nested.items():
            if values:
                top[section] = replace(getattr(cfg_base, section), **values)
        return replace(cfg_base, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ModelConfig:
    return from_text(Path(path).read_text(encoding="utf-8"))


def save_config(path, cfg: ModelConfig) -> None:
    Path(path).write_text(to_text(cfg), encoding="utf-8")
