"""Flat key=value configuration files for the CLI.

One shared key universe covers training, bridge, model, and degradation
settings, so a single file can drive both `train` and `degrade` runs. Lines
are `key = value`, blank lines and `#` comments are ignored, and unknown or
duplicate keys are reported as usage errors with their line numbers.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .bridge import BridgeConfig
from .degrade import DegradationSpec
from .errors import UsageError
from .losses import LossWeights
from .networks import AXES, DiscriminatorConfig, GeneratorConfig
from .trainer import TrainConfig


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """key=value lines to a string dict; comments and blanks skipped."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        if key in values:
            raise UsageError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_config_file(path) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    return parse_config_text(text, source=str(path))


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"config key {key!r} expects an integer, got {value!r}")


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"config key {key!r} expects a number, got {value!r}")


def _as_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise UsageError(f"config key {key!r} expects true/false, got {value!r}")


def _as_float_pair(key: str, value: str) -> Tuple[float, float]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise UsageError(f"config key {key!r} expects 'low,high', got {value!r}")
    return (_as_float(key, parts[0]), _as_float(key, parts[1]))


def _as_int_pair(key: str, value: str) -> Tuple[int, int]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise UsageError(f"config key {key!r} expects 'low,high', got {value!r}")
    return (_as_int(key, parts[0]), _as_int(key, parts[1]))


def _as_axes(key: str, value: str) -> Tuple[str, ...]:
    axes = tuple(p.strip() for p in value.split(",") if p.strip())
    for axis in axes:
        if axis not in AXES:
            raise UsageError(f"config key {key!r} expects axes from {AXES}, got {value!r}")
    if not axes:
        raise UsageError(f"config key {key!r} expects at least one axis")
    return axes


# key -> (section, field, coercer); sections name the dataclass they feed
_TRAIN_KEYS: Dict[str, Tuple[str, str, Callable]] = {
    "epochs": ("train", "epochs", _as_int),
    "decay_start_epoch": ("train", "decay_start_epoch", _as_int),
    "batch_size": ("train", "batch_size", _as_int),
    "learning_rate": ("train", "learning_rate", _as_float),
    "adam_beta1": ("train", "adam_beta1", _as_float),
    "adam_beta2": ("train", "adam_beta2", _as_float),
    "seed": ("train", "seed", _as_int),
    "image_size": ("train", "image_size", _as_int),
    "critic_base_channels": ("train", "critic_base_channels", _as_int),
    "nce_num_patches": ("train", "nce_num_patches", _as_int),
    "nce_temperature": ("train", "nce_temperature", _as_float),
    "nce_embed_dim": ("train", "nce_embed_dim", _as_int),
    "ssim_window": ("train", "ssim_window", _as_int),
    "ssim_scales": ("train", "ssim_scales", _as_int),
    "lambda_sb": ("weights", "lambda_sb", _as_float),
    "lambda_p": ("weights", "lambda_p", _as_float),
    "lambda_s": ("weights", "lambda_s", _as_float),
    "tau": ("bridge", "tau", _as_float),
    "num_steps": ("bridge", "num_steps", _as_int),
    "in_channels": ("generator", "in_channels", _as_int),
    "base_channels": ("generator", "base_channels", _as_int),
    "depth": ("generator", "depth", _as_int),
    "time_embed_dim": ("generator", "time_embed_dim", _as_int),
    "noise_dim": ("generator", "noise_dim", _as_int),
    "dsc_kernel_size": ("generator", "dsc_kernel_size", _as_int),
    "snake_axes": ("generator", "snake_axes", _as_axes),
    "use_skip_connections": ("generator", "use_skip_connections", _as_bool),
    "disc_base_channels": ("discriminator", "base_channels", _as_int),
    "disc_num_layers": ("discriminator", "num_layers", _as_int),
    "disc_time_embed_dim": ("discriminator", "time_embed_dim", _as_int),
}

_DEGRADE_KEYS: Dict[str, Tuple[str, str, Callable]] = {
    "enable_illumination": ("degrade", "enable_illumination", _as_bool),
    "field_strength_range": ("degrade", "field_strength_range", _as_float_pair),
    "gamma_range": ("degrade", "gamma_range", _as_float_pair),
    "brightness_range": ("degrade", "brightness_range", _as_float_pair),
    "enable_blur": ("degrade", "enable_blur", _as_bool),
    "sigma_range": ("degrade", "sigma_range", _as_float_pair),
    "enable_spots": ("degrade", "enable_spots", _as_bool),
    "spot_count_range": ("degrade", "spot_count_range", _as_int_pair),
    "spot_radius_range": ("degrade", "spot_radius_range", _as_float_pair),
    "spot_opacity_range": ("degrade", "spot_opacity_range", _as_float_pair),
    "mask_threshold": ("degrade", "mask_threshold", _as_float),
}

KNOWN_KEYS = sorted(set(_TRAIN_KEYS) | set(_DEGRADE_KEYS))


def _check_known(values: Dict[str, str]) -> None:
    unknown = sorted(set(values) - set(KNOWN_KEYS))
    if unknown:
        raise UsageError(
            f"unknown config key(s): {', '.join(unknown)}; known keys: {', '.join(KNOWN_KEYS)}")


def build_train_config(values: Dict[str, str],
                       seed_override: Optional[int] = None) -> TrainConfig:
    """TrainConfig from parsed key=value strings; unset keys keep defaults.

    seed_override beats the file's `seed` key (the CLI resolves the flag/env
    precedence before calling).
    """
    _check_known(values)
    sections: Dict[str, Dict] = {"train": {}, "weights": {}, "bridge": {},
                                 "generator": {}, "discriminator": {}}
    for key, value in values.items():
        if key not in _TRAIN_KEYS:
            continue  # degradation keys are legal in a shared file
        section, field, coerce = _TRAIN_KEYS[key]
        sections[section][field] = coerce(key, value)
    if seed_override is not None:
        sections["train"]["seed"] = seed_override
    num_steps = sections["bridge"].get("num_steps", BridgeConfig().num_steps)
    sections["generator"]["num_timesteps"] = num_steps
    sections["discriminator"]["num_timesteps"] = num_steps
    try:
        return TrainConfig(
            weights=LossWeights(**sections["weights"]),
            bridge=BridgeConfig(**sections["bridge"]),
            generator=GeneratorConfig(**sections["generator"]),
            discriminator=DiscriminatorConfig(**sections["discriminator"]),
            **sections["train"])
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}")


def build_degradation_spec(values: Dict[str, str],
                           seed_override: Optional[int] = None) -> DegradationSpec:
    """DegradationSpec from parsed key=value strings; shares `seed` with train."""
    _check_known(values)
    kwargs: Dict = {}
    for key, value in values.items():
        if key in _DEGRADE_KEYS:
            _, field, coerce = _DEGRADE_KEYS[key]
            kwargs[field] = coerce(key, value)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    elif "seed" in values:
        kwargs["seed"] = _as_int("seed", values["seed"])
    try:
        return DegradationSpec(**kwargs)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}")


def describe_keys() -> str:
    """Help text: one line per known key with its defaults."""
    defaults = {
        "train": TrainConfig(), "weights": LossWeights(), "bridge": BridgeConfig(),
        "generator": GeneratorConfig(), "discriminator": DiscriminatorConfig(),
        "degrade": DegradationSpec(),
    }
    lines = []
    for key in KNOWN_KEYS:
        section, field, _ = _TRAIN_KEYS.get(key) or _DEGRADE_KEYS[key]
        value = getattr(defaults[section], field)
        lines.append(f"  {key} (default: {value})")
    return "\n".join(lines)
