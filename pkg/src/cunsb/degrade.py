"""Synthetic degradations for building unpaired low-quality training data.

Three parametric stand-ins are composed in a fixed order: a smooth
multiplicative illumination field with gamma/brightness shift, separable
Gaussian blur with mirrored borders, and soft-edged bright/dark discs placed
inside the fundus disc. Every drawn parameter is returned in a record whose
replay reproduces the degraded image bit for bit.

Images are (H, W) or (H, W, C) float arrays in [-1, 1]; outputs are float64.
The illumination and spot stages act inside the fundus mask (background stays
untouched); blur is a global optical effect and runs on the whole frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

_SPOT_EDGE = 1.5  # soft-edge width of artifact discs, in pixels


@dataclass(frozen=True)
class DegradationSpec:
    """Enable flags, parameter ranges, and the rng seed for compose()."""

    enable_illumination: bool = True
    field_strength_range: Tuple[float, float] = (0.2, 0.6)
    gamma_range: Tuple[float, float] = (0.7, 1.4)
    brightness_range: Tuple[float, float] = (-0.12, 0.12)

    enable_blur: bool = True
    sigma_range: Tuple[float, float] = (0.5, 2.0)

    enable_spots: bool = True
    spot_count_range: Tuple[int, int] = (1, 6)
    spot_radius_range: Tuple[float, float] = (4.0, 16.0)
    spot_opacity_range: Tuple[float, float] = (0.5, 1.0)

    mask_threshold: float = 0.05
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("field_strength_range", "gamma_range", "brightness_range", "sigma_range",
                     "spot_count_range", "spot_radius_range", "spot_opacity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.gamma_range[0] <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma_range[0] < 0:
            raise ValueError("sigma must be >= 0")
        if self.spot_count_range[0] < 0:
            raise ValueError("spot count must be >= 0")
        if self.spot_radius_range[0] <= 0:
            raise ValueError("spot radius must be positive")
        if not 0 <= self.spot_opacity_range[0] <= self.spot_opacity_range[1] <= 1:
            raise ValueError("spot opacity range must lie in [0, 1]")
        if not 0 <= self.mask_threshold < 1:
            raise ValueError("mask_threshold must lie in [0, 1)")


@dataclass(frozen=True)
class IlluminationParams:
    """Concrete drawn values for one illumination disturbance."""

    field_coeffs: Tuple[float, ...]  # quadratic in normalized coords: 1,u,v,u2,uv,v2
    field_strength: float
    gamma: float
    brightness: float


@dataclass(frozen=True)
class SpotParams:
    """One artifact disc, placed at integer pixel coordinates."""

    row: int
    col: int
    radius: float
    opacity: float
    value: float  # composited gray level in the [0, 1] domain


@dataclass
class DegradationRecord:
    """Everything needed to replay a composed degradation exactly."""

    illumination: Optional[IlluminationParams] = None
    blur_sigma: Optional[float] = None
    spots: Optional[List[SpotParams]] = None
    mask_threshold: float = 0.05

    def to_dict(self) -> dict:
        return {
            "illumination": None if self.illumination is None else {
                "field_coeffs": list(self.illumination.field_coeffs),
                "field_strength": self.illumination.field_strength,
                "gamma": self.illumination.gamma,
                "brightness": self.illumination.brightness,
            },
            "blur_sigma": self.blur_sigma,
            "spots": None if self.spots is None else [
                {"row": s.row, "col": s.col, "radius": s.radius,
                 "opacity": s.opacity, "value": s.value}
                for s in self.spots
            ],
            "mask_threshold": self.mask_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationRecord":
        illum = d.get("illumination")
        spots = d.get("spots")
        return cls(
            illumination=None if illum is None else IlluminationParams(
                tuple(float(c) for c in illum["field_coeffs"]),
                float(illum["field_strength"]), float(illum["gamma"]),
                float(illum["brightness"])),
            blur_sigma=None if d.get("blur_sigma") is None else float(d["blur_sigma"]),
            spots=None if spots is None else [
                SpotParams(int(s["row"]), int(s["col"]), float(s["radius"]),
                           float(s["opacity"]), float(s["value"]))
                for s in spots
            ],
            mask_threshold=float(d.get("mask_threshold", 0.05)),
        )

    @property
    def empty(self) -> bool:
        return self.illumination is None and self.blur_sigma is None and self.spots is None


def _to_unit(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) * 0.5


def _from_unit(y: np.ndarray) -> np.ndarray:
    return np.clip(y * 2.0 - 1.0, -1.0, 1.0)


def estimate_fundus_mask(x: np.ndarray, threshold: float = 0.05) -> np.ndarray:
    """Boolean (H, W) mask of the fundus disc: green channel above threshold.

    threshold applies in the [0, 1] domain. Single-channel images use their
    only channel.
    """
    unit = _to_unit(x)
    if unit.ndim == 3:
        green = unit[..., 1] if unit.shape[-1] >= 2 else unit[..., 0]
    elif unit.ndim == 2:
        green = unit
    else:
        raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {unit.shape}")
    return green > threshold


def _normalized_quadratic(coeffs, height: int, width: int) -> np.ndarray:
    """Quadratic surface over [-1,1]^2 coords, scaled to peak magnitude 1."""
    v = np.linspace(-1.0, 1.0, height)[:, None]
    u = np.linspace(-1.0, 1.0, width)[None, :]
    c0, c1, c2, c3, c4, c5 = coeffs
    p = c0 + c1 * u + c2 * v + c3 * u * u + c4 * u * v + c5 * v * v
    peak = np.abs(p).max()
    return p / peak if peak > 0 else np.zeros_like(p)


def draw_illumination_params(spec: DegradationSpec, rng: np.random.Generator) -> IlluminationParams:
    coeffs = tuple(float(c) for c in rng.standard_normal(6))
    return IlluminationParams(
        field_coeffs=coeffs,
        field_strength=float(rng.uniform(*spec.field_strength_range)),
        gamma=float(rng.uniform(*spec.gamma_range)),
        brightness=float(rng.uniform(*spec.brightness_range)),
    )


def apply_illumination(x: np.ndarray, params: IlluminationParams,
                       mask_threshold: float = 0.05) -> np.ndarray:
    """Multiply by the smooth field, then gamma and brightness, inside the mask."""
    x64 = np.asarray(x, dtype=np.float64)
    unit = _to_unit(x64)
    mask = estimate_fundus_mask(x64, mask_threshold)
    h, w = unit.shape[0], unit.shape[1]
    surf = _normalized_quadratic(params.field_coeffs, h, w)
    fld = 1.0 + params.field_strength * surf
    if unit.ndim == 3:
        fld = fld[..., None]
        mask3 = mask[..., None]
    else:
        mask3 = mask
    shaded = np.clip(unit * fld, 0.0, 1.0)
    shaded = np.clip(np.power(shaded, params.gamma) + params.brightness, 0.0, 1.0)
    return np.where(mask3, _from_unit(shaded), x64)


def light_disturbance(x: np.ndarray, params: Optional[DegradationSpec] = None,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw illumination parameters from the configured ranges and apply them."""
    spec = params if params is not None else DegradationSpec()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return apply_illumination(x, draw_illumination_params(spec, rng), spec.mask_threshold)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian tap weights, radius int(4*sigma + 0.5)."""
    radius = max(1, int(4.0 * sigma + 0.5))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _mirror_indices(n: int, radius: int) -> np.ndarray:
    """Index row -radius .. n-1+radius reflected about the borders (no edge repeat)."""
    idx = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def blur(x: np.ndarray, sigma: float, rng=None) -> np.ndarray:
    """Separable Gaussian blur with mirrored borders; sigma=0 returns x as-is."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    arr = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return arr.copy()
    kernel = gaussian_kernel1d(sigma)
    radius = (kernel.size - 1) // 2
    for axis in (0, 1):
        n = arr.shape[axis]
        padded = np.take(arr, _mirror_indices(n, radius), axis=axis)
        out = np.zeros_like(arr)
        for k, wk in enumerate(kernel):
            sl = [slice(None)] * arr.ndim
            sl[axis] = slice(k, k + n)
            out += wk * padded[tuple(sl)]
        arr = out
    return np.clip(arr, -1.0, 1.0)


def draw_spot_params(spec: DegradationSpec, mask: np.ndarray,
                     rng: np.random.Generator) -> List[SpotParams]:
    """Sample disc centers uniformly over mask-interior pixels."""
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        return []
    count = int(rng.integers(spec.spot_count_range[0], spec.spot_count_range[1] + 1))
    width = mask.shape[1]
    spots = []
    for _ in range(count):
        flat = int(rng.choice(candidates))
        bright = bool(rng.random() < 0.5)
        value = float(rng.uniform(0.85, 1.0)) if bright else float(rng.uniform(0.0, 0.15))
        spots.append(SpotParams(
            row=flat // width,
            col=flat % width,
            radius=float(rng.uniform(*spec.spot_radius_range)),
            opacity=float(rng.uniform(*spec.spot_opacity_range)),
            value=value,
        ))
    return spots


def apply_spots(x: np.ndarray, spots: List[SpotParams],
                mask_threshold: float = 0.05) -> np.ndarray:
    """Alpha-composite soft discs, restricted to the fundus mask interior."""
    if not spots:
        return np.array(x, dtype=np.float64, copy=True)
    x64 = np.asarray(x, dtype=np.float64)
    unit = _to_unit(x64)
    mask = estimate_fundus_mask(x64, mask_threshold)
    h, w = mask.shape
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    for s in spots:
        dist = np.sqrt((rows - s.row) ** 2 + (cols - s.col) ** 2)
        alpha = s.opacity * np.clip((s.radius - dist) / _SPOT_EDGE, 0.0, 1.0)
        alpha = np.where(mask, alpha, 0.0)
        if unit.ndim == 3:
            alpha = alpha[..., None]
        unit = (1.0 - alpha) * unit + alpha * s.value
    mask3 = mask[..., None] if unit.ndim == 3 else mask
    return np.where(mask3, _from_unit(np.clip(unit, 0.0, 1.0)), x64)


def spot_artifacts(x: np.ndarray, params: Optional[DegradationSpec] = None,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw spot parameters for this image's mask and composite them."""
    spec = params if params is not None else DegradationSpec()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    mask = estimate_fundus_mask(x, spec.mask_threshold)
    return apply_spots(x, draw_spot_params(spec, mask, rng), spec.mask_threshold)


def apply_record(x: np.ndarray, record: DegradationRecord) -> np.ndarray:
    """Replay recorded parameters: illumination, then blur, then spots."""
    out = np.array(x, dtype=np.float64, copy=True)
    if record.illumination is not None:
        out = apply_illumination(out, record.illumination, record.mask_threshold)
    if record.blur_sigma is not None:
        out = blur(out, record.blur_sigma)
    if record.spots is not None:
        out = apply_spots(out, record.spots, record.mask_threshold)
    return out


def compose(x: np.ndarray, spec: DegradationSpec,
            rng: Optional[np.random.Generator] = None):
    """Apply the enabled degradations in fixed order and record every draw.

    Parameters are drawn stage by stage (spot centers against the mask of the
    already-shaded-and-blurred image) and applied through the same functions
    apply_record() uses, so replaying the returned record is bitwise-identical.
    Returns (degraded image, DegradationRecord).
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    record = DegradationRecord(mask_threshold=spec.mask_threshold)
    out = np.array(x, dtype=np.float64, copy=True)
    if spec.enable_illumination:
        record.illumination = draw_illumination_params(spec, rng)
        out = apply_illumination(out, record.illumination, spec.mask_threshold)
    if spec.enable_blur:
        record.blur_sigma = float(rng.uniform(*spec.sigma_range))
        out = blur(out, record.blur_sigma)
    if spec.enable_spots:
        mask = estimate_fundus_mask(out, spec.mask_threshold)
        record.spots = draw_spot_params(spec, mask, rng)
        out = apply_spots(out, record.spots, spec.mask_threshold)
    return out, record
