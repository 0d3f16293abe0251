"""Dynamic snake convolution: a deformable conv whose taps follow a curve.

A kernel of K taps is laid out along one axis (row or column). Each tap keeps
its integer in-axis step of +-1 per position, while its cross-axis coordinate
drifts by the cumulative sum of learned per-tap offsets, each bounded to
[-1, 1]. Fractional coordinates are resolved by bilinear interpolation, and
coordinates are clamped at the image border (replicate behavior), so zero
offsets reduce exactly to a straight 1xK (or Kx1) convolution with replicate
padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

AXES = ("row", "column")


@dataclass
class SnakeKernelSpec:
    """One snake kernel: tap count, orientation, weights, per-position offsets.

    weights: (out_channels, in_channels, K)
    offset_field: (K, H, W) or (B, K, H, W), values in [-1, 1]
    """

    weights: torch.Tensor
    offset_field: torch.Tensor
    kernel_size: int = 9
    axis: str = "row"

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.weights.ndim != 3 or self.weights.shape[-1] != self.kernel_size:
            raise ValueError(
                f"weights must have shape (out, in, {self.kernel_size}), got {tuple(self.weights.shape)}")
        if self.offset_field.ndim not in (3, 4):
            raise ValueError(
                f"offset_field must be (K, H, W) or (B, K, H, W), got {tuple(self.offset_field.shape)}")
        k_dim = self.offset_field.shape[0] if self.offset_field.ndim == 3 else self.offset_field.shape[1]
        if k_dim != self.kernel_size:
            raise ValueError(f"offset_field carries {k_dim} taps, expected {self.kernel_size}")
        if torch.any(self.offset_field.abs() > 1.0):
            raise ValueError("offsets must lie in [-1, 1]")

    @property
    def center(self) -> int:
        return self.kernel_size // 2


def accumulate_offsets(deltas: torch.Tensor, center: Optional[int] = None) -> torch.Tensor:
    """Cross-axis displacement per tap from per-tap offsets.

    deltas has the tap index in its last dimension (length K). The tap at
    center + z is displaced by the sum of the z offsets strictly between the
    center and that tap (positions center+1 .. center+z); the minus side
    mirrors this (positions center-z .. center-1). The center tap is never
    displaced, so it always samples the output pixel's own location.
    """
    k = deltas.shape[-1]
    if center is None:
        if k % 2 == 0:
            raise ValueError(f"even tap count {k} needs an explicit center")
        center = k // 2
    if not 0 <= center < k:
        raise ValueError(f"center {center} outside [0, {k - 1}]")
    if torch.any(deltas.abs() > 1.0):
        raise ValueError("offsets must lie in [-1, 1]")
    disp = torch.zeros_like(deltas)
    if center + 1 < k:
        disp[..., center + 1:] = torch.cumsum(deltas[..., center + 1:], dim=-1)
    if center > 0:
        left = deltas[..., :center]
        disp[..., :center] = left.flip(-1).cumsum(dim=-1).flip(-1)
    return disp


def snake_coordinates(offset_field: torch.Tensor, axis: str) -> torch.Tensor:
    """Fractional sampling coordinates for every output pixel and tap.

    offset_field: (B, K, H, W) with values in [-1, 1]. Returns coordinates of
    shape (B, H, W, K, 2), last dim ordered (row, col), before border clamping.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    b, k, h, w = offset_field.shape
    disp = accumulate_offsets(offset_field.permute(0, 2, 3, 1))  # (B, H, W, K)
    dtype = offset_field.dtype
    device = offset_field.device
    z = torch.arange(k, dtype=dtype, device=device) - k // 2
    rows = torch.arange(h, dtype=dtype, device=device).view(1, h, 1, 1)
    cols = torch.arange(w, dtype=dtype, device=device).view(1, 1, w, 1)
    if axis == "row":
        # taps march along columns; rows drift with the accumulated offsets
        sample_r = rows + disp
        sample_c = (cols + z.view(1, 1, 1, k)).expand(b, h, w, k)
    else:
        sample_r = (rows + z.view(1, 1, 1, k)).expand(b, h, w, k)
        sample_c = cols + disp
    return torch.stack(torch.broadcast_tensors(sample_r, sample_c), dim=-1)


def _bilinear_gather(feature_map: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Batched bilinear lookup. feature_map (B, C, H, W), coords (B, ..., 2).

    Coordinates are clamped into the valid grid first, which replicates border
    values for out-of-range taps and zeroes their coordinate gradient.
    Returns (B, C, ...).
    """
    b, c, h, w = feature_map.shape
    r = coords[..., 0].clamp(0, h - 1)
    col = coords[..., 1].clamp(0, w - 1)
    r0 = r.floor()
    c0 = col.floor()
    fr = r - r0
    fc = col - c0
    r0l = r0.long()
    c0l = c0.long()
    r1l = (r0l + 1).clamp(max=h - 1)
    c1l = (c0l + 1).clamp(max=w - 1)

    flat = feature_map.reshape(b, c, h * w)
    spatial = coords.shape[1:-1]

    def take(rl, cl):
        idx = (rl * w + cl).reshape(b, 1, -1).expand(b, c, -1)
        return flat.gather(2, idx).reshape(b, c, *spatial)

    fr = fr.unsqueeze(1)
    fc = fc.unsqueeze(1)
    return (take(r0l, c0l) * (1 - fr) * (1 - fc)
            + take(r0l, c1l) * (1 - fr) * fc
            + take(r1l, c0l) * fr * (1 - fc)
            + take(r1l, c1l) * fr * fc)


def bilinear_sample(feature_map: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Bilinear interpolation of (C, H, W) features at fractional (row, col).

    coords: (..., 2). Out-of-range coordinates are clamped to the border.
    Returns (C, ...).
    """
    if feature_map.ndim != 3 or feature_map.numel() == 0:
        raise ValueError(f"feature_map must be a nonempty (C, H, W) array, got {tuple(feature_map.shape)}")
    return _bilinear_gather(feature_map.unsqueeze(0), coords.unsqueeze(0)).squeeze(0)


def snake_conv2d(feature_map: torch.Tensor, spec: SnakeKernelSpec,
                 bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Apply one snake kernel. Accepts (C, H, W) or (B, C, H, W) features.

    Output spatial size equals the input's; border taps clamp (same-padding).
    """
    squeeze = feature_map.ndim == 3
    x = feature_map.unsqueeze(0) if squeeze else feature_map
    if x.ndim != 4:
        raise ValueError(f"feature_map must be (C, H, W) or (B, C, H, W), got {tuple(feature_map.shape)}")
    b, c_in, h, w = x.shape
    if spec.weights.shape[1] != c_in:
        raise ValueError(
            f"weights expect {spec.weights.shape[1]} input channels, feature map has {c_in}")
    offsets = spec.offset_field
    if offsets.ndim == 3:
        offsets = offsets.unsqueeze(0).expand(b, *offsets.shape)
    if offsets.shape[0] != b or offsets.shape[2:] != (h, w):
        raise ValueError(
            f"offset_field shape {tuple(spec.offset_field.shape)} does not match features {tuple(x.shape)}")
    coords = snake_coordinates(offsets, spec.axis)          # (B, H, W, K, 2)
    samples = _bilinear_gather(x, coords)                   # (B, C_in, H, W, K)
    out = torch.einsum("bchwk,ock->bohw", samples, spec.weights)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out.squeeze(0) if squeeze else out


def snake_conv_gradient(feature_map: torch.Tensor, spec: SnakeKernelSpec,
                        upstream: torch.Tensor, bias: Optional[torch.Tensor] = None):
    """Gradients of snake_conv2d w.r.t. input, weights, and offsets.

    upstream holds d(loss)/d(output) with the output's shape. Returns the
    triple (grad_input, grad_weights, grad_offsets).
    """
    x = feature_map.detach().clone().requires_grad_(True)
    w = spec.weights.detach().clone().requires_grad_(True)
    o = spec.offset_field.detach().clone().requires_grad_(True)
    live = SnakeKernelSpec(w, o, spec.kernel_size, spec.axis)
    out = snake_conv2d(x, live, None if bias is None else bias.detach())
    if upstream.shape != out.shape:
        raise ValueError(f"upstream shape {tuple(upstream.shape)} != output shape {tuple(out.shape)}")
    out.backward(upstream)
    return x.grad, w.grad, o.grad


class SnakeConv2d(nn.Module):
    """Learned snake convolution layer.

    A small standard convolution predicts K offsets per output position for
    each requested axis (tanh keeps them in [-1, 1]); the snake kernels for
    all axes are applied and summed. Offset predictors start at zero so the
    layer behaves as a straight convolution until offsets are learned.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 9,
                 axes=AXES, bias: bool = True):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
        axes = tuple(axes)
        if not axes or any(a not in AXES for a in axes) or len(set(axes)) != len(axes):
            raise ValueError(f"axes must be a nonempty subset of {AXES} without repeats, got {axes!r}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.axes = axes
        self.weights = nn.ParameterDict({
            a: nn.Parameter(torch.randn(out_channels, in_channels, kernel_size) * 0.02)
            for a in axes
        })
        self.offset_predictors = nn.ModuleDict({
            a: nn.Conv2d(in_channels, kernel_size, 3, padding=1) for a in axes
        })
        for pred in self.offset_predictors.values():
            nn.init.zeros_(pred.weight)
            nn.init.zeros_(pred.bias)
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None

    def predicted_offsets(self, x: torch.Tensor, axis: str) -> torch.Tensor:
        return torch.tanh(self.offset_predictors[axis](x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = None
        for a in self.axes:
            spec = SnakeKernelSpec(self.weights[a], self.predicted_offsets(x, a),
                                   self.kernel_size, a)
            y = snake_conv2d(x, spec)
            out = y if out is None else out + y
        if self.bias is not None:
            out = out + self.bias.view(1, -1, 1, 1)
        return out
