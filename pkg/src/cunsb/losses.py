"""Training objectives: least-squares adversarial, transport-entropy, SSIM, PatchNCE.

The composite objective is

    total = adv + lambda_sb * (sb_transport - 2*tau*(1 - t_i) * sb_entropy)
                + lambda_s  * (ssim_gen + ssim_idt) / 2
                + lambda_p  * patchnce

computed identically for differentiable tensors (training) and plain floats
(reporting), so the logged LossReport always satisfies the same decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import torch
import torch.nn.functional as F

# standard multi-scale SSIM scale weights, truncated and renormalized per `scales`
_MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

_PART_KEYS = ("adv", "sb_transport", "sb_entropy", "ssim_gen", "ssim_idt", "patchnce")


@dataclass(frozen=True)
class LossWeights:
    """Balancing coefficients of the composite objective."""

    lambda_sb: float = 1.0
    lambda_p: float = 1.0
    lambda_s: float = 0.8

    def __post_init__(self):
        for name in ("lambda_sb", "lambda_p", "lambda_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass
class LossReport:
    """Scalar loss parts for one training step, as logged to CSV."""

    adv: float
    sb_transport: float
    sb_entropy: float
    ssim_gen: float
    ssim_idt: float
    patchnce: float
    total: float

    FIELDS = ("adv", "sb_transport", "sb_entropy", "ssim_gen", "ssim_idt", "patchnce", "total")

    def as_row(self):
        return [getattr(self, f) for f in self.FIELDS]


def adversarial_loss(real_logits: Optional[torch.Tensor], fake_logits: torch.Tensor,
                     role: str) -> torch.Tensor:
    """Least-squares GAN loss over patch logit maps.

    discriminator: mean((real - 1)^2) + mean(fake^2)
    generator:     mean((fake - 1)^2)        (real logits unused, may be None)
    """
    if role not in ("generator", "discriminator"):
        raise ValueError(f"role must be 'generator' or 'discriminator', got {role!r}")
    if real_logits is not None and real_logits.shape != fake_logits.shape:
        raise ValueError(
            f"logit shapes differ: {tuple(real_logits.shape)} vs {tuple(fake_logits.shape)}")
    if role == "generator":
        return (fake_logits - 1.0).square().mean()
    if real_logits is None:
        raise ValueError("discriminator loss needs real logits")
    return (real_logits - 1.0).square().mean() + fake_logits.square().mean()


def sb_loss(x_ti: torch.Tensor, x1_hat: torch.Tensor, t_i: float, tau: float,
            mi_statistic) -> torch.Tensor:
    """Transport cost minus the entropy surrogate with its horizon coefficient.

    When 2*tau*(1 - t_i) is exactly zero the transport term is returned
    untouched, so the statistic's value (even non-finite) cannot leak in.
    """
    if x_ti.shape != x1_hat.shape:
        raise ValueError(f"batch shapes differ: {tuple(x_ti.shape)} vs {tuple(x1_hat.shape)}")
    if not 0.0 <= t_i <= 1.0:
        raise ValueError(f"t_i must lie in [0, 1], got {t_i}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    transport = (x_ti - x1_hat).square().mean()
    coeff = 2.0 * tau * (1.0 - t_i)
    if coeff == 0.0:
        return transport
    return transport - coeff * mi_statistic


def _gaussian_kernel1d(window: int, sigma: float, dtype, device) -> torch.Tensor:
    radius = (window - 1) // 2
    x = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _ssim_map_mean(a: torch.Tensor, b: torch.Tensor, window: int, data_range: float):
    """Mean SSIM and mean contrast-structure term over the valid interior.

    Gaussian-weighted local statistics (sigma 1.5, population covariance),
    computed as valid-mode separable convolutions per channel.
    """
    c = a.shape[1]
    kernel = _gaussian_kernel1d(window, 1.5, a.dtype, a.device)
    kr = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    kc = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)

    def blur(x):
        x = F.conv2d(x, kr, groups=c)
        return F.conv2d(x, kc, groups=c)

    mu_a = blur(a)
    mu_b = blur(b)
    e_aa = blur(a * a)
    e_bb = blur(b * b)
    e_ab = blur(a * b)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    cs_map = (2 * cov + c2) / (var_a + var_b + c2)
    ssim_map = ((2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)) * cs_map
    return ssim_map.mean(), cs_map.mean()


def _as_batched(x: torch.Tensor) -> torch.Tensor:
    if x.ndim == 2:
        return x.unsqueeze(0).unsqueeze(0)
    if x.ndim == 3:
        return x.unsqueeze(0)
    if x.ndim == 4:
        return x
    raise ValueError(f"expected 2-4 dims, got shape {tuple(x.shape)}")


def ssim_index(a: torch.Tensor, b: torch.Tensor, window: int = 11, scales: int = 3,
               data_range: float = 2.0) -> torch.Tensor:
    """Multi-scale structural similarity, scalar in [-1, 1].

    scales=1 is the plain Gaussian-window SSIM mean. For scales > 1 the usual
    product form applies: contrast-structure terms at the finer scales and the
    full index at the coarsest, each raised to the truncated-renormalized
    standard weight. A non-positive term contributes exactly 0 (with zero
    gradient), keeping the product real for anticorrelated inputs and the
    gradient finite everywhere. Downsampling is 2x2 average pooling.
    Computed in float64; differentiable.
    """
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if scales < 1:
        raise ValueError(f"scales must be >= 1, got {scales}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    if scales > len(_MS_WEIGHTS):
        raise ValueError(f"at most {len(_MS_WEIGHTS)} scales supported, got {scales}")
    a4 = _as_batched(a).double()
    b4 = _as_batched(b).double()
    h, w = a4.shape[-2:]
    need = window * 2 ** (scales - 1)
    if min(h, w) < need:
        raise ValueError(
            f"image {h}x{w} too small for window {window} at {scales} scales (needs >= {need})")
    if scales == 1:
        return _ssim_map_mean(a4, b4, window, data_range)[0]

    weights = torch.tensor(_MS_WEIGHTS[:scales], dtype=torch.float64)
    weights = weights / weights.sum()
    result = None
    for s in range(scales):
        ssim_s, cs_s = _ssim_map_mean(a4, b4, window, data_range)
        raw = ssim_s if s == scales - 1 else cs_s
        term = torch.where(raw > 0, raw.clamp_min(1e-12) ** weights[s], torch.zeros_like(raw))
        result = term if result is None else result * term
        if s < scales - 1:
            hh, ww = a4.shape[-2:]
            a4 = F.avg_pool2d(a4[..., :hh - hh % 2, :ww - ww % 2], 2)
            b4 = F.avg_pool2d(b4[..., :hh - hh % 2, :ww - ww % 2], 2)
    return result


def ssim_regularization(x_ti, x1_hat_ti, x_1, x1_hat_identity, window: int = 11,
                        scales: int = 3, data_range: float = 2.0) -> torch.Tensor:
    """Average SSIM dissimilarity over the generation and identity branches."""
    gen_half = 1.0 - ssim_index(x_ti, x1_hat_ti, window, scales, data_range)
    idt_half = 1.0 - ssim_index(x_1, x1_hat_identity, window, scales, data_range)
    return (gen_half + idt_half) / 2.0


def patchnce_loss(source_features: Sequence[torch.Tensor],
                  generated_features: Sequence[torch.Tensor],
                  projection_heads, temperature: float = 0.07, num_patches: int = 256,
                  rng: Optional[torch.Generator] = None,
                  patch_ids: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
    """Contrastive patch matching across feature layers.

    For each layer, num_patches locations are sampled (the same locations in
    the source and generated maps), embedded by that layer's head, and each
    generated patch must match its co-located source patch against the other
    sampled locations. patch_ids overrides the sampling when given.
    """
    if len(source_features) != len(generated_features) or len(source_features) != len(projection_heads):
        raise ValueError(
            f"got {len(source_features)} source / {len(generated_features)} generated feature maps "
            f"for {len(projection_heads)} heads")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if num_patches < 1:
        raise ValueError(f"num_patches must be >= 1, got {num_patches}")
    total = None
    for layer, (src, gen) in enumerate(zip(source_features, generated_features)):
        if src.shape != gen.shape:
            raise ValueError(f"layer {layer}: feature shapes differ")
        b, c, h, w = src.shape
        hw = h * w
        if patch_ids is not None:
            ids = patch_ids[layer]
        else:
            if hw < num_patches:
                raise ValueError(
                    f"layer {layer}: {hw} spatial locations < num_patches={num_patches}")
            ids = torch.randperm(hw, generator=rng, device=src.device)[:num_patches]
        p = ids.numel()
        head = projection_heads[layer]
        src_p = src.permute(0, 2, 3, 1).reshape(b, hw, c)[:, ids]
        gen_p = gen.permute(0, 2, 3, 1).reshape(b, hw, c)[:, ids]
        src_e = F.normalize(head(src_p.reshape(b * p, c)).reshape(b, p, -1), dim=-1)
        gen_e = F.normalize(head(gen_p.reshape(b * p, c)).reshape(b, p, -1), dim=-1)
        pos = (gen_e * src_e).sum(-1, keepdim=True)
        sim = torch.bmm(gen_e, src_e.transpose(1, 2))
        off_diag = ~torch.eye(p, dtype=torch.bool, device=src.device)
        negs = sim[off_diag.expand(b, p, p)].reshape(b, p, p - 1)
        logits = torch.cat([pos, negs], dim=-1) / temperature
        target = torch.zeros(b * p, dtype=torch.long, device=src.device)
        layer_loss = F.cross_entropy(logits.reshape(b * p, p), target)
        total = layer_loss if total is None else total + layer_loss
    return total / len(source_features)


def compose_total(parts: Mapping, weights: LossWeights, t_i: float, tau: float):
    """Weighted objective from named parts; works on tensors or floats alike."""
    missing = [k for k in _PART_KEYS if k not in parts]
    if missing:
        raise ValueError(f"missing loss parts: {missing}")
    coeff = 2.0 * tau * (1.0 - t_i)
    sb = parts["sb_transport"]
    if coeff != 0.0:
        sb = sb - coeff * parts["sb_entropy"]
    return (parts["adv"]
            + weights.lambda_sb * sb
            + weights.lambda_s * (parts["ssim_gen"] + parts["ssim_idt"]) / 2.0
            + weights.lambda_p * parts["patchnce"])


def total_loss(parts: Mapping, weights: LossWeights, t_i: float, tau: float) -> LossReport:
    """Reduce computed parts to a LossReport with the composed total."""
    vals = {}
    for k in _PART_KEYS:
        if k not in parts:
            raise ValueError(f"missing loss part: {k}")
        v = parts[k]
        vals[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
    return LossReport(total=compose_total(vals, weights, t_i, tau), **vals)
