"""Networks: time-conditioned U-Net generator with snake-conv blocks, patch
discriminator, entropy critic, and the contrastive projection heads.

The generator consumes an image plus an integer time index, injects a fresh
Gaussian noise vector in the bottleneck (broadcast spatially, concatenated
channel-wise), and maps back to [-1, 1]. Nine internal feature maps are
exposed as extraction points for the contrastive loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .snake_conv import AXES, SnakeConv2d

NUM_PROJECTION_HEADS = 9


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_channels: int = 64
    depth: int = 3
    time_embed_dim: int = 128
    noise_dim: int = 64
    dsc_kernel_size: int = 9
    num_timesteps: int = 5
    snake_axes: tuple = AXES
    use_skip_connections: bool = True

    def __post_init__(self):
        for name in ("in_channels", "base_channels", "depth", "time_embed_dim", "noise_dim",
                     "num_timesteps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.dsc_kernel_size < 1 or self.dsc_kernel_size % 2 == 0:
            raise ValueError(f"dsc_kernel_size must be odd, got {self.dsc_kernel_size}")
        axes = tuple(self.snake_axes)
        if not axes or any(a not in AXES for a in axes):
            raise ValueError(f"snake_axes must be a nonempty subset of {AXES}, got {axes!r}")
        object.__setattr__(self, "snake_axes", axes)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    base_channels: int = 64
    num_layers: int = 3
    time_embed_dim: int = 128
    num_timesteps: int = 5

    def __post_init__(self):
        for name in ("in_channels", "base_channels", "num_layers", "time_embed_dim",
                     "num_timesteps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def init_weights(module: nn.Module, std: float = 0.02):
    """Normal(0, std) on conv/linear weights, zero biases; norms keep defaults."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def sinusoidal_embedding(t_index: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Fixed sin/cos position code of an integer time index."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype, device=device) / half)
    angles = t_index * freqs
    emb = torch.cat([torch.sin(angles), torch.cos(angles)])
    if dim % 2 == 1:
        emb = torch.cat([emb, torch.zeros(1, dtype=dtype, device=device)])
    return emb


class TimeEmbedding(nn.Module):
    """Sinusoidal code of t_index refined by a two-layer projection."""

    def __init__(self, dim: int, num_timesteps: int):
        super().__init__()
        self.dim = dim
        self.num_timesteps = num_timesteps
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t_index: int, dtype, device) -> torch.Tensor:
        if not isinstance(t_index, int) or not 0 <= t_index < self.num_timesteps:
            raise ValueError(
                f"t_index must be an int in [0, {self.num_timesteps - 1}], got {t_index!r}")
        return self.mlp(sinusoidal_embedding(t_index, self.dim, dtype, device))


def _conv_block(c_in: int, c_out: int, stride: int = 1) -> nn.Sequential:
    k = 4 if stride == 2 else 3
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, k, stride=stride, padding=1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(inplace=True),
    )


class _SnakeBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, axes):
        super().__init__()
        self.conv = SnakeConv2d(c_in, c_out, kernel_size, axes)
        self.norm = nn.InstanceNorm2d(c_out, affine=True)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class Generator(nn.Module):
    """U-Net-like endpoint predictor with snake-conv blocks.

    Encoder stages pair a snake-conv block with a strided downsample; two
    bottleneck blocks receive the time embedding and the spatially broadcast
    noise vector; decoder stages upsample and re-join the encoder skips.
    Output is tanh-bounded to [-1, 1].
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        cfg = config
        base = cfg.base_channels
        self.stem = _conv_block(cfg.in_channels, base)
        taps = [base]

        self.enc_snakes = nn.ModuleList()
        self.enc_downs = nn.ModuleList()
        ch = base
        for _ in range(cfg.depth):
            self.enc_snakes.append(_SnakeBlock(ch, ch, cfg.dsc_kernel_size, cfg.snake_axes))
            taps.append(ch)
            self.enc_downs.append(_conv_block(ch, ch * 2, stride=2))
            ch *= 2
            taps.append(ch)

        mid = ch
        self.time_embed = TimeEmbedding(cfg.time_embed_dim, cfg.num_timesteps)
        self.time_proj1 = nn.Linear(cfg.time_embed_dim, mid)
        self.time_proj2 = nn.Linear(cfg.time_embed_dim, mid)
        self.bott1 = nn.Sequential(
            nn.Conv2d(mid + cfg.noise_dim, mid, 3, padding=1),
            nn.InstanceNorm2d(mid, affine=True),
        )
        self.bott2 = nn.Sequential(
            nn.Conv2d(mid, mid, 3, padding=1),
            nn.InstanceNorm2d(mid, affine=True),
        )
        taps.extend([mid, mid])

        self.dec_ups = nn.ModuleList()
        self.dec_snakes = nn.ModuleList()
        for _ in range(cfg.depth):
            half = ch // 2
            self.dec_ups.append(nn.Sequential(
                nn.ConvTranspose2d(ch, half, 4, stride=2, padding=1),
                nn.InstanceNorm2d(half, affine=True),
                nn.ReLU(inplace=True),
            ))
            self.dec_snakes.append(_SnakeBlock(half * 2, half, cfg.dsc_kernel_size, cfg.snake_axes))
            ch = half
        self.head = nn.Conv2d(base, cfg.in_channels, 3, padding=1)

        # nine contrastive extraction points, spread evenly over the taps
        n = len(taps)
        self._tap_select = [round(i * (n - 1) / (NUM_PROJECTION_HEADS - 1))
                            for i in range(NUM_PROJECTION_HEADS)]
        self.feature_channels = [taps[i] for i in self._tap_select]
        init_weights(self)

    def _check_input(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        factor = 2 ** self.config.depth
        if h % factor or w % factor:
            raise ValueError(f"spatial dims must be divisible by {factor}, got {h}x{w}")

    def draw_noise(self, batch: int, rng: Optional[torch.Generator] = None,
                   dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.randn(batch, self.config.noise_dim, generator=rng, dtype=dtype, device=device)

    def _run(self, x, t_index: int, noise: torch.Tensor, use_skips: bool):
        self._check_input(x)
        cfg = self.config
        if noise.shape != (x.shape[0], cfg.noise_dim):
            raise ValueError(
                f"noise must have shape ({x.shape[0]}, {cfg.noise_dim}), got {tuple(noise.shape)}")
        t_emb = self.time_embed(t_index, x.dtype, x.device)

        taps = []
        h = self.stem(x)
        taps.append(h)
        skips = []
        for snake, down in zip(self.enc_snakes, self.enc_downs):
            h = snake(h)
            skips.append(h)
            taps.append(h)
            h = down(h)
            taps.append(h)

        noise_map = noise[:, :, None, None].expand(-1, -1, h.shape[-2], h.shape[-1])
        h = self.bott1(torch.cat([h, noise_map], dim=1))
        h = torch.relu(h + self.time_proj1(t_emb).view(1, -1, 1, 1))
        taps.append(h)
        h = self.bott2(h)
        h = torch.relu(h + self.time_proj2(t_emb).view(1, -1, 1, 1))
        taps.append(h)

        for up, snake, skip in zip(self.dec_ups, self.dec_snakes, reversed(skips)):
            h = up(h)
            joined = skip if use_skips else torch.zeros_like(skip)
            h = snake(torch.cat([h, joined], dim=1))
        out = torch.tanh(self.head(h))
        return out, [taps[i] for i in self._tap_select]

    def forward(self, x, t_index: int, rng: Optional[torch.Generator] = None,
                noise: Optional[torch.Tensor] = None,
                use_skips: Optional[bool] = None) -> torch.Tensor:
        if noise is None:
            noise = self.draw_noise(x.shape[0], rng, x.dtype, x.device)
        skips = self.config.use_skip_connections if use_skips is None else use_skips
        return self._run(x, t_index, noise, skips)[0]

    def forward_with_features(self, x, t_index: int, rng: Optional[torch.Generator] = None,
                              noise: Optional[torch.Tensor] = None):
        """Image prediction plus the nine extraction-point feature maps."""
        if noise is None:
            noise = self.draw_noise(x.shape[0], rng, x.dtype, x.device)
        return self._run(x, t_index, noise, self.config.use_skip_connections)

    def features(self, x, t_index: int, rng: Optional[torch.Generator] = None,
                 noise: Optional[torch.Tensor] = None):
        return self.forward_with_features(x, t_index, rng, noise)[1]


class Discriminator(nn.Module):
    """Strided patch discriminator emitting a spatial logit map, time-conditioned."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        base = config.base_channels
        self.first = nn.Conv2d(config.in_channels, base, 4, stride=2, padding=1)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.time_embed = TimeEmbedding(config.time_embed_dim, config.num_timesteps)
        self.time_proj = nn.Linear(config.time_embed_dim, base)
        layers = []
        ch = base
        for k in range(1, config.num_layers):
            nxt = min(base * 2 ** k, base * 8)
            layers += [
                nn.Conv2d(ch, nxt, 4, stride=2, padding=1),
                nn.InstanceNorm2d(nxt, affine=True),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch = nxt
        self.body = nn.Sequential(*layers)
        self.final = nn.Conv2d(ch, 1, 4, stride=1, padding=1)
        init_weights(self)

    def forward(self, x, t_index: int) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, H, W) input, got {tuple(x.shape)}")
        # strided stages halve the map; the final 4x4 stride-1 conv needs >= 2
        need = 2 ** (self.config.num_layers + 1)
        if min(x.shape[-2:]) < need:
            raise ValueError(
                f"input {tuple(x.shape)} too small for {self.config.num_layers} layers (needs >= {need})")
        t_emb = self.time_embed(t_index, x.dtype, x.device)
        h = self.act(self.first(x))
        h = h + self.time_proj(t_emb).view(1, -1, 1, 1)
        h = self.body(h)
        return self.final(h)


class EntropyCritic(nn.Module):
    """Small conv critic T(x_a, x_b) on channel-concatenated image pairs."""

    def __init__(self, in_channels: int = 3, base_channels: int = 32):
        super().__init__()
        self.in_channels = in_channels
        self.net = nn.Sequential(
            nn.Conv2d(2 * in_channels, base_channels, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(base_channels, 2 * base_channels, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.project = nn.Sequential(
            nn.Linear(2 * base_channels, base_channels),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(base_channels, 1),
        )
        init_weights(self)

    def forward(self, x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
        if x_a.shape != x_b.shape:
            raise ValueError(f"pair shapes differ: {tuple(x_a.shape)} vs {tuple(x_b.shape)}")
        h = self.net(torch.cat([x_a, x_b], dim=1))
        return self.project(h.mean(dim=(-2, -1))).squeeze(-1)


def mi_estimator_forward(critic: EntropyCritic, x_a: torch.Tensor,
                         x_b: torch.Tensor) -> torch.Tensor:
    """Donsker-Varadhan statistic of the critic on a paired batch.

    mean T over the joint pairs minus log-mean-exp of T over the product
    pairs, where the product expectation runs over every ordered off-diagonal
    pair (i != j). Using all pairs keeps the statistic deterministic and
    exactly invariant to a common permutation of the batch.
    """
    if x_a.shape != x_b.shape:
        raise ValueError(f"pair shapes differ: {tuple(x_a.shape)} vs {tuple(x_b.shape)}")
    b = x_a.shape[0]
    if b < 2:
        raise ValueError(f"need a batch of at least 2 to form marginal pairs, got {b}")
    t_joint = critic(x_a, x_b)
    ii = torch.arange(b).repeat_interleave(b)
    jj = torch.arange(b).repeat(b)
    off = ii != jj
    t_marg = critic(x_a[ii[off]], x_b[jj[off]])
    n_pairs = b * b - b
    return t_joint.mean() - (torch.logsumexp(t_marg, dim=0) - math.log(n_pairs))


class ProjectionHeadSet(nn.Module):
    """Exactly nine two-layer MLP heads, one per feature extraction point."""

    def __init__(self, feature_channels: Sequence[int], embed_dim: int = 256):
        super().__init__()
        channels = list(feature_channels)
        if len(channels) != NUM_PROJECTION_HEADS:
            raise ValueError(
                f"expected {NUM_PROJECTION_HEADS} feature channel counts, got {len(channels)}")
        if embed_dim < 1:
            raise ValueError(f"embed_dim must be positive, got {embed_dim}")
        self.embed_dim = embed_dim
        self.heads = nn.ModuleList([
            nn.Sequential(nn.Linear(c, embed_dim), nn.ReLU(inplace=True),
                          nn.Linear(embed_dim, embed_dim))
            for c in channels
        ])
        init_weights(self)

    @classmethod
    def for_generator(cls, generator: Generator, embed_dim: int = 256) -> "ProjectionHeadSet":
        return cls(generator.feature_channels, embed_dim)

    def __len__(self):
        return len(self.heads)

    def __getitem__(self, i: int) -> nn.Module:
        return self.heads[i]
