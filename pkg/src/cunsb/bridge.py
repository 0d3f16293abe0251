"""Gaussian bridge between unpaired image distributions, on a uniform time grid.

The bridge pins two endpoints x_a (at time t_a) and x_b (at time t_b) and
describes the intermediate state at time t as a Gaussian whose mean linearly
interpolates the endpoints and whose variance vanishes at both ends:

    s        = (t - t_a) / (t_b - t_a)
    mean     = s * x_b + (1 - s) * x_a
    variance = s * (1 - s) * tau * (t_b - t_a)        (isotropic, per pixel)

Chaining a learned endpoint predictor with bridge sampling over sub-intervals
yields the forward simulation used for training and the stepwise sampler used
for inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch

Generator = Callable[[torch.Tensor, int], torch.Tensor]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, 1] into `num_steps` intervals."""

    num_steps: int
    points: tuple = field(init=False)

    def __post_init__(self):
        if not isinstance(self.num_steps, int) or self.num_steps < 1:
            raise ValueError(f"num_steps must be a positive integer, got {self.num_steps!r}")
        pts = tuple(i / self.num_steps for i in range(self.num_steps + 1))
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i: int) -> float:
        return self.points[i]


@dataclass(frozen=True)
class BridgeConfig:
    """Diffusion strength and step count for the bridge process.

    tau = 0 degenerates to deterministic linear interpolation.
    """

    tau: float = 0.01
    num_steps: int = 5

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not isinstance(self.num_steps, int) or self.num_steps < 1:
            raise ValueError(f"num_steps must be a positive integer, got {self.num_steps!r}")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.num_steps)


@dataclass
class BridgeSampleStats:
    """Empirical first two moments of a set of bridge samples."""

    empirical_mean: torch.Tensor
    empirical_variance: torch.Tensor
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if torch.any(self.empirical_variance < 0):
            raise ValueError("empirical variance must be nonnegative elementwise")

    @classmethod
    def from_samples(cls, samples: torch.Tensor) -> "BridgeSampleStats":
        """Reduce a stack of samples (first dim indexes the sample) to stats.

        Variance is the population variance computed as E[x^2] - E[x]^2,
        clamped at 0 to absorb rounding.
        """
        if samples.ndim < 1 or samples.shape[0] < 1:
            raise ValueError("need at least one sample")
        mean = samples.mean(dim=0)
        var = (samples * samples).mean(dim=0) - mean * mean
        return cls(mean, var.clamp_min(0), samples.shape[0])


def interpolation_fraction(t: float, t_a: float, t_b: float) -> float:
    """Fraction s in [0, 1] of the way from t_a to t_b.

    Errors on a degenerate or reversed interval and on t outside it.
    """
    if not t_b > t_a:
        raise ValueError(f"need t_a < t_b, got t_a={t_a}, t_b={t_b}")
    if t < t_a or t > t_b:
        raise ValueError(f"t={t} outside [{t_a}, {t_b}]")
    return (t - t_a) / (t_b - t_a)


def bridge_posterior(x_a, x_b, t, t_a, t_b, tau):
    """Mean image and scalar per-pixel variance of the bridge at time t."""
    if x_a.shape != x_b.shape:
        raise ValueError(f"endpoint shapes differ: {tuple(x_a.shape)} vs {tuple(x_b.shape)}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    s = interpolation_fraction(t, t_a, t_b)
    mean = s * x_b + (1.0 - s) * x_a
    variance = s * (1.0 - s) * tau * (t_b - t_a)
    return mean, variance


def sample_bridge(x_a, x_b, t, t_a, t_b, tau, rng: Optional[torch.Generator] = None):
    """Draw one bridge sample: mean + sqrt(variance) * eps, eps ~ N(0, I).

    A noise tensor is drawn even when the variance is zero so the consumed
    rng stream does not depend on t or tau; sqrt(0) * eps contributes exactly
    nothing, so tau = 0 (or t at an endpoint) returns the mean untouched.
    """
    mean, variance = bridge_posterior(x_a, x_b, t, t_a, t_b, tau)
    eps = torch.randn(mean.shape, generator=rng, dtype=mean.dtype, device=mean.device)
    return mean + math.sqrt(variance) * eps


def simulate_forward(x_0, generator: Generator, target_index: int, config: BridgeConfig,
                     rng: Optional[torch.Generator] = None):
    """March x_0 to the grid point t_i by alternating prediction and bridging.

    Each sub-step predicts the far endpoint with the generator, then samples
    the bridge over [t_j, 1] at the next grid time. Runs without gradient
    tracking; the result is detached (training treats it as an input sample).
    """
    grid = config.grid
    if not isinstance(target_index, int) or not 0 <= target_index <= config.num_steps - 1:
        raise ValueError(
            f"target_index must be an int in [0, {config.num_steps - 1}], got {target_index!r}")
    with torch.no_grad():
        x = x_0.detach().clone()
        for j in range(target_index):
            x_end = generator(x, j, rng=rng)
            if x_end.shape != x.shape:
                raise ValueError(
                    f"generator changed the sample shape: {tuple(x.shape)} -> {tuple(x_end.shape)}")
            x = sample_bridge(x, x_end, grid[j + 1], grid[j], 1.0, config.tau, rng)
    return x


def infer(x_0, generator: Generator, config: BridgeConfig, emit_intermediates: bool = True,
          rng: Optional[torch.Generator] = None, output_step: int = 0):
    """Run the stepwise sampler from x_0 and collect endpoint predictions.

    At each grid index i the generator predicts the clean endpoint; the state
    then advances by bridge-sampling toward that prediction with fresh noise.
    Returns all num_steps predictions in order, or a single-element list with
    the prediction at `output_step` when emit_intermediates is False.
    """
    n = config.num_steps
    if not isinstance(output_step, int) or not 0 <= output_step <= n - 1:
        raise ValueError(f"output_step must be an int in [0, {n - 1}], got {output_step!r}")
    grid = config.grid
    outputs = []
    with torch.no_grad():
        x = x_0.detach().clone()
        for i in range(n):
            x_end = generator(x, i, rng=rng)
            if x_end.shape != x.shape:
                raise ValueError(
                    f"generator changed the sample shape: {tuple(x.shape)} -> {tuple(x_end.shape)}")
            outputs.append(x_end.detach().clone())
            if i < n - 1:
                x = sample_bridge(x, x_end, grid[i + 1], grid[i], 1.0, config.tau, rng)
    if emit_intermediates:
        return outputs
    return [outputs[output_step]]
