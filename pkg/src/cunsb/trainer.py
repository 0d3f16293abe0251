"""Adversarial training loop over the stepwise bridge sampler.

Each step draws a random time index, marches the low-quality batch to that
grid time without gradients, and then runs three alternating updates:
discriminator (least-squares real/fake), entropy critic (maximize the
Donsker-Varadhan statistic on joint vs shuffled pairs), and generator plus
projection heads on the composed objective. All randomness flows through one
torch.Generator owned by the state, so fixed-seed runs are bit-reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import torch
from torch import optim

from .bridge import BridgeConfig, simulate_forward
from .errors import CheckpointError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    compose_total,
    patchnce_loss,
    ssim_index,
    total_loss,
)
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    EntropyCritic,
    Generator,
    GeneratorConfig,
    ProjectionHeadSet,
    mi_estimator_forward,
)

CHECKPOINT_MAGIC = "CUNSB-CKPT-v1"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters plus the nested model/bridge configurations."""

    epochs: int = 130
    decay_start_epoch: int = 80
    batch_size: int = 8
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weights: LossWeights = LossWeights()
    bridge: BridgeConfig = BridgeConfig()
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    critic_base_channels: int = 32
    nce_num_patches: int = 256
    nce_temperature: float = 0.07
    nce_embed_dim: int = 256
    ssim_window: int = 11
    ssim_scales: int = 3
    image_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.decay_start_epoch < self.epochs:
            raise ValueError(
                f"decay_start_epoch must lie in [0, {self.epochs}), got {self.decay_start_epoch}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0 <= beta < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {beta}")
        for name in ("critic_base_channels", "nce_num_patches", "nce_embed_dim",
                     "ssim_window", "ssim_scales"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.nce_temperature <= 0:
            raise ValueError(f"nce_temperature must be positive, got {self.nce_temperature}")
        # the time index ranges over the same grid everywhere
        if self.generator.num_timesteps != self.bridge.num_steps:
            raise ValueError(
                f"generator.num_timesteps ({self.generator.num_timesteps}) must equal "
                f"bridge.num_steps ({self.bridge.num_steps})")
        if self.discriminator.num_timesteps != self.bridge.num_steps:
            raise ValueError(
                f"discriminator.num_timesteps ({self.discriminator.num_timesteps}) must equal "
                f"bridge.num_steps ({self.bridge.num_steps})")


@dataclass
class TrainState:
    """Networks, optimizers, rng, and progress counters for one run."""

    config: TrainConfig
    generator: Generator
    discriminator: Discriminator
    critic: EntropyCritic
    heads: ProjectionHeadSet
    opt_generator: optim.Optimizer
    opt_discriminator: optim.Optimizer
    opt_critic: optim.Optimizer
    rng: torch.Generator
    step: int = 0
    epoch: int = 0


def build_state(config: TrainConfig) -> TrainState:
    """Construct freshly initialized networks and optimizers from the seed."""
    torch.manual_seed(config.seed)
    generator = Generator(config.generator)
    discriminator = Discriminator(config.discriminator)
    critic = EntropyCritic(config.generator.in_channels, config.critic_base_channels)
    heads = ProjectionHeadSet.for_generator(generator, config.nce_embed_dim)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = optim.Adam(list(generator.parameters()) + list(heads.parameters()),
                       lr=config.learning_rate, betas=betas)
    opt_d = optim.Adam(discriminator.parameters(), lr=config.learning_rate, betas=betas)
    opt_c = optim.Adam(critic.parameters(), lr=config.learning_rate, betas=betas)
    rng = torch.Generator()
    rng.manual_seed(config.seed)
    return TrainState(config, generator, discriminator, critic, heads,
                      opt_g, opt_d, opt_c, rng)


def select_time_step(rng: torch.Generator, num_steps: int) -> int:
    """Uniform index in {0, ..., num_steps - 1}."""
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    return int(torch.randint(0, num_steps, (1,), generator=rng).item())


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Constant learning rate, then a linear ramp to 0 over the tail epochs."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch must lie in [0, {config.epochs}), got {epoch}")
    if epoch < config.decay_start_epoch:
        return config.learning_rate
    span = config.epochs - config.decay_start_epoch
    return config.learning_rate * (config.epochs - epoch) / span


def _set_lr(optimizer: optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def train_step(batch_low: torch.Tensor, batch_high: torch.Tensor,
               state: TrainState) -> LossReport:
    """One alternating update: discriminator, entropy critic, then generator.

    batch_low and batch_high are unpaired (B, C, H, W) batches from the
    degraded and clean domains. Returns the generator-side loss report.
    """
    if batch_low.ndim != 4 or batch_high.ndim != 4:
        raise ValueError("batches must be 4D (B, C, H, W)")
    if batch_low.shape[0] == 0 or batch_high.shape[0] == 0:
        raise ValueError("empty batch")
    if batch_low.shape != batch_high.shape:
        raise ValueError(
            f"batch shape mismatch: {tuple(batch_low.shape)} vs {tuple(batch_high.shape)}")
    cfg = state.config
    tau = cfg.bridge.tau
    t_index = select_time_step(state.rng, cfg.bridge.num_steps)
    t_i = cfg.bridge.grid[t_index]

    # march to the drawn grid time; the result carries no graph
    x_ti = simulate_forward(batch_low, state.generator, t_index, cfg.bridge, state.rng)

    noise = state.generator.draw_noise(batch_low.shape[0], state.rng)
    fake, source_features = state.generator.forward_with_features(x_ti, t_index, noise=noise)

    state.opt_discriminator.zero_grad()
    d_loss = adversarial_loss(state.discriminator(batch_high, t_index),
                              state.discriminator(fake.detach(), t_index),
                              role="discriminator")
    d_loss.backward()
    state.opt_discriminator.step()

    state.opt_critic.zero_grad()
    critic_stat = mi_estimator_forward(state.critic, x_ti, fake.detach())
    (-critic_stat).backward()
    state.opt_critic.step()

    state.opt_generator.zero_grad()
    adv = adversarial_loss(None, state.discriminator(fake, t_index), role="generator")
    mi_stat = mi_estimator_forward(state.critic, x_ti, fake)
    transport = torch.mean((x_ti - fake) ** 2)
    idt_noise = state.generator.draw_noise(batch_high.shape[0], state.rng)
    identity = state.generator(batch_high, t_index, noise=idt_noise)
    ssim_kwargs = dict(window=cfg.ssim_window, scales=cfg.ssim_scales, data_range=2.0)
    ssim_gen = 1.0 - ssim_index(x_ti, fake, **ssim_kwargs)
    ssim_idt = 1.0 - ssim_index(batch_high, identity, **ssim_kwargs)
    feat_noise = state.generator.draw_noise(batch_low.shape[0], state.rng)
    generated_features = state.generator.features(fake, t_index, noise=feat_noise)
    nce = patchnce_loss(source_features, generated_features, state.heads,
                        temperature=cfg.nce_temperature,
                        num_patches=cfg.nce_num_patches, rng=state.rng)
    parts = {"adv": adv, "sb_transport": transport, "sb_entropy": mi_stat,
             "ssim_gen": ssim_gen, "ssim_idt": ssim_idt, "patchnce": nce}
    compose_total(parts, cfg.weights, t_i, tau).backward()
    state.opt_generator.step()

    state.step += 1
    return total_loss(parts, cfg.weights, t_i, tau)


def _config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    try:
        weights = LossWeights(**d.pop("weights"))
        bridge = BridgeConfig(**d.pop("bridge"))
        gen = dict(d.pop("generator"))
        gen["snake_axes"] = tuple(gen.get("snake_axes", ()))
        generator = GeneratorConfig(**gen)
        discriminator = DiscriminatorConfig(**d.pop("discriminator"))
        return TrainConfig(weights=weights, bridge=bridge, generator=generator,
                           discriminator=discriminator, **d)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed config in checkpoint: {exc}")


def _flatten(d: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = tuple(value) if isinstance(value, list) else value
    return flat


def save_checkpoint(state: TrainState, path) -> None:
    """Serialize networks, optimizers, rng state, and progress counters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "magic": CHECKPOINT_MAGIC,
        "config": _config_to_dict(state.config),
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "critic": state.critic.state_dict(),
        "heads": state.heads.state_dict(),
        "opt_generator": state.opt_generator.state_dict(),
        "opt_discriminator": state.opt_discriminator.state_dict(),
        "opt_critic": state.opt_critic.state_dict(),
        "rng_state": state.rng.get_state(),
        "step": state.step,
        "epoch": state.epoch,
    }, path)


def load_checkpoint(path, expected_config: Optional[TrainConfig] = None) -> TrainState:
    """Restore a TrainState; round trips reproduce forward outputs exactly.

    Refuses files without the checkpoint magic, unreadable payloads, and
    (when expected_config is given) checkpoints whose stored configuration
    disagrees with it, naming the first differing field.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}")
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path} is not a recognized checkpoint (missing magic {CHECKPOINT_MAGIC!r})")
    try:
        config = _config_from_dict(payload["config"])
        if expected_config is not None:
            stored = _flatten(_config_to_dict(config))
            wanted = _flatten(_config_to_dict(expected_config))
            for key in sorted(set(stored) | set(wanted)):
                if stored.get(key) != wanted.get(key):
                    raise CheckpointError(
                        f"config mismatch at {key}: checkpoint has "
                        f"{stored.get(key)!r}, expected {wanted.get(key)!r}")
        state = build_state(config)
        state.generator.load_state_dict(payload["generator"])
        state.discriminator.load_state_dict(payload["discriminator"])
        state.critic.load_state_dict(payload["critic"])
        state.heads.load_state_dict(payload["heads"])
        state.opt_generator.load_state_dict(payload["opt_generator"])
        state.opt_discriminator.load_state_dict(payload["opt_discriminator"])
        state.opt_critic.load_state_dict(payload["opt_critic"])
        state.rng.set_state(payload["rng_state"])
        state.step = int(payload["step"])
        state.epoch = int(payload["epoch"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}")
    return state


def write_train_log(rows: List[Tuple[int, int, LossReport]], path) -> None:
    """Per-step CSV of loss parts: step, epoch, then the report fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "epoch") + LossReport.FIELDS)
        for step, epoch, report in rows:
            writer.writerow([step, epoch] + [str(v) for v in report.as_row()])


def plot_loss_curves(rows: List[Tuple[int, int, LossReport]], path) -> None:
    """Total and adversarial loss against the step counter."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [step for step, _, _ in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [r.total for _, _, r in rows], label="total")
    ax.plot(steps, [r.adv for _, _, r in rows], label="adversarial")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fit(state: TrainState, low: torch.Tensor, high: torch.Tensor,
        output_dir=None, checkpoint_every: int = 0,
        log_fn=None) -> List[Tuple[int, int, LossReport]]:
    """Run epochs from state.epoch to config.epochs over two unpaired stacks.

    low and high are (N, C, H, W) tensors. Batches are drawn from fresh
    per-epoch shuffles of each domain; trailing images that do not fill a
    batch are dropped. With output_dir set, writes train_log.csv and
    loss_curves.png and saves checkpoints every checkpoint_every epochs
    (0 disables periodic saves) plus a final one.
    """
    cfg = state.config
    batch = cfg.batch_size
    num_batches = min(low.shape[0], high.shape[0]) // batch
    if num_batches == 0:
        raise ValueError(
            f"need at least {batch} images per domain, got {low.shape[0]} and {high.shape[0]}")
    out = Path(output_dir) if output_dir is not None else None
    rows = []
    for epoch in range(state.epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        for opt in (state.opt_generator, state.opt_discriminator, state.opt_critic):
            _set_lr(opt, lr)
        perm_low = torch.randperm(low.shape[0], generator=state.rng)
        perm_high = torch.randperm(high.shape[0], generator=state.rng)
        for b in range(num_batches):
            batch_low = low[perm_low[b * batch:(b + 1) * batch]]
            batch_high = high[perm_high[b * batch:(b + 1) * batch]]
            report = train_step(batch_low, batch_high, state)
            rows.append((state.step, epoch, report))
            if log_fn is not None:
                log_fn(state.step, epoch, report)
        state.epoch = epoch + 1
        if out is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(state, out / f"checkpoint_epoch{epoch + 1:04d}.pt")
    if out is not None:
        save_checkpoint(state, out / "checkpoint_final.pt")
        write_train_log(rows, out / "train_log.csv")
        plot_loss_curves(rows, out / "loss_curves.png")
    return rows
