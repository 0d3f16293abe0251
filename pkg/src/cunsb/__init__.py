"""Context-aware unpaired enhancement of retinal fundus images.

A stepwise stochastic-bridge sampler paired with a snake-convolution U-Net
generator, trained adversarially on unpaired clean/degraded image folders
with transport, entropy, structural-similarity, and contrastive patch terms.
"""

__version__ = "0.1.0"

from .bridge import (
    BridgeConfig,
    BridgeSampleStats,
    TimeGrid,
    bridge_posterior,
    infer,
    interpolation_fraction,
    sample_bridge,
    simulate_forward,
)
from .degrade import (
    DegradationRecord,
    DegradationSpec,
    apply_record,
    blur,
    compose,
    estimate_fundus_mask,
    light_disturbance,
    spot_artifacts,
)
from .errors import CheckpointError, CunsbError, DataError, UsageError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    compose_total,
    patchnce_loss,
    sb_loss,
    ssim_index,
    ssim_regularization,
    total_loss,
)
from .metrics import MetricRecord, evaluate_dataset, psnr, ssim
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    EntropyCritic,
    Generator,
    GeneratorConfig,
    ProjectionHeadSet,
    mi_estimator_forward,
)
from .snake_conv import SnakeConv2d, SnakeKernelSpec, accumulate_offsets, snake_conv2d
from .trainer import (
    TrainConfig,
    TrainState,
    build_state,
    fit,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    select_time_step,
    train_step,
)

__all__ = [
    "BridgeConfig", "BridgeSampleStats", "TimeGrid", "bridge_posterior",
    "infer", "interpolation_fraction", "sample_bridge", "simulate_forward",
    "DegradationRecord", "DegradationSpec", "apply_record", "blur", "compose",
    "estimate_fundus_mask", "light_disturbance", "spot_artifacts",
    "CheckpointError", "CunsbError", "DataError", "UsageError",
    "LossReport", "LossWeights", "adversarial_loss", "compose_total",
    "patchnce_loss", "sb_loss", "ssim_index", "ssim_regularization", "total_loss",
    "MetricRecord", "evaluate_dataset", "psnr", "ssim",
    "Discriminator", "DiscriminatorConfig", "EntropyCritic", "Generator",
    "GeneratorConfig", "ProjectionHeadSet", "mi_estimator_forward",
    "SnakeConv2d", "SnakeKernelSpec", "accumulate_offsets", "snake_conv2d",
    "TrainConfig", "TrainState", "build_state", "fit", "load_checkpoint",
    "lr_at", "save_checkpoint", "select_time_step", "train_step",
    "__version__",
]
