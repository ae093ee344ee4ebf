"""Dual-Cycle network: dual-view U-Net generator, degradation paths, slice discriminators."""
from .losses import DualCycleLossTerms, LossHyper, compute_losses, discriminator_losses
from .models import (
    ROUTING,
    DeepLinearGenerator,
    DegradationPath,
    DualCycleNet,
    SliceDiscriminator,
    UNet3D,
    build_dual_cycle,
    discriminate,
    take_slices,
)
from .training import (
    TileSpec,
    TrainConfig,
    TrainResult,
    build_model,
    generate,
    load_checkpoint,
    load_weights,
    model_from_checkpoint,
    reconstruct,
    save_checkpoint,
    train,
)
