from .checkpoint import Checkpoint
from .losses import lm_loss
from .optim import AdamW, LrSchedule, adamw_update, clip_grad_norm, cosine_lr
from .trainer import (
    BatchSampler,
    EmptyDatasetError,
    Example,
    FreezePlan,
    StageOrderError,
    Trainer,
    VisionCache,
    batch_loss,
    load_bundle,
    mean_loss,
    stage_examples,
    start_stage,
    train_stage,
)

__all__ = [
    "AdamW", "BatchSampler", "Checkpoint", "EmptyDatasetError", "Example", "FreezePlan", "LrSchedule",
    "StageOrderError", "Trainer", "VisionCache", "adamw_update", "batch_loss", "clip_grad_norm",
    "cosine_lr", "lm_loss", "load_bundle", "mean_loss", "stage_examples", "start_stage", "train_stage",
]
