"""Multi-person motion forecasting with a shared-expert state-space mixture."""

from .autodiff import (AutodiffError, ShapeError, Tape, Tensor,
                       apply_primitive, backward, finite_difference_check,
                       get_default_dtype, primitive_names, set_default_dtype)
from .data import GeneratorSpec, MotionSequence, read_dataset, synth_generate, write_dataset
from .model import ModelConfig, MotionMoE, audit_parameters
from .objectives import LossWeights, ape, jpe, report_at_horizons, total_loss
from .training import (AdamState, TrainSettings, evaluate, fit,
                       load_checkpoint, lr_at_epoch, model_from_checkpoint,
                       save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AutodiffError", "GeneratorSpec", "LossWeights",
    "ModelConfig", "MotionMoE", "MotionSequence", "ShapeError", "Tape",
    "Tensor", "TrainSettings", "ape", "apply_primitive", "audit_parameters",
    "backward", "evaluate", "finite_difference_check", "fit",
    "get_default_dtype", "jpe", "load_checkpoint", "lr_at_epoch",
    "model_from_checkpoint", "primitive_names", "read_dataset",
    "report_at_horizons", "save_checkpoint", "set_default_dtype",
    "synth_generate", "total_loss", "write_dataset",
]
