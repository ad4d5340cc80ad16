"""Small differentiable-computation substrate: tensors, layers, losses, Adam, grad checks."""
from mmimpute.diff.gradcheck import GradCheckReport, grad_check
from mmimpute.diff.layers import layer_forward
from mmimpute.diff.losses import EPS_P, bce_loss, ce_from_probs, ce_loss, mse_masked
from mmimpute.diff.optim import AdamConfig, adam_step
from mmimpute.diff.params import ParamSet, TrainingError
from mmimpute.diff.tensor import Tensor

__all__ = [
    "AdamConfig", "EPS_P", "GradCheckReport", "ParamSet", "Tensor", "TrainingError",
    "adam_step", "bce_loss", "ce_from_probs", "ce_loss", "grad_check", "layer_forward",
    "mse_masked",
]
