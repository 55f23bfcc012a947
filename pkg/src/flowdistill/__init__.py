"""Normalizing flows with teacher -> student knowledge distillation."""

from .distill import DistillPlan, combined_loss, ilkd_loss, lkd_loss, make_plan, skd_loss
from .flow_model import FlowModel, build_glow, build_maf, latent_interpolate, nll_loss, sample
from .tensor import Tensor, backward, detach, no_grad
from .training import TrainConfig, benchmark, evaluate, train

__version__ = "0.1.0"
