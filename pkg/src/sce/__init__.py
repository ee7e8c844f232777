"""Desk-scale soft contrastive learning: SCE with InfoNCE and ReSSL
baselines on a shared online/momentum siamese architecture."""

from .autodiff import Tape, Tensor, backward, grad_check
from .objectives import (
    LogitsBlock,
    ObjectiveConfig,
    ceil_loss,
    combined_loss,
    compute_losses,
    info_nce_loss,
    online_relations_masked,
    ressl_loss,
    sce_loss,
    sce_online,
    sce_target,
    similarity_logits,
    target_relations,
    verify_decomposition,
)

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
    "LogitsBlock",
    "ObjectiveConfig",
    "ceil_loss",
    "combined_loss",
    "compute_losses",
    "info_nce_loss",
    "online_relations_masked",
    "ressl_loss",
    "sce_loss",
    "sce_online",
    "sce_target",
    "similarity_logits",
    "target_relations",
    "verify_decomposition",
]

__version__ = "0.1.0"
