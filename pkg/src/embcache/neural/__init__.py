"""Learned caching and prefetching models with a self-contained autodiff core."""
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint, vocabulary_hash
from .losses import (CE_PROB_EPS, LossConfig, LossKind, chamfer_loss,
                     chamfer_one_sided, cross_entropy_loss)
from .model import (CACHING, PREFETCH, ModelParameters, decode_indices,
                    forward_caching, forward_caching_batch, forward_prefetch,
                    forward_prefetch_batch, init_params, normalize_gids)
from .train import (TrainConfig, TrainResult, batch_loss_and_grads,
                    batch_loss_value, chamfer_tie_free, finite_difference_check,
                    make_batch, train, validation_metric, write_loss_curve_csv)

__all__ = [
    "Tensor", "load_checkpoint", "save_checkpoint", "vocabulary_hash",
    "CE_PROB_EPS", "LossConfig", "LossKind", "chamfer_loss", "chamfer_one_sided",
    "cross_entropy_loss", "CACHING", "PREFETCH", "ModelParameters",
    "decode_indices", "forward_caching", "forward_caching_batch",
    "forward_prefetch", "forward_prefetch_batch", "init_params", "normalize_gids",
    "TrainConfig", "TrainResult", "batch_loss_and_grads", "batch_loss_value",
    "chamfer_tie_free", "finite_difference_check", "make_batch", "train",
    "validation_metric", "write_loss_curve_csv",
]
