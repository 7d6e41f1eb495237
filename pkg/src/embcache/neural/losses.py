"""Training losses: per-position cross-entropy and set-distance regression.

The set distance between two value lists S1, S2 is the sum over S1 of each
element's distance to its nearest element of S2.  The two-sided training
loss balances both directions:

    loss = alpha * d(PO, W)/|PO| + (1 - alpha) * d(W, PO)/|W|

The reverse term is what stops every output slot from parking on a single
easy target; dropping it (the one-sided ablation) collapses the outputs.

Each loss exists twice: a plain-float reference used by tests and metrics,
and a Tensor version used in training graphs.  Both share the same tie
conventions: nearest-neighbor ties resolve to the first minimizer, and the
absolute value contributes zero gradient at its kink.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import InvalidConfigError
from . import autodiff as ad
from .autodiff import Tensor

CE_PROB_EPS = 1e-7


class LossKind(str, Enum):
    CROSS_ENTROPY = "cross_entropy"
    CHAMFER2 = "chamfer2"   # two-sided set distance
    CHAMFER1 = "chamfer1"   # one-sided ablation


@dataclass
class LossConfig:
    kind: LossKind = LossKind.CHAMFER2
    alpha: float = 0.7
    window_ratio: int = 3

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfigError("alpha must lie strictly inside (0, 1)")
        if self.window_ratio < 1:
            raise InvalidConfigError("window_ratio must be >= 1")


def chamfer_one_sided(s1, s2) -> float:
    """Sum over s1 of the distance to the nearest element of s2."""
    a = np.asarray(list(s1), dtype=np.float64)
    b = np.asarray(list(s2), dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("set distance of an empty set is undefined")
    return float(np.abs(a[:, None] - b[None, :]).min(axis=1).sum())


def chamfer_loss(po, window, alpha: float = 0.7) -> float:
    """Two-sided normalized set distance; alpha=1 degenerates to one-sided."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    po = list(po)
    window = list(window)
    forward = chamfer_one_sided(po, window) / len(po)
    if alpha == 1.0:
        return forward
    backward = chamfer_one_sided(window, po) / len(window)
    return alpha * forward + (1.0 - alpha) * backward


def cross_entropy_loss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0/1."""
    p = np.asarray(list(probs), dtype=np.float64)
    y = np.asarray(list(labels), dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("probs and labels must have matching lengths")
    if p.size == 0:
        raise ValueError("cross entropy of empty sequences is undefined")
    p = np.clip(p, CE_PROB_EPS, 1.0 - CE_PROB_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def chamfer_loss_t(po: Tensor, window: np.ndarray, alpha: float,
                   one_sided: bool = False) -> Tensor:
    """Batched Tensor loss; ``po`` is (B, Lo), ``window`` a constant (B, Lw).

    Returns the mean over the batch of the per-sample two-sided (or, for the
    ablation, one-sided) normalized set distance.
    """
    b, lo = po.value.shape
    lw = window.shape[1]
    diff = ad.absolute(ad.sub(po.reshape((b, lo, 1)), window.reshape(b, 1, lw)))
    forward = ad.mul(ad.tsum(ad.min_reduce(diff, axis=2), axis=1), 1.0 / lo)
    if one_sided:
        return ad.tmean(forward)
    backward = ad.mul(ad.tsum(ad.min_reduce(diff, axis=1), axis=1), 1.0 / lw)
    per_sample = ad.add(ad.mul(forward, alpha), ad.mul(backward, 1.0 - alpha))
    return ad.tmean(per_sample)


def cross_entropy_loss_t(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Batched Tensor cross-entropy over (B, L) probabilities and 0/1 labels."""
    y = labels.astype(np.float64)
    p = ad.clip(probs, CE_PROB_EPS, 1.0 - CE_PROB_EPS)
    pos = ad.mul(ad.log(p), y)
    neg = ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - y)
    return ad.mul(ad.tmean(ad.add(pos, neg)), -1.0)
