"""Segmentation, classification and composite training objectives.

Segmentation losses honor per-frame supervision flags: only supervised
frames enter the loss, each sample averages over its own supervised frames,
and the batch averages over samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor


@dataclass
class LossConfig:
    lambda_cls: float = 0.5
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.lambda_cls < 0:
            raise ValueError("lambda_cls must be non-negative")


def _frames(logits, target, supervised):
    """Flatten to per-frame arrays and build the per-frame averaging weights."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise DimensionError(f"logits {logits.shape} and mask {target.shape} differ")
    if logits.ndim == 3:
        logits = logits.reshape(1, *logits.shape)
        target = target[None]
    if logits.ndim != 4:
        raise DimensionError(f"expected ([B,] T, H, W) logits, got {logits.shape}")
    b, t, h, w = logits.shape
    sup = np.asarray(supervised, dtype=bool).reshape(b, t)
    counts = sup.sum(axis=1)
    if (counts == 0).any():
        raise ContractError("every sample needs at least one supervised frame")
    idx = np.flatnonzero(sup.reshape(-1))
    weights = (1.0 / (b * np.repeat(counts, t)))[idx]
    x = logits.reshape(b * t, h * w)[idx]
    m = target.reshape(b * t, h * w)[idx]
    return x, m, weights


def _bce_per_frame(x: Tensor, m: np.ndarray) -> Tensor:
    # softplus(x) - x*m == -[m log sigmoid(x) + (1-m) log(1 - sigmoid(x))]
    return (T.softplus(x) - x * m).mean(axis=-1)


def _dice_per_frame(x: Tensor, m: np.ndarray, smooth: float) -> Tensor:
    p = T.sigmoid(x)
    inter = (p * m).sum(axis=-1)
    denom = p.sum(axis=-1) + (m.sum(axis=-1) + smooth)
    return 1.0 - (2.0 * inter + smooth) / denom


def bce_loss(logits, target, supervised) -> Tensor:
    """Mean binary cross-entropy over supervised pixels, from logits."""
    x, m, w = _frames(logits, target, supervised)
    return (_bce_per_frame(x, m) * w).sum()


def dice_loss(logits, target, supervised, smooth: float = 1.0) -> Tensor:
    """Soft Dice loss, computed per supervised frame then averaged."""
    x, m, w = _frames(logits, target, supervised)
    return (_dice_per_frame(x, m, smooth) * w).sum()


def seg_loss(logits, target, supervised, smooth: float = 1.0) -> Tensor:
    """BCE + Dice per sample, averaged over the batch."""
    x, m, w = _frames(logits, target, supervised)
    per_frame = _bce_per_frame(x, m) + _dice_per_frame(x, m, smooth)
    return (per_frame * w).sum()


def cls_loss(class_logits, labels: int | Sequence[int]) -> Tensor:
    """Cross-entropy ``-log softmax(z)[label]``, averaged over the batch."""
    z = class_logits if isinstance(class_logits, Tensor) else Tensor(class_logits)
    if z.ndim == 1:
        z = z.reshape(1, z.shape[0])
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape != (z.shape[0],):
        raise DimensionError(f"{z.shape[0]} logit rows but labels of shape {labels.shape}")
    k = z.shape[1]
    if (labels < 0).any() or (labels >= k).any():
        raise ContractError(f"labels {labels.tolist()} out of range for {k} classes")
    logp = T.log_softmax(z, axis=-1)
    onehot = np.zeros(z.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(logp * onehot).sum() * (1.0 / len(labels))


def total_loss(seg, cls, stab, cfg: LossConfig) -> Tensor:
    """``seg + lambda_cls * cls + stab``; a missing classification term counts as 0."""
    out = seg
    if cls is not None:
        out = out + cfg.lambda_cls * cls
    if stab is not None:
        out = out + stab
    return out if isinstance(out, Tensor) else Tensor(out)
