"""Perte de segmentation : Dice souple (classes d'avant-plan) + entropie croisée, poids égaux"""

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import DimensionError

SMOOTH = 1e-5


def one_hot(labels: np.ndarray, classes: int, dtype=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DimensionError(f"étiquettes hors de [0, {classes}): min {labels.min()}, max {labels.max()}")
    return np.eye(classes, dtype=dtype or T.get_default_dtype())[labels]


def soft_dice_loss(probs: Tensor, target: np.ndarray) -> Tensor:
    """1 − moyenne des Dice souples par classe d'avant-plan (1..K−1)"""
    classes = probs.shape[-1]
    axes = tuple(range(probs.ndim - 1))
    fg_probs = T.slice_axis(probs, 1, classes, axis=-1)
    fg_target = T.Tensor(target[..., 1:], dtype=probs.dtype)
    intersection = T.sum(T.mul(fg_probs, fg_target), axis=axes)
    denominator = T.add(T.sum(fg_probs, axis=axes), T.sum(fg_target, axis=axes))
    dice = T.div(T.add(T.mul(intersection, 2.0), SMOOTH), T.add(denominator, SMOOTH))
    return T.sub(1.0, T.mean(dice))


def cross_entropy(log_probs: Tensor, target: np.ndarray) -> Tensor:
    picked = T.sum(T.mul(log_probs, T.Tensor(target, dtype=log_probs.dtype)), axis=-1)
    return T.neg(T.mean(picked))


def dice_ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """logits (B, H, W, D, K), labels (B, H, W, D) entiers"""
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise DimensionError(f"logits {logits.shape} incompatibles avec les étiquettes {labels.shape}")
    target = one_hot(labels, logits.shape[-1], dtype=logits.dtype)
    log_probs = T.log_softmax(logits, axis=-1)
    return T.add(soft_dice_loss(T.exp(log_probs), target), cross_entropy(log_probs, target))
