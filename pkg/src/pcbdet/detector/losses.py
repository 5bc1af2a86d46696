"""Focal loss and smooth-L1 box regression loss as fused differentiable ops."""

from __future__ import annotations

import numpy as np

from pcbdet.detector.anchors import IGNORE
from pcbdet.errors import ContractError
from pcbdet.nn.tensor import Tensor, make_node


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def focal_loss(logits: Tensor, labels, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Sigmoid focal loss summed over non-ignored anchors and classes, / max(1, #positives).

    ``logits`` is ``(..., anchors, classes)``; ``labels`` is ``(..., anchors)``
    holding a class id for positives, ``NEGATIVE`` for background and
    ``IGNORE`` for anchors that do not contribute.

    ``alpha_t`` is ``alpha`` on positive targets and ``1 - alpha`` on negative
    ones for ``alpha < 1``; ``alpha = 1`` switches balancing off (weight 1
    everywhere), so ``gamma = 0, alpha = 1`` is plain sigmoid cross-entropy.
    """
    if gamma < 0 or not 0 < alpha <= 1:
        raise ContractError(f"focal_loss: need gamma >= 0 and alpha in (0, 1], got {gamma}, {alpha}")
    labels = np.asarray(labels)
    x = logits.data
    k = x.shape[-1]
    if labels.shape != x.shape[:-1]:
        raise ContractError(f"focal_loss: labels shape {labels.shape} does not match logits {x.shape}")
    targets = (labels[..., None] == np.arange(k)).astype(x.dtype)
    valid = (labels != IGNORE)[..., None].astype(x.dtype)
    n_pos = max(1, int((labels >= 0).sum()))

    # z = x for positives, -x for negatives, so p_t = sigmoid(z)
    sign = 2 * targets - 1
    z = sign * x
    q = _sigmoid(-z)  # 1 - p_t
    log_pt = -_softplus(-z)
    alpha_t = np.where(targets > 0, alpha, 1 - alpha) if alpha < 1 else np.ones_like(x)
    mod = q**gamma
    per = -alpha_t * mod * log_pt * valid
    out = np.asarray(per.sum() / n_pos, dtype=x.dtype)

    def backward(g):
        # dL/dz = alpha_t q^gamma (gamma p_t log p_t - q)
        pt = 1 - q
        dz = alpha_t * mod * (gamma * pt * log_pt - q)
        return (((g / n_pos) * dz * sign * valid).astype(x.dtype, copy=False),)

    return make_node(out, (logits,), backward, "focal_loss")


def sigmoid_cross_entropy(logits: np.ndarray, labels) -> float:
    """Reference sigmoid CE with the same reduction as :func:`focal_loss`."""
    labels = np.asarray(labels)
    k = logits.shape[-1]
    t = (labels[..., None] == np.arange(k)).astype(np.float64)
    valid = (labels != IGNORE)[..., None]
    x = logits.astype(np.float64)
    ce = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    return float((ce * valid).sum() / max(1, int((labels >= 0).sum())))


def smooth_l1(pred: Tensor, target, positive, beta: float = 1 / 9) -> Tensor:
    """Smooth-L1 over positive anchors, summed over coordinates and / max(1, #positives).

    ``pred`` and ``target`` are ``(..., anchors, 4)``; ``positive`` is a boolean
    ``(..., anchors)`` mask.
    """
    if beta <= 0:
        raise ContractError(f"smooth_l1: beta must be > 0, got {beta}")
    x = pred.data
    target = np.asarray(target, dtype=x.dtype)
    mask = np.asarray(positive, dtype=bool)[..., None].astype(x.dtype)
    n_pos = max(1, int(np.asarray(positive).sum()))
    d = (x - target) * mask
    ad = np.abs(d)
    small = ad < beta
    per = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)
    out = np.asarray((per * mask).sum() / n_pos, dtype=x.dtype)

    def backward(g):
        grad = np.where(small, d / beta, np.sign(d)) * mask
        return (((g / n_pos) * grad).astype(x.dtype, copy=False),)

    return make_node(out, (pred,), backward, "smooth_l1")
