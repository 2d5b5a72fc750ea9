"""Training losses with analytic gradients w.r.t. the prediction logits.

Every loss takes probabilities (the softmax output) and returns the gradient
with respect to the logits that produced them. Targets that depend on the
prediction itself (mixed predictions, ranked splits, largest components) are
treated as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (ClassSet, LabelMap, ScribbleSegError, as_probs, check_same_shape,
                   label_weights, softmax_backward)
from .morphology import largest_component

LOG_CLAMP = 1e-12


class NoSupervision(ScribbleSegError):
    pass


class DegenerateConsistency(ScribbleSegError):
    pass


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray
    saturated: int = 0
    parts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LossWeights:
    lambda_global: float = 0.05
    lambda_spatial: float = 1.0
    lambda_shape: float = 1.0
    e_warm: int = 100
    gate_shape: bool = False

    def __post_init__(self):
        if min(self.lambda_global, self.lambda_spatial, self.lambda_shape) < 0 or self.e_warm < 0:
            raise ScribbleSegError("loss weights and warm-up must be non-negative")


def _weights(targets, m: int) -> np.ndarray:
    if isinstance(targets, LabelMap):
        return label_weights(targets, m)
    return np.asarray(targets, dtype=np.float64)


def _weighted_ce(p: np.ndarray, w: np.ndarray, norm: float) -> tuple[float, np.ndarray]:
    value = -float(np.sum(w * np.log(np.maximum(p, LOG_CLAMP)))) / norm
    mass = w.sum(axis=-1, keepdims=True)
    return value, (mass * p - w) / norm


def pce_loss(pred, targets) -> LossValue:
    """Cross entropy over supervised pixels only.

    ``targets`` is a label map (hard labels) or an ``(H, W, m)`` array of
    soft weights such as those produced by mixing. The loss is normalized by
    the number of pixels carrying any weight; for a pixel with total weight
    ``s`` the logit gradient is ``s * p - w``, which is the familiar
    ``p - onehot`` for hard labels.
    """
    p = as_probs(pred)
    w = _weights(targets, p.shape[-1])
    check_same_shape(p, w)
    n_l = int(np.count_nonzero(w.sum(axis=-1) > 0))
    if n_l == 0:
        raise NoSupervision("no labeled pixels")
    value, grad = _weighted_ce(p, w, n_l)
    return LossValue(value, grad)


def negative_cosine(u: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray]:
    """``-<u, v> / (|u| |v|)`` over flattened tensors and its gradient w.r.t. ``v``."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateConsistency("zero-norm operand in cosine similarity")
    dot = float(np.sum(u * v))
    value = -dot / (nu * nv)
    grad = -u / (nu * nv) + dot * v / (nu * nv ** 3)
    return value, grad


def global_consistency_loss(u12, v12, u21, v21) -> LossValue:
    """Symmetric negative cosine between mixed predictions and predictions of the mix.

    ``u`` operands are targets; the gradient has shape ``(2, H, W, m)``, one
    slice per ``v`` operand, w.r.t. the logits behind ``v``.
    """
    v12, v21 = as_probs(v12), as_probs(v21)
    a, ga = negative_cosine(np.asarray(u12, dtype=np.float64), v12)
    b, gb = negative_cosine(np.asarray(u21, dtype=np.float64), v21)
    grad = np.stack([softmax_backward(v12, 0.5 * ga), softmax_backward(v21, 0.5 * gb)])
    return LossValue(0.5 * (a + b), grad)


def _negative_mask(splits) -> np.ndarray:
    return np.asarray(getattr(splits, "negative", splits), dtype=bool)


def spatial_prior_loss(pred, splits) -> LossValue:
    """Push each class's negative pixels onto the union of the other classes.

    ``splits.negative[k]`` marks the pixels taken as reliable negatives for
    class ``k`` and has the prediction's leading shape, so stacked batches
    work too. The marginal ``1 - p_k`` is computed as the sum of the other
    class probabilities and clamped at ``LOG_CLAMP``; the number of clamped
    terms is reported in ``saturated``.
    """
    p = as_probs(pred)
    neg = _negative_mask(splits)
    m = p.shape[-1]
    if neg.shape != (m,) + p.shape[:-1]:
        raise ScribbleSegError(f"split masks {neg.shape} do not match prediction {p.shape}")
    total = int(np.count_nonzero(neg))
    grad = np.zeros_like(p)
    if total == 0:
        return LossValue(0.0, grad)
    value = 0.0
    saturated = 0
    for k in range(m):
        sel = neg[k]
        if not sel.any():
            continue
        pk = p[sel]
        q = pk.sum(axis=-1) - pk[:, k]
        saturated += int(np.count_nonzero(q < LOG_CLAMP))
        q = np.maximum(q, LOG_CLAMP)
        value -= float(np.sum(np.log(q)))
        # d(-log q)/dz_j = p_k (delta_jk - p_j) / q
        g = -pk * (pk[:, k] / q)[:, None]
        g[:, k] += pk[:, k] / q
        grad[sel] += g
    return LossValue(value / total, grad / total, saturated=saturated)


def shape_target(pred, classes: ClassSet, connectivity: int = 4) -> np.ndarray:
    """One-hot weights on the largest component of each connected class's argmax mask."""
    p = as_probs(pred)
    hard = np.argmax(p, axis=-1)
    w = np.zeros_like(p)
    for k in sorted(classes.connected_classes):
        w[..., k] = largest_component(hard == k, connectivity)
    return w


def shape_loss(pred, classes: ClassSet, target: np.ndarray | None = None) -> LossValue:
    """Cross entropy of the prediction against its own largest components."""
    p = as_probs(pred)
    w = shape_target(p, classes) if target is None else target
    n = float(w.sum())
    if n == 0.0:
        return LossValue(0.0, np.zeros_like(p))
    value, grad = _weighted_ce(p, w, n)
    return LossValue(value, grad)


PART_NAMES = ("pce", "global", "spatial", "shape")


def total_loss(parts: dict, weights: LossWeights, epoch: int) -> LossValue:
    """``pce + l1*global + l2*spatial + l3*shape`` with the spatial warm-up gate.

    Parts that are missing, gated or carry a zero weight are skipped outright
    so they contribute an exact zero to the gradient.
    """
    warm = epoch < weights.e_warm
    scale = {
        "pce": 1.0,
        "global": weights.lambda_global,
        "spatial": 0.0 if warm else weights.lambda_spatial,
        "shape": 0.0 if (warm and weights.gate_shape) else weights.lambda_shape,
    }
    unknown = set(parts) - set(scale)
    if unknown:
        raise ScribbleSegError(f"unknown loss parts {sorted(unknown)}")
    if "pce" not in parts:
        raise NoSupervision("total loss needs a pce part")
    value = 0.0
    grad = np.zeros_like(parts["pce"].gradient)
    logged = {}
    for name in PART_NAMES:
        part = parts.get(name)
        if part is None or scale[name] == 0.0:
            logged[name] = 0.0
            continue
        value += scale[name] * part.value
        grad = grad + scale[name] * part.gradient
        logged[name] = part.value
    return LossValue(value, grad, parts=logged)
