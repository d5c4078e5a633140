"""Alignment losses (masked contrastive, MSE, triplet) and multi-label BCE.

Losses take motion embeddings as graph tensors and text embeddings as
constants, so gradients never reach the frozen text side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import ContractViolation, NumericError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.07
DEFAULT_MASK_THRESHOLD = 0.9
DEFAULT_MARGIN = 0.2


@dataclass(frozen=True)
class TripletConfig:
    margin: float = DEFAULT_MARGIN
    mask_threshold: float = DEFAULT_MASK_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError("margin must be >= 0")
        if not 0 < self.mask_threshold <= 1:
            raise ValidationError("mask threshold must lie in (0, 1]")


def cosine_matrix(a, b=None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = a if b is None else np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if (na == 0).any() or (nb == 0).any():
        raise NumericError("cosine similarity of a zero vector")
    return (a / na) @ (b / nb).T


def _check_pair(zp, zt):
    if zp.shape != zt.shape:
        raise ContractViolation(f"embedding shapes differ: {zp.shape} vs {zt.shape}")


def mse_loss(zp, zt) -> Tensor:
    """Mean of squared differences over every batch element and dimension."""
    zp, zt = as_tensor(zp), as_tensor(zt)
    _check_pair(zp, zt)
    return ag.mean(ag.square(ag.sub(zp, zt)))


def euclidean(a, b) -> Tensor:
    return ag.sqrt(ag.sum_(ag.square(ag.sub(a, b)), axis=-1))


def triplet_loss(anchor, positive, negative, margin=DEFAULT_MARGIN) -> Tensor:
    """max(d(a, p) - d(a, n) + margin, 0) with euclidean d, averaged over rows."""
    anchor, positive, negative = as_tensor(anchor), as_tensor(positive), as_tensor(negative)
    _check_pair(anchor, positive)
    _check_pair(anchor, negative)
    hinge = ag.relu(ag.add(ag.sub(euclidean(anchor, positive), euclidean(anchor, negative)), margin))
    return ag.mean(hinge)


def sample_negative(i, class_of, tsim, mask_threshold, rng) -> int | None:
    """Uniform draw among items of a different class; None when the draw is masked out."""
    candidates = [j for j, c in enumerate(class_of) if c != class_of[i]]
    if not candidates:
        log.debug("anchor %d has no other class in the batch", i)
        return None
    j = candidates[int(rng.integers(len(candidates)))]
    if tsim[i][j] > mask_threshold:
        return None
    return j


def batch_triplet_loss(zp, zt, class_of, tsim, config: TripletConfig, rng):
    """Batch triplet loss with in-batch negatives. Returns (loss or None, n_used)."""
    zt = np.asarray(zt.data if isinstance(zt, Tensor) else zt)
    anchors, negatives = [], []
    for i in range(len(class_of)):
        j = sample_negative(i, class_of, tsim, config.mask_threshold, rng)
        if j is not None:
            anchors.append(i)
            negatives.append(j)
    if not anchors:
        return None, 0
    idx = np.asarray(anchors)
    za = ag.slice_(zp, (idx,)) if len(idx) != zp.shape[0] else zp
    return triplet_loss(za, zt[idx], zt[np.asarray(negatives)], config.margin), len(anchors)


def contrastive_mask(tsim, mask_threshold) -> np.ndarray:
    """True where an off-diagonal pair's text similarity exceeds the threshold."""
    tsim = np.asarray(tsim)
    mask = tsim > mask_threshold
    np.fill_diagonal(mask, False)
    return mask


def masked_contrastive_loss(zp, zt, tsim=None, temperature=DEFAULT_TEMPERATURE,
                            mask_threshold=DEFAULT_MASK_THRESHOLD) -> Tensor:
    """Symmetric InfoNCE over cosine similarities with false negatives removed.

    Off-diagonal pairs whose captions are more similar than
    ``mask_threshold`` are dropped from both softmax normalizers.
    """
    zp, zt = as_tensor(zp), as_tensor(zt)
    _check_pair(zp, zt)
    if temperature <= 0:
        raise ValidationError("temperature must be > 0")
    if tsim is None:
        tsim = cosine_matrix(zt.data)
    mask = contrastive_mask(tsim, mask_threshold)
    logits = ag.mul(ag.matmul(ag.l2_normalize(zp), ag.transpose(ag.l2_normalize(zt))), 1.0 / temperature)
    rows = ag.mean(ag.diagonal(ag.log_softmax(logits, mask=mask)))
    cols = ag.mean(ag.diagonal(ag.log_softmax(ag.transpose(logits), mask=mask.T)))
    return ag.mul(ag.add(rows, cols), -0.5)


def bce_multilabel_loss(logits, targets) -> Tensor:
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ContractViolation(f"logits {logits.shape} and targets {targets.shape} differ")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise ValidationError("multi-label targets must be 0 or 1")
    return ag.mean(ag.bce_with_logits(logits, targets))
