"""
Losses Module
Label-smoothed cross-entropy, batch-hard triplet loss and the total objective.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from adareg.autodiff import ops
from adareg.autodiff.tensor import Tensor
from adareg.utils.exceptions import ShapeError, ValidationError


@dataclass(frozen=True)
class SmoothingConfig:
    epsilon: float
    num_classes: int

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValidationError(f"label smoothing epsilon must be in [0, 1), got {self.epsilon}")
        if self.num_classes < 1:
            raise ValidationError(f"number of classes must be >= 1, got {self.num_classes}")


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.3

    def __post_init__(self):
        if self.margin < 0:
            raise ValidationError(f"triplet margin must be >= 0, got {self.margin}")


def smoothed_labels(y, cfg: SmoothingConfig) -> np.ndarray:
    """Smoothed target distribution(s) for 1-based class labels.

    Args:
        y: a class index in 1..N, or a sequence of them.
        cfg: smoothing settings.

    Returns:
        np.ndarray: length-N vector for a scalar label, B x N matrix otherwise.
    """
    labels = np.atleast_1d(np.asarray(y))
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError(f"class labels must be integers, got {labels.dtype}")
    bad = labels[(labels < 1) | (labels > cfg.num_classes)]
    if bad.size:
        raise ValidationError(f"class label {int(bad[0])} outside 1..{cfg.num_classes}")
    n = cfg.num_classes
    q = np.full((labels.size, n), cfg.epsilon / n)
    q[np.arange(labels.size), labels - 1] = 1.0 - cfg.epsilon + cfg.epsilon / n
    return q[0] if np.ndim(y) == 0 else q


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Batch mean of -sum_i q'(i) log softmax(logits)_i."""
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy needs B x N logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if not np.all(np.isfinite(logits.data)):
        raise ValidationError("cross entropy received non-finite logits")
    log_probs = ops.log_softmax(logits)
    weighted = ops.mul(log_probs, Tensor(targets))
    return ops.scale(ops.reduce_sum(weighted), -1.0 / logits.shape[0])


def hardest_pairs(dist: np.ndarray, ids: np.ndarray):
    """Indices of the farthest positive and nearest negative for every anchor.

    Ties go to the lowest sample index.
    """
    same = ids[:, None] == ids[None, :]
    positive = same & ~np.eye(len(ids), dtype=bool)
    negative = ~same
    if not positive.any(axis=1).all():
        anchor = int(np.argmin(positive.any(axis=1)))
        raise ValidationError(f"anchor {anchor} (id {ids[anchor]}) has no positive in the batch")
    if not negative.any(axis=1).all():
        anchor = int(np.argmin(negative.any(axis=1)))
        raise ValidationError(f"anchor {anchor} (id {ids[anchor]}) has no negative in the batch")
    hardest_pos = np.argmax(np.where(positive, dist, -np.inf), axis=1)
    hardest_neg = np.argmin(np.where(negative, dist, np.inf), axis=1)
    return hardest_pos, hardest_neg


def batch_hard_triplet(embeddings: Tensor, ids: Sequence[int], cfg: TripletConfig) -> Tensor:
    """Mean over anchors of max(0, margin + d(a, hardest positive) - d(a, hardest negative))."""
    if embeddings.ndim != 2:
        raise ShapeError(f"triplet loss needs B x D embeddings, got {embeddings.shape}")
    ids = np.asarray(ids)
    if ids.shape != (embeddings.shape[0],):
        raise ShapeError(f"{ids.size} labels for {embeddings.shape[0]} embeddings")
    dist = ops.pairwise_distance(embeddings)
    hardest_pos, hardest_neg = hardest_pairs(dist.data, ids)
    ops.note_branch('triplet_mining', np.concatenate([hardest_pos, hardest_neg]).astype(np.int64))
    anchors = np.arange(len(ids))
    d_pos = ops.take2d(dist, anchors, hardest_pos)
    d_neg = ops.take2d(dist, anchors, hardest_neg)
    hinge = ops.relu(ops.sub(ops.add(Tensor(np.full(len(ids), cfg.margin)), d_pos), d_neg))
    return ops.reduce_mean(hinge)


def total_loss(ce_terms: Sequence[Tensor], triplet_terms: Sequence[Tensor],
               penalty: Optional[Tensor] = None) -> Tensor:
    """Unit-weight sum: every CE term, then every triplet term, then the penalty."""
    terms = list(ce_terms) + list(triplet_terms)
    if penalty is not None:
        terms.append(penalty)
    if not terms:
        raise ValidationError("total loss needs at least one term")
    return ops.add_n(terms)
