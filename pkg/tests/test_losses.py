"""Tests for label smoothing, cross-entropy, batch-hard triplet and the total objective."""
import math

import numpy as np
import pytest

from adareg.autodiff.tensor import Tensor
from adareg.losses import (
    SmoothingConfig,
    TripletConfig,
    batch_hard_triplet,
    cross_entropy,
    hardest_pairs,
    smoothed_labels,
    total_loss,
)
from adareg.utils.exceptions import ValidationError


def _triplet_by_enumeration(embeddings, ids, margin):
    """Hinge of the farthest positive against the nearest negative, anchor by anchor."""
    n = len(ids)

    def distance(i, j):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(embeddings[i], embeddings[j])))

    terms = []
    for a in range(n):
        positives = [distance(a, p) for p in range(n) if p != a and ids[p] == ids[a]]
        negatives = [distance(a, q) for q in range(n) if ids[q] != ids[a]]
        terms.append(max(0.0, margin + max(positives) - min(negatives)))
    return sum(terms) / n


def test_smoothing_examples():
    np.testing.assert_array_equal(smoothed_labels(3, SmoothingConfig(0.0, 4)), [0.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(smoothed_labels(2, SmoothingConfig(0.1, 4)), [0.025, 0.925, 0.025, 0.025],
                               rtol=0, atol=1e-15)


def test_smoothing_batch_rows_sum_to_one():
    q = smoothed_labels([1, 4, 2], SmoothingConfig(0.3, 4))
    assert q.shape == (3, 4)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, rtol=1e-15)


def test_smoothing_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        smoothed_labels(5, SmoothingConfig(0.1, 4))
    with pytest.raises(ValidationError):
        smoothed_labels(0, SmoothingConfig(0.1, 4))
    with pytest.raises(ValidationError):
        SmoothingConfig(1.0, 4)


def test_cross_entropy_uniform_logits():
    targets = smoothed_labels([1], SmoothingConfig(0.0, 3))
    assert cross_entropy(Tensor(np.zeros((1, 3))), targets).item() == pytest.approx(math.log(3), abs=1e-12)


def test_cross_entropy_decreases_with_true_logit():
    targets = smoothed_labels([2], SmoothingConfig(0.0, 3))
    losses = [cross_entropy(Tensor(scale * targets), targets).item() for scale in (0.0, 1.0, 5.0, 20.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-8


def test_cross_entropy_rejects_non_finite_logits():
    targets = smoothed_labels([1], SmoothingConfig(0.0, 2))
    with pytest.raises(ValidationError):
        cross_entropy(Tensor([[np.inf, 0.0]]), targets)


def test_triplet_one_dimensional_example():
    embeddings = Tensor([[0.0], [0.5], [0.8], [1.3]])
    loss = batch_hard_triplet(embeddings, [1, 1, 2, 2], TripletConfig(0.3))
    assert loss.item() == pytest.approx(0.25, abs=1e-12)


def test_triplet_overlapping_clusters():
    embeddings = Tensor([[0.0], [0.5], [0.6], [1.1]])
    loss = batch_hard_triplet(embeddings, [1, 1, 2, 2], TripletConfig(0.3))
    assert loss.item() == pytest.approx((0.2 + 0.7 + 0.7 + 0.2) / 4, abs=1e-12)


def test_triplet_matches_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p = int(rng.integers(2, 5))
        k = int(rng.integers(2, 5))
        ids = np.repeat(np.arange(1, p + 1), k)
        embeddings = rng.normal(size=(p * k, int(rng.integers(1, 6))))
        margin = float(rng.uniform(0.0, 1.0))
        loss = batch_hard_triplet(Tensor(embeddings), ids, TripletConfig(margin)).item()
        assert loss == pytest.approx(_triplet_by_enumeration(embeddings.tolist(), ids.tolist(), margin),
                                     rel=0, abs=1e-12)


def test_triplet_separated_clusters_give_zero():
    embeddings = Tensor([[0.0], [0.1], [5.0], [5.1]])
    assert batch_hard_triplet(embeddings, [1, 1, 2, 2], TripletConfig(0.3)).item() == 0.0


def test_triplet_identical_embeddings_give_margin():
    embeddings = Tensor(np.ones((4, 3)))
    assert batch_hard_triplet(embeddings, [1, 1, 2, 2], TripletConfig(0.3)).item() == pytest.approx(0.3)


def test_triplet_requires_positive_and_negative():
    with pytest.raises(ValidationError, match='no positive'):
        batch_hard_triplet(Tensor(np.zeros((3, 2))), [1, 1, 2], TripletConfig())
    with pytest.raises(ValidationError, match='no negative'):
        batch_hard_triplet(Tensor(np.zeros((2, 2))), [1, 1], TripletConfig())


def test_hardest_pairs_ties_pick_lowest_index():
    dist = np.zeros((4, 4))
    pos, neg = hardest_pairs(dist, np.array([1, 1, 2, 2]))
    assert pos.tolist() == [1, 0, 3, 2]
    assert neg.tolist() == [2, 2, 0, 0]


def test_total_loss():
    total = total_loss([Tensor(1.0)], [Tensor(0.25)], Tensor(0.03125))
    assert total.item() == 1.28125
    assert total_loss([], [], Tensor(0.03125)).item() == 0.03125
    with pytest.raises(ValidationError):
        total_loss([], [])
