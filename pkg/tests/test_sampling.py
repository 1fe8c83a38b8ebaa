import itertools
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from relprune.errors import ShapeMismatchError
from relprune.harness.datasets import Dataset, generate_synthetic
from relprune.sampling import (SamplePlan, cluster_representatives, kmeans, sample_clustering,
                               sample_confidence, sample_random, select_samples)
from relprune.tensor_net import Dense, Network, ReLU, build_cnn

TOY = np.array([[0.0, 0.0], [0.3, 0.1], [0.1, 0.4],
                [5.0, 5.0], [5.2, 4.9], [4.7, 5.3]])


def brute_force_kmeans2(points):
    """Best 2-partition by exhaustive enumeration, then nearest member per centroid."""
    best = None
    n = len(points)
    for bits in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + bits)
        if labels.min() == labels.max():
            continue
        cost, reps = 0.0, []
        for j in (0, 1):
            members = np.flatnonzero(labels == j)
            centre = points[members].mean(axis=0)
            d = ((points[members] - centre) ** 2).sum(axis=1)
            cost += d.sum()
            reps.append(int(members[np.lexsort((members, d))[0]]))
        if best is None or cost < best[0] - 1e-12:
            best = (cost, sorted(reps), labels)
    return best


def identity_probe(dim, classes):
    """Single dense layer, so the classifier input is the raw sample."""
    return Network([Dense(dim, classes, np.zeros((classes, dim)))], (dim,), classes)


def one_class(points):
    return Dataset(points, np.zeros(len(points), dtype=int), ["a"], ["train"] * len(points))


def test_brute_force_oracle_on_toy_set():
    cost, reps, labels = brute_force_kmeans2(TOY)
    assert labels.tolist() in ([0, 0, 0, 1, 1, 1], [1, 1, 1, 0, 0, 0])
    for seed in range(10):
        assert cluster_representatives(TOY, np.arange(6), 2, seed) == reps
        centers, got = kmeans(TOY, 2, seed)
        obj = sum(((TOY[got == j] - centers[j]) ** 2).sum() for j in range(2))
        assert obj == pytest.approx(cost, rel=1e-12)


def test_clustering_strategy_on_toy_set():
    plan = sample_clustering(identity_probe(2, 1), one_class(TOY), n=2, seed=3)
    assert plan.selected == {0: brute_force_kmeans2(TOY)[1]}


def test_identical_activations_terminate():
    pts = np.ones((5, 3))
    reps = cluster_representatives(pts, np.arange(10, 15), 2, seed=0)
    assert len(reps) == 2 and len(set(reps)) == 2 and set(reps) <= set(range(10, 15))


def test_exactly_n_samples_all_selected():
    pts = np.random.default_rng(0).normal(size=(4, 2))
    assert cluster_representatives(pts, np.array([7, 3, 9, 1]), 4) == [1, 3, 7, 9]


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 25), k=st.integers(1, 6), seed=st.integers(0, 2**32),
       dup=st.booleans())
def test_representatives_are_unique_members(n, k, seed, dup):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    if dup:
        pts[: n // 2] = pts[0]
    ids = np.arange(100, 100 + n)
    reps = cluster_representatives(pts, ids, k, seed)
    assert len(reps) == min(k, n) and len(set(reps)) == len(reps)
    assert set(reps) <= set(ids.tolist())
    assert reps == cluster_representatives(pts, ids, k, seed)


def test_confidence_picks_top_probability():
    # dense logits = [x, 0]; larger x means higher P(class 0)
    net = Network([Dense(1, 2, [[1.0], [0.0]])], (1,), 2)
    ds = Dataset(np.array([[np.log(9)], [np.log(1.5)], [np.log(99)]]), [0, 0, 0], ["a", "b"],
                 ["train"] * 3)
    assert sample_confidence(net, ds, 1).selected[0] == [2]


def test_confidence_ties_take_smaller_id():
    net = Network([Dense(1, 2, [[1.0], [0.0]])], (1,), 2)
    ds = Dataset(np.array([[0.0], [2.0], [2.0], [1.0]]), [0, 0, 0, 1], ["a", "b"], ["train"] * 4)
    plan = sample_confidence(net, ds, 1)
    assert plan.selected == {0: [1], 1: [3]}


def test_confidence_small_class_takes_all(caplog):
    net = identity_probe(2, 2)
    ds = Dataset(TOY, [0, 0, 0, 0, 1, 1], ["a", "b"], ["train"] * 6)
    with caplog.at_level(logging.WARNING):
        plan = sample_confidence(net, ds, 3)
    assert plan.selected[1] == [4, 5]
    assert "class 1" in caplog.text


def test_only_training_split_is_used():
    ds = generate_synthetic(class_count=3, per_class=30, image_size=8, seed=0).with_default_splits(0)
    net = build_cnn((1, 8, 8), (2,), (4,), 3, seed=0)
    train = set(ds.indices("train").tolist())
    for strategy in ("confidence", "random", "clustering"):
        plan = select_samples(strategy, net, ds, 5, seed=1)
        ids = plan.ids()
        assert set(ids) <= train and len(ids) == len(set(ids)) == 15
        for c, members in plan.selected.items():
            assert all(ds.labels[i] == c for i in members)


def test_every_strategy_is_seed_deterministic():
    ds = generate_synthetic(class_count=2, per_class=100, image_size=8, seed=2)
    net = build_cnn((1, 8, 8), (3,), (5,), 2, seed=0)
    for strategy in ("confidence", "random", "clustering"):
        a = select_samples(strategy, net, ds, 10, seed=1)
        b = select_samples(strategy, net, ds, 10, seed=1)
        assert a.dumps() == b.dumps()


def test_random_whole_class_when_n_large():
    ds = Dataset(TOY, [0, 0, 0, 1, 1, 1], ["a", "b"], ["train"] * 6)
    assert sample_random(ds, 10, 0).selected == {0: [0, 1, 2], 1: [3, 4, 5]}


def test_shape_mismatch_rejected():
    ds = Dataset(TOY, [0] * 6, ["a"], ["train"] * 6)
    with pytest.raises(ShapeMismatchError):
        sample_confidence(identity_probe(3, 1), ds, 1)


def test_plan_json():
    plan = SamplePlan("random", 2, 5, {1: [7, 9], 0: [2, 3]})
    d = json.loads(plan.dumps())
    assert d["selected"] == {"0": [2, 3], "1": [7, 9]}
    back = SamplePlan.from_json(d)
    assert back.selected == plan.selected and back.dumps() == plan.dumps()
    assert plan.ids() == [2, 3, 7, 9]
