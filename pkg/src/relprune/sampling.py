"""Per-class selection of the training samples that attributions are computed on."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeMismatchError
from .tensor_net import Network, forward

log = logging.getLogger(__name__)

STRATEGIES = ("confidence", "random", "clustering")


@dataclass
class SamplePlan:
    strategy: str
    samples_per_class: int
    seed: int
    selected: dict = field(default_factory=dict)

    def ids(self) -> list:
        """All selected identifiers, class by class in ascending class order."""
        return [i for c in sorted(self.selected) for i in self.selected[c]]

    def to_json(self) -> dict:
        return {"version": 1, "strategy": self.strategy,
                "samples_per_class": self.samples_per_class, "seed": self.seed,
                "selected": {str(c): list(map(int, ids)) for c, ids in sorted(self.selected.items())}}

    @classmethod
    def from_json(cls, d):
        return cls(d["strategy"], d["samples_per_class"], d["seed"],
                   {int(c): list(ids) for c, ids in d["selected"].items()})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True) + "\n"


def _class_members(dataset, n):
    if n < 1:
        raise ValueError("samples per class must be positive")
    train = dataset.with_default_splits().indices("train")
    labels = dataset.labels[train]
    members = {}
    for c in range(dataset.class_count):
        ids = train[labels == c]
        if len(ids) < n:
            log.warning("class %d has only %d training samples (< %d); using all", c, len(ids), n)
        members[c] = ids
    return members


def _check_network(network, dataset):
    if network.input_shape != dataset.sample_shape:
        raise ShapeMismatchError(
            f"layer 0: dataset samples {dataset.sample_shape} do not match network input "
            f"{network.input_shape}", 0)


def _batched_forward(network, x, batch=256):
    traces = [forward(network, network.preprocess(x[s:s + batch]))
              for s in range(0, len(x), batch)]
    return traces


def sample_confidence(network: Network, dataset, n: int = 10, seed: int = 0) -> SamplePlan:
    """Top-``n`` samples per class by the softmax probability of their own class."""
    _check_network(network, dataset)
    plan = SamplePlan("confidence", n, seed)
    for c, ids in _class_members(dataset, n).items():
        if len(ids) == 0:
            plan.selected[c] = []
            continue
        probs = np.concatenate([t.batch_probs[:, c] for t in
                                _batched_forward(network, dataset.samples[ids])])
        order = np.lexsort((ids, -probs))
        plan.selected[c] = sorted(int(i) for i in ids[order[:n]])
    return plan


def sample_random(dataset, n: int = 10, seed: int = 0) -> SamplePlan:
    plan = SamplePlan("random", n, seed)
    for c, ids in _class_members(dataset, n).items():
        rng = np.random.default_rng((seed, c))
        pick = rng.choice(len(ids), size=min(n, len(ids)), replace=False) if len(ids) else []
        plan.selected[c] = sorted(int(ids[i]) for i in pick)
    return plan


def penultimate_activations(network: Network, x) -> np.ndarray:
    """Input to the final classifier layer, one row per sample."""
    k = network.classifier_index
    rows = [t.inputs[k].reshape(len(t.inputs[k]), -1) for t in _batched_forward(network, x)]
    return np.concatenate(rows)


def _sqdist(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def kmeans_pp_init(points, k, rng):
    n = len(points)
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sqdist(points, np.asarray(centers)).min(axis=1)
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(points[idx])
    return np.array(centers, dtype=np.float64)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Stops once assignments no longer change. An empty cluster is reseeded at
    the point farthest from its current centroid. Returns ``(centers, labels)``.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise DataError("cannot cluster an empty set")
    k = min(k, len(points))
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(points, k, rng)
    labels = None
    for _ in range(max_iter):
        new = _sqdist(points, centers).argmin(axis=1)
        for j in range(k):
            if not np.any(new == j):
                d = ((points - centers[new]) ** 2).sum(axis=1)
                far = int(np.argmax(d))
                new[far] = j
                centers[j] = points[far]
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
    return centers, labels


def cluster_representatives(points, ids, k: int, seed: int = 0) -> list:
    """One actual member per cluster: the one nearest its centroid (ties to the smaller id)."""
    ids = np.asarray(ids)
    if len(ids) <= k:
        return sorted(int(i) for i in ids)
    centers, labels = kmeans(points, k, seed)
    chosen: list = []
    for j in range(len(centers)):
        d = ((points - centers[j]) ** 2).sum(axis=1)
        free = np.array([int(i) not in chosen for i in ids])
        pool = np.flatnonzero((labels == j) & free)
        if len(pool) == 0:
            pool = np.flatnonzero(free)
        best = pool[np.lexsort((ids[pool], d[pool]))[0]]
        chosen.append(int(ids[best]))
    return sorted(chosen)


def sample_clustering(network: Network, dataset, n: int = 10, seed: int = 0) -> SamplePlan:
    """k-means (k = n) per class on penultimate activations; nearest member of each cluster."""
    _check_network(network, dataset)
    plan = SamplePlan("clustering", n, seed)
    for c, ids in _class_members(dataset, n).items():
        if len(ids) == 0:
            raise DataError(f"class {c} has no training samples to cluster")
        emb = penultimate_activations(network, dataset.samples[ids])
        plan.selected[c] = cluster_representatives(emb, ids, n, seed=(seed, c))
    return plan


def select_samples(strategy: str, network: Network, dataset, n: int = 10, seed: int = 0):
    if strategy == "confidence":
        return sample_confidence(network, dataset, n, seed)
    if strategy == "random":
        return sample_random(dataset, n, seed)
    if strategy == "clustering":
        return sample_clustering(network, dataset, n, seed)
    raise ValueError(f"unknown sampling strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
