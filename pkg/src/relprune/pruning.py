"""Rank units by score, build masks at a pruning rate, export weight-zeroed checkpoints."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .attribution import NeuronScoreTable
from .tensor_net import Network

SCOPES = ("per-layer", "global")


@dataclass(frozen=True)
class PrunePlan:
    rate: float
    scope: str = "per-layer"
    protected_layers: frozenset = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"pruning rate {self.rate} outside [0, 1]")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}; valid: {', '.join(SCOPES)}")
        object.__setattr__(self, "protected_layers", frozenset(self.protected_layers))


@dataclass
class PruningMask:
    units: frozenset
    origin: dict = field(default_factory=dict)

    def __post_init__(self):
        self.units = frozenset((int(l), int(u)) for l, u in self.units)

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(sorted(self.units))

    def to_json(self) -> dict:
        return {"version": 1, "origin": self.origin, "units": [list(u) for u in sorted(self.units)]}

    @classmethod
    def from_json(cls, d):
        units = [tuple(u) for u in d["units"]]
        if len(set(units)) != len(units):
            raise ValueError("mask lists a unit more than once")
        return cls(frozenset(units), d.get("origin", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True) + "\n"


def prune_count(rate: float, n: int) -> int:
    # tolerance keeps e.g. 0.29 * 100 from flooring to 28
    return min(n, int(math.floor(rate * n + 1e-9)))


def _ordered(units, scores):
    return sorted(units, key=lambda u: (scores[u], u))


def rank_and_mask(scores: NeuronScoreTable, plan: PrunePlan, network: Network = None) -> PruningMask:
    """Lowest signed scores first; ties resolved by ascending (layer, unit).

    The last scored layer is treated as the classifier and always protected.
    When ``network`` is given the table must cover exactly its prunable units.
    """
    table = scores.scores
    if network is not None:
        expected = set(network.all_units())
        missing = expected - set(table)
        if missing:
            raise ValueError(f"score table is missing units {sorted(missing)[:5]}...")
        extra = set(table) - expected
        if extra:
            raise ValueError(f"score table has units not in the network: {sorted(extra)[:5]}")
    layers = sorted({l for l, _ in table})
    protected = set(plan.protected_layers) | ({layers[-1]} if layers else set())
    open_units = [u for u in table if u[0] not in protected]
    if plan.scope == "per-layer":
        chosen = []
        for layer in layers:
            if layer in protected:
                continue
            units = [u for u in open_units if u[0] == layer]
            chosen += _ordered(units, table)[:prune_count(plan.rate, len(units))]
    else:
        chosen = _ordered(open_units, table)[:prune_count(plan.rate, len(open_units))]
    origin = {"rate": plan.rate, "scope": plan.scope, "protected_layers": sorted(protected),
              "scores": scores.provenance}
    return PruningMask(frozenset(chosen), origin)


def magnitude_scores(network: Network) -> NeuronScoreTable:
    """L1 norm of each unit's incoming weights plus |bias|."""
    scores = {}
    for i in network.prunable_layers:
        layer = network.layers[i]
        w = layer.params["weight"].reshape(layer.units, -1)
        vals = np.abs(w).sum(axis=1) + np.abs(layer.params["bias"])
        scores.update({(i, u): float(v) for u, v in enumerate(vals)})
    return NeuronScoreTable(scores, {"method": "magnitude"})


def random_scores(network: Network, seed: int = 0) -> NeuronScoreTable:
    rng = np.random.default_rng(seed)
    units = network.all_units()
    vals = rng.random(len(units))
    return NeuronScoreTable({u: float(v) for u, v in zip(units, vals)},
                            {"method": "random", "seed": seed})


def apply_mask(network: Network, mask) -> Network:
    """Copy with masked units' incoming weights and biases zeroed and the mask recorded."""
    units = network.check_units(mask)
    out = network.copy()
    for layer_idx, unit in units:
        params = out.layers[layer_idx].params
        params["weight"][unit] = 0.0
        params["bias"][unit] = 0.0
    out.mask = out.mask | units
    return out


def export_pruned(network: Network, mask, path) -> str:
    """Write the pruned checkpoint; returns its digest."""
    return checkpoint.save(apply_mask(network, mask), path)


def load_mask(path) -> PruningMask:
    with open(path) as fh:
        return PruningMask.from_json(json.load(fh))


def save_mask(mask: PruningMask, path) -> None:
    with open(path, "w") as fh:
        fh.write(mask.dumps())
