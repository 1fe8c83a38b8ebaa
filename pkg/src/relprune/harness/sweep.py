"""Accuracy-vs-pruning-rate sweeps over attribution method x sampling strategy x seed."""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import checkpoint
from ..attribution import METHODS, IgConfig, LrpConfig, aggregate_unit_scores, attribute
from ..pruning import PrunePlan, magnitude_scores, random_scores, rank_and_mask
from ..sampling import select_samples
from ..tensor_net import Network, macs_per_unit
from .evaluation import evaluate

log = logging.getLogger(__name__)

STANDARD_RATES = (0.15, 0.30, 0.50, 0.70)
BASELINES = ("magnitude", "random")
NA = "n/a"

# accuracy drop from the unpruned model averaged over datasets and architectures
# (DLB/IG/LRP x clustering/confidence/random, rates 0.15/0.30/0.50/0.70); reference only
REFERENCE_DROPS = {
    ("dlb", "clustering"): ((0.001, 0.01), (0.058, 0.11), (0.234, 0.30), (0.384, 0.31)),
    ("dlb", "confidence"): ((0.002, 0.01), (0.054, 0.11), (0.215, 0.27), (0.398, 0.31)),
    ("dlb", "random"): ((0.002, 0.01), (0.059, 0.12), (0.239, 0.28), (0.400, 0.32)),
    ("ig", "clustering"): ((0.000, 0.00), (0.036, 0.07), (0.255, 0.29), (0.389, 0.31)),
    ("ig", "confidence"): ((0.002, 0.01), (0.026, 0.04), (0.253, 0.27), (0.398, 0.30)),
    ("ig", "random"): ((0.002, 0.01), (0.039, 0.06), (0.224, 0.29), (0.375, 0.30)),
    ("lrp", "clustering"): ((-0.001, 0.00), (0.018, 0.04), (0.196, 0.28), (0.382, 0.33)),
    ("lrp", "confidence"): ((0.000, 0.00), (0.027, 0.04), (0.203, 0.28), (0.397, 0.31)),
    ("lrp", "random"): ((-0.001, 0.00), (0.016, 0.04), (0.205, 0.27), (0.384, 0.33)),
}


def fine_rates(step: float = 0.05, stop: float = 0.9) -> list:
    return [round(k * step, 10) for k in range(int(round(stop / step)) + 1)]


@dataclass
class SweepRecord:
    method: str
    sampling: str
    rate: float
    seed: int
    accuracy: float
    acc_drop: float
    masked_unit_count: int
    masked_fraction: float = 0.0
    masked_macs: int = 0


def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return float("nan"), float("nan")
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std


@dataclass
class SweepReport:
    baseline_accuracy: float
    records: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def sort(self):
        self.records.sort(key=lambda r: (r.method, r.sampling, r.rate, r.seed))
        return self

    def summary(self) -> list:
        """Mean and sample std over seeds for every (method, sampling, rate)."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r.method, r.sampling, r.rate), []).append(r)
        rows = []
        for (method, sampling, rate), recs in sorted(groups.items()):
            acc_mean, acc_std = _mean_std([r.accuracy for r in recs])
            drop_mean, drop_std = _mean_std([r.acc_drop for r in recs])
            rows.append({"method": method, "sampling": sampling, "rate": rate, "n": len(recs),
                         "accuracy_mean": acc_mean, "accuracy_std": acc_std,
                         "acc_drop_mean": drop_mean, "acc_drop_std": drop_std})
        return rows

    def mean_drop(self, method, sampling, rate) -> float:
        drops = [r.acc_drop for r in self.records
                 if r.method == method and r.sampling == sampling and math.isclose(r.rate, rate)]
        return _mean_std(drops)[0]

    def to_json(self) -> dict:
        return {"version": 1, "baseline_accuracy": self.baseline_accuracy,
                "records": [asdict(r) for r in self.records], "summary": self.summary(),
                "provenance": self.provenance, "failures": self.failures}

    @classmethod
    def from_json(cls, d):
        return cls(d["baseline_accuracy"], [SweepRecord(**r) for r in d["records"]],
                   d.get("provenance", {}), d.get("failures", []))

    def __eq__(self, other):
        if not isinstance(other, SweepReport):
            return NotImplemented
        return self.to_json() == other.to_json()


def network_digest(network: Network) -> str:
    return hashlib.sha256(checkpoint.encode(network)).hexdigest()


def _unit_scores(network, dataset, method, sampling, seed, samples_per_class, aggregation,
                 lrp_config, ig_config):
    if method == "magnitude":
        return magnitude_scores(network)
    if method == "random":
        return random_scores(network, seed)
    plan = select_samples(sampling, network, dataset, samples_per_class, seed)
    ids = plan.ids()
    x = network.preprocess(dataset.samples[ids])
    baseline = None
    if method == "ig" and ig_config is not None and ig_config.baseline == "dataset-mean":
        tr = dataset.indices("train")
        baseline = network.preprocess(dataset.samples[tr]).mean(axis=0)
    maps = attribute(network, x, method, lrp_config=lrp_config, ig_config=ig_config,
                     baseline=baseline)
    return aggregate_unit_scores(maps, aggregation, {
        "sampling": sampling, "sample_ids": ids, "seed": seed, "target": "predicted"})


def run_sweep(network: Network, dataset, methods: Sequence[str] = METHODS,
              samplings: Sequence[str] = ("confidence", "random", "clustering"),
              rates: Sequence[float] = STANDARD_RATES, seeds: Sequence[int] = (0,),
              baselines: Sequence[str] = BASELINES, samples_per_class: int = 10,
              scope: str = "per-layer", aggregation: str = "signed-mean",
              lrp_config: Optional[LrpConfig] = None, ig_config: Optional[IgConfig] = None,
              split: str = "test", threads: int = 1, on_cell=None) -> SweepReport:
    """Score, mask and evaluate every cell against one frozen network.

    A cell is (method, sampling, seed); its scores are computed once and then
    masked at every rate. Cells that raise are logged in ``report.failures``
    and the remaining cells still run. ``on_cell(report)`` is called after
    each finished cell so callers can flush partial results.
    """
    rates = [float(r) for r in rates]
    for r in rates:
        PrunePlan(r, scope)
    dataset = dataset.with_default_splits()
    base_acc, _ = evaluate(network, dataset, split)
    macs = macs_per_unit(network)
    total_units = sum(network.layers[i].units for i in network.prunable_layers[:-1])
    cells = []
    for m in methods:
        if m in BASELINES:
            continue
        for s in samplings:
            cells += [(m, s, seed) for seed in seeds]
    for m in baselines:
        cells += [(m, NA, seed) for seed in seeds]
    for m in methods:
        if m in BASELINES and m not in baselines:
            cells += [(m, NA, seed) for seed in seeds]

    report = SweepReport(base_acc, provenance={
        "checkpoint_digest": network_digest(network),
        "split": split, "scope": scope, "aggregation": aggregation, "target": "predicted",
        "methods": list(methods), "samplings": list(samplings), "baselines": list(baselines),
        "rates": rates, "seeds": list(seeds), "samples_per_class": samples_per_class,
        "lrp": asdict(lrp_config or LrpConfig()), "ig": asdict(ig_config or IgConfig()),
    })

    def run_cell(cell):
        method, sampling, seed = cell
        scores = _unit_scores(network, dataset, method, sampling, seed, samples_per_class,
                              aggregation, lrp_config, ig_config)
        out = []
        for rate in rates:
            mask = rank_and_mask(scores, PrunePlan(rate, scope), network)
            acc, _ = evaluate(network, dataset, split, mask)
            out.append(SweepRecord(
                method, sampling, rate, seed, acc, base_acc - acc, len(mask),
                len(mask) / total_units if total_units else 0.0,
                int(sum(macs[l] for l, _ in mask.units))))
        return out

    def finish(cell, fut_or_exc):
        if isinstance(fut_or_exc, BaseException):
            log.error("sweep cell %s failed: %s", cell, fut_or_exc)
            report.failures.append({"method": cell[0], "sampling": cell[1], "seed": cell[2],
                                    "error": repr(fut_or_exc)})
        else:
            report.records.extend(fut_or_exc)
        report.sort()
        report.failures.sort(key=lambda f: (f["method"], f["sampling"], f["seed"]))
        if on_cell is not None:
            on_cell(report)

    def guarded(cell):
        try:
            return run_cell(cell)
        except Exception as exc:  # noqa: BLE001 - recorded as a failed cell
            return exc

    if threads <= 1:
        for cell in cells:
            finish(cell, guarded(cell))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for cell, result in zip(cells, pool.map(guarded, cells)):
                finish(cell, result)
    return report
