"""Per-unit relevance for one (sample, target class) pair, and aggregation over samples.

Three methods share one output convention: ``AttributionMap.layers[i]`` holds
the relevance of the *outputs* of prunable layer ``i`` (a vector for dense
layers, a ``(C, H, W)`` grid for conv layers). A unit's score is the sum of
its grid.

* ``lrp``: epsilon rule (z-plus optional) starting from the target logit.
* ``integrated_gradients``: right-Riemann path integral from a baseline; hidden
  layers use ``(a(x) - a(x0)) * mean path gradient`` along the input-space path.
* ``dl_backtrace``: baseline-free proportional split. Each output unit sends
  its relevance back to its inputs in two flows, one over the positive
  contributions ``a_i * w_ij`` and one over the negative ones, sized by the
  share of each in the total absolute contribution. Both flows keep the sign
  of the relevance they carry, so the per-layer total is conserved exactly
  for bias-free layers. This is our own deterministic variant; it is not the
  published DL-Backtrace rule set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import MissingTraceError, ShapeMismatchError
from .tensor_net import Network, backward, forward

METHODS = ("lrp", "ig", "dlb")
AGGREGATION_MODES = ("signed-mean", "abs-mean")


@dataclass
class LrpConfig:
    epsilon: float = 1e-6
    rule: str = "epsilon"
    # per-kind override, e.g. {"conv2d": "z-plus"}
    rules: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("LRP epsilon must be positive")
        for r in [self.rule, *self.rules.values()]:
            if r not in ("epsilon", "z-plus"):
                raise ValueError(f"unknown LRP rule {r!r}")

    def rule_for(self, kind):
        return self.rules.get(kind, self.rule)


@dataclass
class IgConfig:
    steps: int = 128
    baseline: str = "zeros"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("integrated gradients needs steps >= 1")
        if self.baseline not in ("zeros", "dataset-mean"):
            raise ValueError(f"unknown IG baseline {self.baseline!r}")


@dataclass
class AttributionMap:
    method: str
    target_class: int
    layers: dict
    output_score: float
    layer_sums: dict = field(default_factory=dict)
    input: Optional[np.ndarray] = None
    baseline_score: Optional[float] = None

    def unit_scores(self, layer: int) -> np.ndarray:
        grid = np.asarray(self.layers[layer])
        return grid.reshape(grid.shape[0], -1).sum(axis=1) if grid.ndim > 1 else grid

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "target_class": int(self.target_class),
            "output_score": float(self.output_score),
            "layers": [{"layer": int(i), "scores": np.asarray(v).tolist()}
                       for i, v in sorted(self.layers.items())],
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["method"], d["target_class"],
                   {e["layer"]: np.asarray(e["scores"], dtype=np.float64) for e in d["layers"]},
                   d.get("output_score", float("nan")))


@dataclass
class NeuronScoreTable:
    scores: dict
    provenance: dict = field(default_factory=dict)

    @property
    def units(self):
        return sorted(self.scores)

    def layer_scores(self, layer: int) -> np.ndarray:
        return np.array([s for (l, _), s in sorted(self.scores.items()) if l == layer])

    def scaled(self, factor: float) -> "NeuronScoreTable":
        return NeuronScoreTable({k: v * factor for k, v in self.scores.items()},
                                dict(self.provenance))

    def to_json(self) -> dict:
        return {
            "version": 1,
            "scores": [{"layer": l, "unit": u, "score": float(s)}
                       for (l, u), s in sorted(self.scores.items())],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, d):
        scores = {}
        for e in d["scores"]:
            key = (int(e["layer"]), int(e["unit"]))
            if key in scores:
                raise ValueError(f"duplicate unit {key} in score table")
            scores[key] = float(e["score"])
        return cls(scores, d.get("provenance", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n"


def _onehot(targets, n):
    out = np.zeros((len(targets), n))
    out[np.arange(len(targets)), targets] = 1.0
    return out


def _targets(trace, target):
    b = trace.batch_logits.shape[0]
    if target is None:
        return trace.batch_logits.argmax(axis=1)
    t = np.broadcast_to(np.asarray(target, dtype=np.int64), (b,))
    if np.any(t < 0) or np.any(t >= trace.batch_logits.shape[1]):
        raise ValueError(f"target class out of range: {target}")
    return t


# -- LRP -----------------------------------------------------------------------

def _stabilize(z, eps):
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def _lrp_dense(layer, a, r, rule, eps):
    w = layer.params["weight"]
    if rule == "z-plus":
        w = np.maximum(w, 0.0)
        z = a @ w.T
    else:
        z = a @ w.T + layer.params["bias"]
    s = r / _stabilize(z, eps)
    return a * (s @ w)


def _lrp_conv(layer, a, r, rule, eps):
    cols, _ = layer.im2col(a)
    w = layer.weight_matrix()
    b = layer.params["bias"]
    if rule == "z-plus":
        w = np.maximum(w, 0.0)
        b = 0.0
    z = cols @ w.T + b
    rb = r.reshape(r.shape[0], layer.out_channels, -1).transpose(0, 2, 1)
    s = rb / _stabilize(z, eps)
    return a * layer.col2im(s @ w, a.shape[1:])


# -- DL-Backtrace variant ------------------------------------------------------

def _split_weights(contrib, bias):
    """Fraction of each output's relevance sent to each input (last axis)."""
    absc = np.abs(contrib)
    total = absc.sum(axis=-1) + np.abs(bias)
    return absc, total


def _dlb_dense(layer, a, r):
    w = layer.params["weight"]
    contrib = a[:, None, :] * w[None]
    absc, total = _split_weights(contrib, layer.params["bias"])
    safe = np.where(total > 0, total, 1.0)
    frac = np.where(total[..., None] > 0, absc / safe[..., None], 1.0 / w.shape[1])
    return np.einsum("bo,boi->bi", r, frac)


def _dlb_conv(layer, a, r, chunk=8):
    w = layer.weight_matrix()
    bias = layer.params["bias"]
    valid, _ = layer.im2col(np.ones((1,) + a.shape[1:]))
    n_valid = valid.sum(axis=-1, keepdims=True)
    uniform = (valid / n_valid)[:, :, None, :]
    out = np.empty_like(a)
    for s in range(0, a.shape[0], chunk):
        ab = a[s:s + chunk]
        cols, _ = layer.im2col(ab)
        contrib = cols[:, :, None, :] * w[None, None]
        absc, total = _split_weights(contrib, bias)
        safe = np.where(total > 0, total, 1.0)
        frac = np.where(total[..., None] > 0, absc / safe[..., None], uniform)
        rb = r[s:s + chunk].reshape(len(ab), layer.out_channels, -1).transpose(0, 2, 1)
        out[s:s + chunk] = layer.col2im(np.einsum("blo,blok->blk", rb, frac), ab.shape[1:])
    return out


def _propagate(network: Network, trace, targets, method, lrp_config=None):
    """Walk the network backwards; returns relevance at every layer output and at the input."""
    n = len(network.layers)
    logits = trace.batch_logits
    b = logits.shape[0]
    start = logits[np.arange(b), targets]
    if method == "dlb":
        start = np.abs(start)
    r = _onehot(targets, network.class_count) * start[:, None]
    at_output = [None] * n
    for i in range(n - 1, -1, -1):
        layer = network.layers[i]
        at_output[i] = r
        a = trace.inputs[i]
        if layer.kind == "dense":
            r = (_dlb_dense(layer, a, r) if method == "dlb"
                 else _lrp_dense(layer, a, r, lrp_config.rule_for("dense"), lrp_config.epsilon))
        elif layer.kind == "conv2d":
            r = (_dlb_conv(layer, a, r) if method == "dlb"
                 else _lrp_conv(layer, a, r, lrp_config.rule_for("conv2d"), lrp_config.epsilon))
        elif layer.kind == "maxpool2d":
            r = layer.route(r, trace.caches[i], a.shape[1:])
        elif layer.kind == "flatten":
            r = r.reshape(a.shape)
        elif layer.kind in ("relu", "softmax"):
            pass
        else:
            raise ValueError(f"unsupported layer kind {layer.kind!r} for {method}")
    return r, at_output, start


def _maps_from_relevance(network, method, targets, r_in, at_output, scores):
    maps = []
    for k in range(len(targets)):
        sums = {"input": float(r_in[k].sum())}
        sums.update({i: float(at_output[i][k].sum()) for i in range(len(network.layers))})
        maps.append(AttributionMap(
            method=method, target_class=int(targets[k]),
            layers={i: at_output[i][k] for i in network.prunable_layers},
            output_score=float(scores[k]), layer_sums=sums, input=r_in[k]))
    return maps


def _require_trace(trace):
    if not trace.recorded:
        raise MissingTraceError("attribution needs a trace recorded with record=True")


def lrp(network: Network, trace, target=None, config: Optional[LrpConfig] = None):
    """Epsilon-rule LRP from the target logit.

    Returns one map, or a list when ``trace`` holds a batch. ``target=None``
    picks the predicted class.
    """
    _require_trace(trace)
    config = config or LrpConfig()
    targets = _targets(trace, target)
    r_in, at_output, start = _propagate(network, trace, targets, "lrp", config)
    maps = _maps_from_relevance(network, "lrp", targets, r_in, at_output, start)
    return maps[0] if trace.single else maps


def dl_backtrace(network: Network, trace, target=None):
    _require_trace(trace)
    targets = _targets(trace, target)
    r_in, at_output, _ = _propagate(network, trace, targets, "dlb")
    scores = trace.batch_logits[np.arange(len(targets)), targets]
    maps = _maps_from_relevance(network, "dlb", targets, r_in, at_output, scores)
    return maps[0] if trace.single else maps


def integrated_gradients(network: Network, x, target=None, config: Optional[IgConfig] = None,
                         baseline=None, chunk: int = 64) -> AttributionMap:
    """IG for a single input ``x``.

    ``baseline`` overrides ``config.baseline``; the "dataset-mean" setting
    requires the caller to pass the mean explicitly.
    """
    config = config or IgConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.input_shape:
        raise ShapeMismatchError(f"layer 0: input shape {x.shape} does not match "
                                 f"{network.input_shape}", 0)
    if baseline is None:
        if config.baseline == "dataset-mean":
            raise ValueError("dataset-mean baseline needs the mean passed as `baseline`")
        baseline = np.zeros_like(x)
    x0 = np.broadcast_to(np.asarray(baseline, dtype=np.float64), x.shape)

    ends = forward(network, np.stack([x0, x]))
    t = int(ends.batch_logits[1].argmax()) if target is None else int(target)
    if not 0 <= t < network.class_count:
        raise ValueError(f"target class out of range: {t}")
    n = len(network.layers)
    grad_in = np.zeros_like(x)
    grad_out = [np.zeros(network.shapes[i + 1]) for i in range(n)]
    alphas = np.arange(1, config.steps + 1) / config.steps
    og = np.zeros(network.class_count)
    og[t] = 1.0
    for s in range(0, config.steps, chunk):
        a = alphas[s:s + chunk].reshape((-1,) + (1,) * x.ndim)
        tr = forward(network, x0 + a * (x - x0))
        g = backward(network, tr, og)
        grad_in += g.layer_inputs[0].sum(axis=0)
        for i in range(n):
            grad_out[i] += (g.layer_inputs[i + 1] if i + 1 < n else g.logits).sum(axis=0)
    grad_in /= config.steps
    layers = {}
    sums = {"input": None}
    for i in range(n):
        delta = ends.outputs[i][1] - ends.outputs[i][0]
        attr = delta * grad_out[i] / config.steps
        sums[i] = float(attr.sum())
        if network.layers[i].prunable:
            layers[i] = attr
    inp = (x - x0) * grad_in
    sums["input"] = float(inp.sum())
    return AttributionMap("ig", t, layers, float(ends.batch_logits[1, t]), sums, inp,
                          float(ends.batch_logits[0, t]))


def attribute(network: Network, x, method: str, targets=None, lrp_config=None, ig_config=None,
              baseline=None, chunk: int = 32) -> list:
    """Attribution maps for a batch of already-preprocessed inputs, in input order.

    ``targets=None`` attributes each sample's predicted class.
    """
    if method not in METHODS:
        raise ValueError(f"unknown attribution method {method!r}; valid: {', '.join(METHODS)}")
    x = np.asarray(x, dtype=np.float64)
    maps = []
    if method == "ig":
        for k, xi in enumerate(x):
            t = None if targets is None else int(targets[k])
            maps.append(integrated_gradients(network, xi, t, ig_config, baseline))
        return maps
    for s in range(0, len(x), chunk):
        tr = forward(network, x[s:s + chunk])
        t = None if targets is None else np.asarray(targets[s:s + chunk])
        if method == "lrp":
            maps.extend(lrp(network, tr, t, lrp_config))
        else:
            maps.extend(dl_backtrace(network, tr, t))
    return maps


def aggregate_unit_scores(maps: Sequence[AttributionMap], mode: str = "signed-mean",
                          provenance: Optional[dict] = None) -> NeuronScoreTable:
    """Channel-sum each map, then combine per unit across samples in the given order."""
    if not maps:
        raise ValueError("cannot aggregate an empty sequence of attribution maps")
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    methods = {m.method for m in maps}
    if len(methods) > 1:
        raise ValueError(f"cannot aggregate maps from mixed methods {sorted(methods)}")
    layer_ids = sorted(maps[0].layers)
    scores = {}
    for layer in layer_ids:
        per_sample = np.stack([m.unit_scores(layer) for m in maps])
        if mode == "abs-mean":
            per_sample = np.abs(per_sample)
        agg = per_sample.mean(axis=0)
        for u, s in enumerate(agg):
            scores[(layer, u)] = float(s)
    prov = {"method": methods.pop(), "aggregation": mode, "samples": len(maps)}
    prov.update(provenance or {})
    return NeuronScoreTable(scores, prov)
