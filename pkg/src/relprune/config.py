"""Run configuration: one JSON document, strict keys, documented defaults."""
from __future__ import annotations

import copy
import json

from .attribution import AGGREGATION_MODES, METHODS, IgConfig, LrpConfig
from .errors import ConfigError
from .harness.sweep import BASELINES, STANDARD_RATES, fine_rates
from .pruning import SCOPES
from .sampling import STRATEGIES
from .trainer import TrainConfig

ALL_METHODS = METHODS + BASELINES

DEFAULTS = {
    "dataset": {"path": None, "csv_dir": None, "synthetic": None},
    "model": {"kind": None, "channels": [16, 32], "hidden": [64], "kernel": 3, "pool": 2,
              "layers": None},
    "train": TrainConfig().to_dict(),
    "attribution": {"method": "lrp", "aggregation": "signed-mean",
                    "lrp": {"epsilon": 1e-6, "rule": "epsilon", "rules": {}},
                    "ig": {"steps": 128, "baseline": "zeros"}},
    "sampling": {"strategy": "random", "samples_per_class": 10, "seed": 0},
    "prune": {"rate": 0.3, "scope": "per-layer", "protected_layers": []},
    "sweep": {"rates": "standard", "methods": list(METHODS),
              "samplings": list(STRATEGIES), "baselines": list(BASELINES),
              "seeds": [0], "split": "test"},
    "output": "runs/default",
}

SYNTHETIC_KEYS = {"class_count", "per_class", "image_size", "noise", "seed", "channels", "jitter"}


def _merge(base, override, where):
    if not isinstance(override, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        free_form = path in ("train.augmentation", "attribution.lrp.rules", "dataset.synthetic")
        if isinstance(base[key], dict) and not free_form:
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None) -> dict:
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = _merge(DEFAULTS, raw, "")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if key:
            cfg[section][key] = value
        else:
            cfg[section] = value
    validate(cfg)
    return cfg


def rates_of(cfg) -> list:
    rates = cfg["sweep"]["rates"]
    if rates == "standard":
        return list(STANDARD_RATES)
    if rates == "fine":
        return fine_rates()
    if not isinstance(rates, list) or not rates:
        raise ConfigError("sweep.rates must be 'standard', 'fine' or a non-empty list")
    return [float(r) for r in rates]


def validate(cfg) -> None:
    try:
        TrainConfig.from_dict(cfg["train"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    syn = cfg["dataset"]["synthetic"]
    if syn is not None:
        if not isinstance(syn, dict):
            raise ConfigError("dataset.synthetic must be an object")
        unknown = set(syn) - SYNTHETIC_KEYS
        if unknown:
            raise ConfigError(f"unknown config key: dataset.synthetic.{sorted(unknown)[0]}")
    att = cfg["attribution"]
    if att["method"] not in ALL_METHODS:
        raise ConfigError(f"attribution.method {att['method']!r} is invalid; valid methods: "
                          f"{', '.join(ALL_METHODS)}")
    if att["aggregation"] not in AGGREGATION_MODES:
        raise ConfigError(f"attribution.aggregation must be one of {AGGREGATION_MODES}")
    try:
        LrpConfig(**att["lrp"])
        IgConfig(**att["ig"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"attribution: {exc}") from exc
    smp = cfg["sampling"]
    if smp["strategy"] not in STRATEGIES:
        raise ConfigError(f"sampling.strategy must be one of {', '.join(STRATEGIES)}")
    if not isinstance(smp["samples_per_class"], int) or smp["samples_per_class"] < 1:
        raise ConfigError("sampling.samples_per_class must be a positive integer")
    pr = cfg["prune"]
    if not isinstance(pr["rate"], (int, float)) or not 0 <= pr["rate"] <= 1:
        raise ConfigError("prune.rate must lie in [0, 1]")
    if pr["scope"] not in SCOPES:
        raise ConfigError(f"prune.scope must be one of {', '.join(SCOPES)}")
    sw = cfg["sweep"]
    for m in sw["methods"]:
        if m not in ALL_METHODS:
            raise ConfigError(f"sweep.methods: {m!r} is invalid; valid methods: {', '.join(ALL_METHODS)}")
    for s in sw["samplings"]:
        if s not in STRATEGIES:
            raise ConfigError(f"sweep.samplings: {s!r} is invalid")
    for b in sw["baselines"]:
        if b not in BASELINES:
            raise ConfigError(f"sweep.baselines: {b!r} is invalid")
    if sw["split"] not in ("train", "val", "test"):
        raise ConfigError("sweep.split must be train, val or test")
    if any(not 0 <= r <= 1 for r in rates_of(cfg)):
        raise ConfigError("sweep.rates must lie in [0, 1]")
    if not isinstance(cfg["output"], str):
        raise ConfigError("output must be a directory path")
