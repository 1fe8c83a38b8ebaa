"""``relprune`` command line: train, attribute, prune, eval, sweep, report.

Stages talk to each other only through files in the output directory::

    model.nnck  metrics.csv  scores.json  sample_plan.json  mask.json  pruned.nnck  sweep/
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import checkpoint
from .attribution import IgConfig, LrpConfig, NeuronScoreTable, aggregate_unit_scores, attribute
from .config import ALL_METHODS, load_config, rates_of
from .errors import DataError, RelpruneError
from .harness.datasets import generate_synthetic, load_csv_dir, load_nds
from .harness.evaluation import evaluate
from .harness.report import read_report, write_report
from .harness.sweep import run_sweep
from .pruning import (PrunePlan, PruningMask, export_pruned, magnitude_scores, random_scores,
                      rank_and_mask, save_mask)
from .sampling import STRATEGIES, select_samples
from .tensor_net import build_from_config
from .trainer import TrainConfig, train, write_metrics_csv

log = logging.getLogger("relprune")

COMMANDS = ("train", "attribute", "prune", "sweep", "eval", "report")


def load_dataset(cfg):
    d = cfg["dataset"]
    if d["synthetic"] is not None:
        ds = generate_synthetic(**d["synthetic"])
    elif d["path"]:
        if not os.path.exists(d["path"]):
            raise DataError(f"dataset file not found: {d['path']}")
        ds = load_nds(d["path"])
    elif d["csv_dir"]:
        if not os.path.isdir(d["csv_dir"]):
            raise DataError(f"dataset directory not found: {d['csv_dir']}")
        ds = load_csv_dir(d["csv_dir"])
    else:
        raise DataError("no dataset configured (set dataset.path, dataset.csv_dir or dataset.synthetic)")
    return ds.with_default_splits(cfg["train"]["seed"])


def _path(cfg, name):
    return os.path.join(cfg["output"], name)


def _load_model(args, cfg, default="model.nnck"):
    path = args.checkpoint or _path(cfg, default)
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    return checkpoint.load(path)


def _write_json(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def cmd_train(args, cfg):
    ds = load_dataset(cfg)
    tc = TrainConfig.from_dict(cfg["train"])
    model = {k: v for k, v in cfg["model"].items() if v is not None}
    try:
        net = build_from_config(model, ds.sample_shape, ds.class_count, seed=tc.seed)
    except ValueError as exc:
        raise DataError(f"model does not fit the dataset: {exc}") from exc
    result = train(net, ds, tc)
    os.makedirs(cfg["output"], exist_ok=True)
    digest = checkpoint.save(result.network, _path(cfg, "model.nnck"))
    write_metrics_csv(result.metrics, _path(cfg, "metrics.csv"))
    print(f"digest={digest}")
    return 0


def compute_scores(net, ds, cfg):
    att, smp = cfg["attribution"], cfg["sampling"]
    method = att["method"]
    if method == "magnitude":
        return magnitude_scores(net), None
    if method == "random":
        return random_scores(net, smp["seed"]), None
    plan = select_samples(smp["strategy"], net, ds, smp["samples_per_class"], smp["seed"])
    ids = plan.ids()
    x = net.preprocess(ds.samples[ids])
    ig = IgConfig(**att["ig"])
    baseline = None
    if method == "ig" and ig.baseline == "dataset-mean":
        baseline = net.preprocess(ds.samples[ds.indices("train")]).mean(axis=0)
    maps = attribute(net, x, method, lrp_config=LrpConfig(**att["lrp"]), ig_config=ig,
                     baseline=baseline)
    table = aggregate_unit_scores(maps, att["aggregation"], {
        "sampling": plan.strategy, "samples_per_class": plan.samples_per_class,
        "seed": plan.seed, "sample_ids": ids, "target": "predicted"})
    return table, plan


def cmd_attribute(args, cfg):
    net = _load_model(args, cfg)
    ds = load_dataset(cfg)
    table, plan = compute_scores(net, ds, cfg)
    _write_json(args.scores or _path(cfg, "scores.json"), table.dumps())
    if plan is not None:
        _write_json(_path(cfg, "sample_plan.json"), plan.dumps())
    return 0


def cmd_prune(args, cfg):
    net = _load_model(args, cfg)
    path = args.scores or _path(cfg, "scores.json")
    if not os.path.exists(path):
        raise DataError(f"score table not found: {path} (run `attribute` first)")
    with open(path) as fh:
        try:
            table = NeuronScoreTable.from_json(json.load(fh))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataError(f"unreadable score table {path}: {exc}") from exc
    pr = cfg["prune"]
    mask = rank_and_mask(table, PrunePlan(pr["rate"], pr["scope"], pr["protected_layers"]), net)
    save_mask(mask, _path(cfg, "mask.json"))
    digest = export_pruned(net, mask, _path(cfg, "pruned.nnck"))
    print(f"masked_units={len(mask)} digest={digest}")
    return 0


def cmd_eval(args, cfg):
    if args.checkpoint is None and os.path.exists(_path(cfg, "pruned.nnck")):
        args.checkpoint = _path(cfg, "pruned.nnck")
    net = _load_model(args, cfg)
    ds = load_dataset(cfg)
    mask = None
    if args.mask:
        with open(args.mask) as fh:
            mask = PruningMask.from_json(json.load(fh))
    acc, _ = evaluate(net, ds, cfg["sweep"]["split"], mask)
    print(f"accuracy={acc!r}")
    return 0


def cmd_sweep(args, cfg):
    net = _load_model(args, cfg)
    ds = load_dataset(cfg)
    sw, att = cfg["sweep"], cfg["attribution"]
    out_dir = _path(cfg, "sweep")

    def flush(report):
        write_report(report, out_dir, figures=False)

    report = run_sweep(
        net, ds, methods=sw["methods"], samplings=sw["samplings"], rates=rates_of(cfg),
        seeds=sw["seeds"], baselines=sw["baselines"],
        samples_per_class=cfg["sampling"]["samples_per_class"], scope=cfg["prune"]["scope"],
        aggregation=att["aggregation"], lrp_config=LrpConfig(**att["lrp"]),
        ig_config=IgConfig(**att["ig"]), split=sw["split"], threads=args.threads, on_cell=flush)
    report.provenance["config"] = cfg
    write_report(report, out_dir)
    print(f"records={len(report.records)} baseline_accuracy={report.baseline_accuracy!r}")
    if report.failures:
        log.error("%d sweep cell(s) failed; partial results in %s", len(report.failures), out_dir)
        return 1
    return 0


def cmd_report(args, cfg):
    path = args.report or _path(cfg, os.path.join("sweep", "sweep.json"))
    if not os.path.exists(path):
        raise DataError(f"sweep report not found: {path}")
    try:
        report = read_report(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable sweep report {path}: {exc}") from exc
    paths = write_report(report, args.out or os.path.dirname(os.path.abspath(path)))
    for fig in paths.get("figures", []):
        print(fig)
    return 0


HANDLERS = {"train": cmd_train, "attribute": cmd_attribute, "prune": cmd_prune,
            "sweep": cmd_sweep, "eval": cmd_eval, "report": cmd_report}


def build_parser():
    p = argparse.ArgumentParser(prog="relprune", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int, help="overrides train.seed, sampling.seed and sweep.seeds")
    p.add_argument("--rate", type=float, help="overrides prune.rate")
    p.add_argument("--method", help=f"one of {', '.join(ALL_METHODS)}")
    p.add_argument("--sampling", help=f"one of {', '.join(STRATEGIES)}")
    p.add_argument("--scope", help="per-layer or global")
    p.add_argument("--out", help="output directory (overrides config `output`)")
    p.add_argument("--threads", type=int, default=1, help="worker cap for sweep cells")
    p.add_argument("--checkpoint", help="checkpoint to read (default: <out>/model.nnck)")
    p.add_argument("--scores", help="score table path (default: <out>/scores.json)")
    p.add_argument("--mask", help="extra mask JSON applied by `eval`")
    p.add_argument("--report", help="sweep JSON for `report` (default: <out>/sweep/sweep.json)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args):
    o = {}
    if args.seed is not None:
        o.update({"train.seed": args.seed, "sampling.seed": args.seed, "sweep.seeds": [args.seed]})
    if args.rate is not None:
        o["prune.rate"] = args.rate
    if args.method is not None:
        o["attribution.method"] = args.method
    if args.sampling is not None:
        o["sampling.strategy"] = args.sampling
    if args.scope is not None:
        o["prune.scope"] = args.scope
    if args.out is not None and args.command != "report":
        o["output"] = args.out
    return o


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        return HANDLERS[args.command](args, cfg)
    except RelpruneError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("runtime error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
