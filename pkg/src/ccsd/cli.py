"""Command-line entry point: dataset | lift | train | sample | eval | gradcheck."""
from __future__ import annotations

import argparse
import dataclasses
import csv
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ConfigError, build_experiment, builtin_path, get, load_config, merged
from .complex import DimConstraints
from .data import (CheckpointError, DatasetFormatError, build_dataset, complexes_from_graphs, load_checkpoint,
                   read_complexes, spec_hash, split_dataset, write_complexes)
from .lifting import LiftSpec, lift

log = logging.getLogger("ccsd")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 1, 2, 3


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get("CCSD_OUT_DIR") or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _git_version() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, command: str, args, config: dict | None, seed: int | None, outputs: list[str]):
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")},
        "seed": seed,
        "version": _git_version(),
        "config": config,
        "outputs": sorted(outputs),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _experiment(args):
    cfg = load_config(args.config)
    return cfg, build_experiment(cfg, args.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_dataset(args) -> int:
    base = load_config(args.config) if args.config else load_config(str(builtin_path(args.name or "community_small")))
    over: dict = {"dataset": {}}
    if args.name:
        over["dataset"]["name"] = args.name
    if args.lift:
        over["dataset"]["lift"] = args.lift
    if args.k is not None:
        over["dataset"]["path_length"] = args.k
    if args.count is not None:
        over["dataset"]["count"] = args.count
    cfg = merged(base, over)
    exp = build_experiment(cfg, args.seed)
    out = _out_dir(args)
    complexes = build_dataset(exp.dataset)
    train, test = split_dataset(complexes, exp.train.test_fraction, exp.seed)
    write_complexes(out / "dataset.jsonl", complexes)
    write_complexes(out / "train.jsonl", train)
    write_complexes(out / "test.jsonl", test)
    log.info("wrote %d complexes (%d train / %d test) to %s", len(complexes), len(train), len(test), out)
    write_manifest(out, "dataset", args, cfg, exp.seed, ["dataset.jsonl", "train.jsonl", "test.jsonl"])
    return EXIT_OK


def cmd_lift(args) -> int:
    out = _out_dir(args)
    constraints = DimConstraints(args.d_min, args.d_max)
    spec = LiftSpec(args.method, args.k, None, constraints)
    src = read_complexes(args.input)
    lifted = [lift(ct.X, ct.A, spec) for ct in src]
    name = args.output or "lifted.jsonl"
    write_complexes(out / name, lifted)
    write_manifest(out, "lift", args, None, None, [name])
    return EXIT_OK


def _load_sets(args, exp):
    if args.data:
        train = read_complexes(args.data, exp.constraints)
        test = read_complexes(args.test_data, exp.constraints) if args.test_data else []
    else:
        train, test = split_dataset(build_dataset(exp.dataset), exp.train.test_fraction, exp.seed)
    return train, test


def _header(exp, node_dist) -> dict:
    return {"spec_hash": spec_hash(exp.models, exp.sdes), "seed": exp.seed, "sde": list(exp.sdes),
            "models": list(exp.models), "node_dist": node_dist.to_dict(), "setup": exp.setup}


def cmd_train(args) -> int:
    from .pipeline import EmpiricalNodeDist
    from .plotting import plot_loss_curves
    from .training import train

    cfg, exp = _experiment(args)
    if args.max_steps is not None:
        exp.train = dataclasses.replace(exp.train, max_steps=args.max_steps)
    out = _out_dir(args)
    train_set, test_set = _load_sets(args, exp)
    node_dist = EmpiricalNodeDist.from_complexes(train_set)
    result = train(exp.models, train_set, test_set, exp.sdes, exp.train, out, _header(exp, node_dist))
    plot_loss_curves(result.curve, out / "losses.png")
    outputs = ["losses.csv", "losses.png", "final.ckpt"] + (["best.ckpt"] if test_set else [])
    write_manifest(out, "train", args, cfg, exp.seed, outputs)
    return EXIT_OK


def _load_models(exp, path):
    from .nn.models import build
    from .pipeline import EmpiricalNodeDist
    from .training import load_model_state

    header, tensors = load_checkpoint(path, expect_hash=spec_hash(exp.models, exp.sdes))
    models = [build(s) for s in exp.models]
    try:
        load_model_state(models, tensors)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    node_dist = EmpiricalNodeDist({int(k): v for k, v in header["node_dist"].items()})
    return models, node_dist


def summary_stats(complexes) -> dict:
    from .metrics import rank_r_metric

    nodes = [ct.n for ct in complexes]
    edges = [len(ct.edges()) for ct in complexes]
    cells = [float(rank_r_metric(ct, 2).sum()) for ct in complexes]
    return {"count": len(complexes), "mean_nodes": float(np.mean(nodes)), "mean_edges": float(np.mean(edges)),
            "mean_rank2_cells": float(np.mean(cells)),
            "invalid": sum(1 for ct in complexes if ct.violations())}


def cmd_sample(args) -> int:
    from .pipeline import sample

    cfg, exp = _experiment(args)
    models, node_dist = _load_models(exp, args.checkpoint)
    count = args.num_samples or exp.num_samples
    out = _out_dir(args)
    samples = []
    for start in range(0, count, args.batch_size):
        size = min(args.batch_size, count - start)
        sampler = dataclasses.replace(exp.sampler, seed=exp.seed + start)
        samples.extend(sample(models, exp.sdes, sampler, node_dist, size, exp.setup))
    write_complexes(out / "samples.jsonl", samples)
    (out / "samples_summary.json").write_text(json.dumps(summary_stats(samples), indent=2, sort_keys=True) + "\n")
    write_manifest(out, "sample", args, cfg, exp.seed, ["samples.jsonl", "samples_summary.json"])
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import MetricConfig, clustering_histogram, degree_histogram, evaluate, hodge_spectrum
    from .plotting import mean_histogram, plot_histogram_pair, plot_spectra

    cfg = load_config(args.config) if args.config else {}
    mcfg = MetricConfig.from_config(cfg.get("eval"))
    gen = read_complexes(args.generated)
    ref = read_complexes(args.reference)
    report = evaluate(gen, ref, mcfg)
    out = _out_dir(args)
    (out / "report.json").write_text(report.to_json() + "\n")
    row = {"dataset": args.dataset, "model": args.model, "seed": args.seed, **report.to_dict()}
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    plot_histogram_pair(mean_histogram([degree_histogram(c) for c in gen]),
                        mean_histogram([degree_histogram(c) for c in ref]),
                        out / "degree.png", "degree distribution", "degree")
    plot_histogram_pair(mean_histogram([clustering_histogram(c, 20) for c in gen]),
                        mean_histogram([clustering_histogram(c, 20) for c in ref]),
                        out / "clustering.png", "clustering coefficient", "bin (width 0.05)")
    plot_spectra([hodge_spectrum(c) for c in gen[:20]], [hodge_spectrum(c) for c in ref[:20]],
                 out / "spectra.png")
    for k, v in report.values().items():
        if v is not None:
            print(f"{k:20s} {v:.6f}")
    write_manifest(out, "eval", args, cfg or None, args.seed,
                   ["report.json", "report.csv", "degree.png", "clustering.png", "spectra.png"])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .nn.gradcheck import run_suite

    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)
    rows = []
    for name, res in run_suite(seed, args.entries):
        rows.append({"layer": name, "checked": res.checked, "max_rel_err": res.max_rel_err,
                     "worst": res.worst, "passed": res.passed})
        print(f"{'PASS' if res.passed else 'FAIL'}  {name:22s} max rel err {res.max_rel_err:.3e}")
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    (out / "gradcheck.json").write_text(json.dumps(rows, indent=2) + "\n")
    write_manifest(out, "gradcheck", args, None, seed, ["gradcheck.csv", "gradcheck.json"])
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_ERROR


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccsd", description="Score-based generation of combinatorial complexes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required,
                        help="TOML file or built-in name (community_small, grid_small, community_small_smoke)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=None, help="output directory (fallback: $CCSD_OUT_DIR, then ./runs)")

    sp = sub.add_parser("dataset", help="generate a synthetic dataset, optionally lifted")
    common(sp)
    sp.add_argument("--name", choices=["community_small", "grid_small"], default=None)
    sp.add_argument("--lift", choices=["path", "ring", "none"], default=None)
    sp.add_argument("--k", type=int, default=None, help="path length for path lifting")
    sp.add_argument("--count", type=int, default=None)
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("lift", help="lift the graphs of a JSON-lines file")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--method", choices=["path", "ring"], default="path")
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--d-min", type=int, default=3)
    sp.add_argument("--d-max", type=int, default=3)
    sp.add_argument("--output", default=None)
    sp.set_defaults(func=cmd_lift)

    sp = sub.add_parser("train", help="train the three score networks")
    common(sp, config_required=True)
    sp.add_argument("--data", default=None, help="training JSON-lines (default: generate from config)")
    sp.add_argument("--test-data", default=None)
    sp.add_argument("--max-steps", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="generate complexes from a checkpoint")
    common(sp, config_required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--num-samples", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="compare generated and reference complexes")
    common(sp)
    sp.add_argument("--generated", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--dataset", default="")
    sp.add_argument("--model", default="")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient report for every layer and model")
    common(sp)
    sp.add_argument("--entries", type=int, default=25)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DatasetFormatError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
