"""Command line: gen-data, pretrain-mixer, train-agent, evaluate, verify, sweep.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numeric failure
(diverged training or a failed verification).  Outputs default to
``$MGM_OUTPUT_ROOT`` (or ``./mgm-output``) when ``--out`` is omitted.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, experiments, seeding, theory
from .autodiff import NonFiniteError
from .training import (MODES, ConfigurationError, GanHyper, Mixer, MgmSetup, TrainingDiverged,
                       load_agent_generator, mixer_hyper, pretrain_mixer, train_agent)

log = logging.getLogger("mgm")

EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 1, 2, 3
TOLERANCE = 1e-6


class UsageError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get("MGM_OUTPUT_ROOT", "mgm-output"))


def _out(args, default_name: str) -> Path:
    return Path(args.out) if args.out else output_root() / default_name


# ------------------------------------------------------------ flag parsers

def _ranged(kind, lo=None, hi=None, lo_open=False):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {kind.__name__}, got {text!r}")
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise argparse.ArgumentTypeError(f"{v} is below the allowed minimum {lo}")
        if hi is not None and v > hi:
            raise argparse.ArgumentTypeError(f"{v} exceeds the allowed maximum {hi}")
        return v
    return parse


unit = _ranged(float, 0.0, 1.0)
positive = _ranged(int, 1)
count = _ranged(int, 0)
nonneg = _ranged(float, 0.0)
rate = _ranged(float, 0.0, lo_open=True)


def widths(text: str) -> tuple[int, ...]:
    try:
        w = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {text!r}")
    if not w or min(w) < 1:
        raise argparse.ArgumentTypeError("hidden widths must be positive")
    return w


def scenario(text: str) -> str:
    try:
        data.treatment(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, allow_nan=False))
    return path


def _resolved(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "func"}


def _train_hyper(args, lam: float) -> dict:
    return dict(noise_dim=args.noise_dim, hidden=args.hidden, lr=args.lr, n_critic=args.m, iters=args.iters, lam=lam)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    spec = data.ScenarioSpec(beta=args.beta, kind=args.scenario, n_samples=args.n, n_test=args.n_test,
                             seed=args.seed, bias_quantile=args.bias_quantile)
    train, test = data.make_scenario(spec)
    out = _out(args, f"data-{args.scenario}-b{args.beta}-s{args.seed}")
    meta = data.save_scenario(out, train, test, {"config": _resolved(args)})
    print(json.dumps({"out": str(out), "rows": meta["rows"]}))
    return 0


def cmd_pretrain_mixer(args) -> int:
    train, _ = data.load_scenario(args.data)
    hyper = mixer_hyper(batch=args.batch, **_train_hyper(args, args.lam))
    out = _out(args, "mixer.json")
    pretrain_mixer(train.conditions, train.y, hyper, seed=args.seed, penalize_condition=not args.y_only_penalty,
                   checkpoint=out, log_every=args.log_every)
    # echo the resolved command into the checkpoint metadata
    doc = json.loads(out.read_text())
    doc["metadata"]["config"] = _resolved(args)
    out.write_text(json.dumps(doc, allow_nan=False))
    print(json.dumps({"checkpoint": str(out)}))
    return 0


def default_batch(n_rows: int, requested: int | None) -> int:
    """256 unless the agent has fewer rows, then one pass over its rows."""
    return requested if requested is not None else min(256, n_rows)


def cmd_train_agent(args) -> int:
    train, _ = data.load_scenario(args.data)
    mixer = None
    if args.mode == "baseline":
        if args.mixer:
            log.warning("--mixer is ignored in baseline mode")
    else:
        if not args.mixer:
            raise UsageError(f"--mode {args.mode} needs --mixer")
        mixer = Mixer.load(args.mixer)
    batch = default_batch(len(train.agent1), args.batch)
    hyper = GanHyper(batch=batch, **_train_hyper(args, args.lam))
    setup = MgmSetup(train.agent1, others=[train.x2], outputs=train.y, mixer=mixer, mode=args.mode, alpha=args.alpha,
                     hyper=hyper, lam_mix=args.lam_mix, cadence=tuple(args.cadence), feedback_critic=args.feedback_critic,
                     output_conditions=train.conditions)
    out = _out(args, f"agent-{args.mode}-s{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "agent.json"
    config = {**_resolved(args), "batch": batch}
    _write_json(out / "config.json", config)
    try:
        _, report = train_agent(setup, seed=args.seed, checkpoint=ckpt, log_path=out / "losses.jsonl")
    except TrainingDiverged as exc:
        print(json.dumps({"error": str(exc), "last_good_checkpoint": exc.checkpoint}))
        return EXIT_NUMERIC
    doc = json.loads(ckpt.read_text())
    doc["metadata"]["config"] = config
    ckpt.write_text(json.dumps(doc, allow_nan=False))
    summary = {"checkpoint": str(ckpt), "log": str(out / "losses.jsonl"), "iterations": len(report.records),
               "wall_clock": report.wall_clock, "seed": args.seed, "config": config}
    _write_json(out / "report.json", summary)
    print(json.dumps({"checkpoint": str(ckpt), "wall_clock": report.wall_clock}))
    return 0


def _test_rows(path: str, i0: int) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    rows = data.read_csv(path)
    if header == data.PAIRED_HEADER:
        return rows[:, 2 * i0:2 * i0 + 2]
    return rows


def cmd_evaluate(args) -> int:
    gen, meta = load_agent_generator(args.model)
    test = _test_rows(args.test, int(meta.get("i0", 0)))
    if test.shape[1] != gen.config.output_dim:
        raise UsageError(f"--test rows have {test.shape[1]} columns, the model emits {gen.config.output_dim}")
    noise_dim = gen.config.input_dim

    def sample(n, rng):
        return gen(rng.standard_normal((n, noise_dim))).data

    res = experiments.evaluate_samples(sample, test, runs=args.runs, seed=args.seed, metric=args.metric)
    doc = {**res, "runs": args.runs, "n": len(test), "metric": args.metric, "config": _resolved(args)}
    out = _out(args, "evaluation.json")
    _write_json(out, doc)
    print(json.dumps({"mean": doc["mean"], "std": doc["std"], "out": str(out)}))
    return 0


def cmd_verify(args) -> int:
    metrics = [args.metric] if args.metric else list(theory_metrics())
    rng = seeding.rng(args.seed, "verify")
    instances, failures = [], []
    worst = 0.0
    for k in range(args.instances):
        system = theory.random_system(rng, constant_kernel=args.constant_kernel)
        row = {"instance": k, "checks": []}
        for d in metrics:
            chk = theory.verify_theorem1(system, d=d, y_metric=args.y_metric)
            row["checks"].append({"metric": d, "lhs": chk.lhs, "rhs": chk.rhs, "gap": chk.gap})
            worst = max(worst, chk.gap)
            if not chk.gap < TOLERANCE:
                failures.append({"instance": k, "metric": d, "lhs": chk.lhs, "rhs": chk.rhs, "gap": chk.gap,
                                 "system": system.to_dict()})
        instances.append(row)
    doc = {"instances": args.instances, "tolerance": TOLERANCE, "max_gap": worst, "n_failures": len(failures),
           "passed": not failures, "results": instances, "failures": failures, "config": _resolved(args)}
    out = _out(args, "verify.json")
    _write_json(out, doc)
    print(json.dumps({"instances": args.instances, "max_gap": worst, "n_failures": len(failures), "out": str(out)}))
    return 0 if not failures else EXIT_NUMERIC


def theory_metrics():
    return ("euclidean", "manhattan", "discrete")


TABLE_PREFIX = ["scenario", "method"]


def table_rows(results: list[dict]) -> tuple[list[str], list[list[str]]]:
    """Wide table: one row per (scenario, mode), one ``mean(std)`` cell per ascending beta."""
    betas = sorted({r["config"]["beta"] for r in results})
    header = TABLE_PREFIX + [f"beta={b:g}" for b in betas]
    cells: dict[tuple[str, str], dict[float, str]] = {}
    for r in results:
        c = r["config"]
        cells.setdefault((c["scenario"], c["mode"]), {})[c["beta"]] = f"{r['w1']['mean']:.3f}({r['w1']['std']:.3f})"
    rows = [[s, m] + [row.get(b, "") for b in betas] for (s, m), row in cells.items()]
    return header, rows


def cmd_sweep(args) -> int:
    if args.noise_dim != 2:
        raise UsageError("sweep cells use 2-d generator noise; drop --noise-dim")
    base = experiments.CellConfig(alpha=args.alpha, n_samples=args.n, hidden=args.hidden, iters=args.iters,
                                  n_critic=args.m, lr=args.lr, lam_agent=args.lam, mixer_iters=args.mixer_iters,
                                  eval_runs=args.runs, seed=args.seed, data_seed=args.seed)
    cells = experiments.grid(args.scenarios, args.betas, args.modes, base)
    cells = [replace(c, batch=default_batch(_agent_rows(c), args.batch_override)) for c in cells]
    out = _out(args, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    results = experiments.run_grid(cells, workers=args.workers, cache_dir=out / "cache", out_dir=out / "runs")
    header, rows = table_rows(results)
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    with open(out / "long.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "beta", "mode", "alpha", "mean", "std", "runs"])
        for r in results:
            c = r["config"]
            w.writerow([c["scenario"], c["beta"], c["mode"], c["alpha"], repr(r["w1"]["mean"]), repr(r["w1"]["std"]), c["eval_runs"]])
    _write_json(out / "sweep.json", {"config": _resolved(args), "results": results})
    print(json.dumps({"out": str(out), "cells": len(results)}))
    return 0


def _agent_rows(c: experiments.CellConfig) -> int:
    train, _ = data.make_scenario(c.scenario_spec())
    return len(train.agent1)


# ------------------------------------------------------------------ parser

def _training_flags(p: argparse.ArgumentParser, lam_default: float) -> None:
    p.add_argument("--iters", type=count, default=20_000, help="generator iterations")
    p.add_argument("--m", type=positive, default=5, help="critic updates per generator update")
    p.add_argument("--lambda", dest="lam", type=nonneg, default=lam_default, help="gradient penalty weight")
    p.add_argument("--lr", type=rate, default=1e-4)
    p.add_argument("--hidden", type=widths, default=(512, 512, 512), help="comma-separated hidden widths")
    p.add_argument("--noise-dim", type=positive, default=2)
    p.add_argument("--seed", type=count, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic scenario")
    p.add_argument("--scenario", type=scenario, default="full")
    p.add_argument("--beta", type=unit, default=0.7)
    p.add_argument("--n", type=positive, default=128_000, help="training rows")
    p.add_argument("--n-test", type=positive, default=2_000)
    p.add_argument("--bias-quantile", type=_ranged(float, 0.0, 1.0, lo_open=True), default=0.6)
    p.add_argument("--seed", type=count, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain-mixer", help="train the conditional mixer GAN on paired data")
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=positive, default=256)
    p.add_argument("--y-only-penalty", action="store_true", help="penalize the gradient in y only")
    p.add_argument("--log-every", type=count, default=0)
    p.add_argument("--out", default=None)
    _training_flags(p, 1.0)
    p.set_defaults(func=cmd_pretrain_mixer)

    p = sub.add_parser("train-agent", help="train the agent generator")
    p.add_argument("--mode", choices=MODES, default="baseline")
    p.add_argument("--alpha", type=unit, default=0.5)
    p.add_argument("--mixer", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=positive, default=None, help="default: min(256, agent rows)")
    p.add_argument("--lambda-mix", dest="lam_mix", type=nonneg, default=1.0)
    p.add_argument("--cadence", type=count, nargs=2, default=(1, 1), metavar=("LA", "LF"),
                   help="alternate mode: L_a steps then L_f steps")
    p.add_argument("--feedback-critic", choices=("fresh", "warm"), default="fresh")
    p.add_argument("--out", default=None)
    _training_flags(p, 0.1)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("evaluate", help="W1 of fresh generator samples against a test set")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--runs", type=positive, default=16)
    p.add_argument("--metric", choices=theory_metrics(), default="euclidean")
    p.add_argument("--seed", type=count, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="check the transport identity on random finite systems")
    p.add_argument("--instances", type=count, default=100)
    p.add_argument("--seed", type=count, default=0)
    p.add_argument("--metric", choices=("euclid", "euclidean", "manhattan", "discrete"), default=None,
                   help="ground metric on the agent space (default: all three)")
    p.add_argument("--y-metric", choices=theory_metrics(), default="euclidean")
    p.add_argument("--constant-kernel", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="scenario x beta x mode grid")
    p.add_argument("--scenarios", type=scenario, nargs="+", default=["bias100"])
    p.add_argument("--betas", type=unit, nargs="+", default=list(experiments.BETAS))
    p.add_argument("--modes", choices=MODES, nargs="+", default=list(MODES))
    p.add_argument("--alpha", type=unit, default=0.5)
    p.add_argument("--n", type=positive, default=16_000)
    p.add_argument("--batch", dest="batch_override", type=positive, default=None, help="default: min(256, agent rows)")
    p.add_argument("--mixer-iters", type=count, default=20_000)
    p.add_argument("--runs", type=positive, default=16)
    p.add_argument("--workers", type=positive, default=1)
    p.add_argument("--out", default=None)
    _training_flags(p, 0.1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        parser.error(str(exc))  # exits 2
    except (NonFiniteError, TrainingDiverged) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
