"""Command-line entry point: ``emorl <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .algos import ALGOS, AlgoConfig, check_loss_gradients
from .chart import emit_loss_chart
from .evaluate import (DEFAULT_EPISODE_LEN, DEFAULT_GAMMA, DEFAULT_RMAX, build_report,
                       render_markdown, upper_bound, write_report_csv)
from .mdp import ALL_ACTIONS, ALL_STATES, N_ACTIONS, N_STATES
from .network import NetworkSpec
from .seeding import child_rng
from .sim import SimConfig, exact_q_oracle, generate_dataset, generate_steps
from .train import (RunConfig, default_parallelism, grid_search, load_results, read_epochs_csv,
                    run_training, write_run)

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


class _Formatter(argparse.HelpFormatter):
    """Shows every non-None default, including for flags without help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default not in (None, argparse.SUPPRESS) and "%(default)" not in text:
            text += " (default: %(default)s)"
        return text


def _algo_name(value: str) -> str:
    if value not in ALGOS:
        raise argparse.ArgumentTypeError(f"invalid algorithm {value!r} (choose from {', '.join(ALGOS)})")
    return value


def _algo_list(value: str) -> list[str]:
    names = [v.strip() for v in value.split(",") if v.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty algorithm list")
    return [_algo_name(n) for n in names]


def _input_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _load_sim_config(path: str | None) -> SimConfig:
    return SimConfig() if path is None else SimConfig.load(_input_file(path))


def _load_data(path: str) -> ds.TransitionDataset:
    return ds.load(_input_file(path))


# -- subcommands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_sim_config(args.config)
    data = generate_steps(cfg, args.steps, args.seed) if args.steps else generate_dataset(cfg, args.seed)
    out = Path(args.out)
    ds.save(data, out)
    stats = ds.compute_stats(data, args.window)
    ds.write_stats(stats, args.stats_dir or out.with_name(out.stem + "_stats"))
    print(f"episodes: {stats.episode_count}  steps: {stats.total_steps}  "
          f"exploration rate: {stats.exploration_rate:.1%}")
    return 0


def cmd_stats(args) -> int:
    data = _load_data(args.data)
    stats = ds.compute_stats(data, args.window)
    path = Path(args.data)
    ds.write_stats(stats, args.out or path.with_name(path.stem + "_stats"))
    s = stats.summary()
    print(f"episodes: {s['episodes']}  steps: {s['total_steps']}  "
          f"length mean/sd: {s['episode_length_mean']:.1f}/{s['episode_length_sd']:.1f}")
    print(f"visited pairs: {s['visited_pairs']}/{N_STATES * N_ACTIONS}  max visits: {s['max_visits']}  "
          f"exploration rate: {stats.exploration_rate:.1%}")
    return 0


_TRAIN_FLAGS = ("lr", "batch_size", "hidden_layers", "hidden_units", "activation", "dropout",
                "total_steps", "steps_per_epoch", "target_update_interval", "seed")


def _run_config(args) -> RunConfig:
    base = {}
    if args.config:
        try:
            base = RunConfig.from_dict(json.loads(_input_file(args.config).read_text())).to_dict()
        except (ValueError, TypeError) as exc:
            raise ValueError(f"invalid run config {args.config}: {exc}") from None
    algo = dict(base.get("algo", {}), kind=args.algo)
    spec = dict(base.get("spec", {}))
    spec.pop("output_heads", None)
    for key, spec_key in (("hidden_layers", "hidden_layers"), ("hidden_units", "hidden_units"),
                          ("activation", "activation"), ("dropout", "dropout_rate")):
        if getattr(args, key) is not None:
            spec[spec_key] = getattr(args, key)
    doc = {k: v for k, v in base.items() if k not in ("algo", "spec")}
    for key in ("lr", "batch_size", "total_steps", "steps_per_epoch", "target_update_interval", "seed"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    doc["algo"] = algo
    doc["spec"] = spec
    return RunConfig.from_dict(doc)


def cmd_train(args) -> int:
    data = _load_data(args.data)
    cfg = _run_config(args)
    result = run_training(cfg, data)
    out = Path(args.out)
    write_run(result, out)
    emit_loss_chart([e.epoch for e in result.epochs], [e.loss for e in result.epochs],
                    out / "loss.svg", title=f"{cfg.algo.kind.upper()} average loss")
    if result.diverged:
        print(f"{cfg.algo.kind}: diverged (no finite epoch loss)")
    else:
        print(f"{cfg.algo.kind}: selected epoch {result.selected_epoch}  "
              f"V(s0) = {result.selected_value:.4f}  final loss {result.epochs[-1].loss:.4g}")
    return 0


def cmd_grid(args) -> int:
    data = _load_data(args.data)
    results = grid_search(args.algos, data, args.seed, parallel=args.parallel, out_dir=args.out,
                          total_steps=args.total_steps, steps_per_epoch=args.steps_per_epoch,
                          target_update_interval=args.target_update_interval)
    diverged = sum(r.diverged for r in results)
    print(f"{len(results)} runs written to {args.out} ({diverged} diverged)")
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.exists():
        raise UsageError(f"runs directory not found: {args.runs}")
    results = load_results(runs)
    bound = upper_bound(args.episode_len, args.gamma, args.rmax)
    report = build_report(results, bound)
    md = render_markdown(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(report, out / "report.csv")
        (out / "report.md").write_text(md, encoding="utf-8")
    print(md, end="")
    return 0


def cmd_oracle(args) -> int:
    cfg = _load_sim_config(args.config)
    q = exact_q_oracle(cfg, args.gamma, args.tol)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["state"] + [a.label for a in ALL_ACTIONS]) + "\n")
        for s, row in zip(ALL_STATES, q.values):
            fh.write(",".join([s.label] + [repr(float(v)) for v in row]) + "\n")
    start = cfg.start_state.index
    print(f"value iteration converged in {len(q.residuals)} sweeps; "
          f"V*({cfg.start_state.label}) = {q.values[start].max():.4f}")
    return 0


def parse_spec(text: str) -> NetworkSpec:
    """``LAYERSxUNITS:ACTIVATION``, e.g. ``3x32:tanh``; batch-norm on, dropout off."""
    try:
        shape, act = text.split(":")
        layers, units = (int(v) for v in shape.lower().split("x"))
        return NetworkSpec(hidden_layers=layers, hidden_units=units, activation=act,
                           dropout_rate=0.0, batch_norm=True)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid network spec {text!r} ({exc}); expected e.g. 3x32:tanh")


def cmd_gradcheck(args) -> int:
    data = generate_dataset(SimConfig(), args.seed)
    idx = ds.sample_indices(data, args.batch_size, child_rng(args.seed, "batch"))
    batch = data.columns.take(idx)
    worst = 0.0
    for algo in args.algo or list(ALGOS):
        err = check_loss_gradients(AlgoConfig(kind=algo), args.spec, batch,
                                   child_rng(args.seed, "init"), args.eps, args.corrupt)
        worst = max(worst, err)
        flag = "ok" if err < GRADCHECK_TOL else "FAIL"
        print(f"{algo:5s} max relative error {err:.3e}  {flag}")
    return 0 if worst < GRADCHECK_TOL else 2


def cmd_chart(args) -> int:
    epochs = read_epochs_csv(_input_file(args.epochs))
    emit_loss_chart([e.epoch for e in epochs], [e.loss for e in epochs], args.out, args.title)
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    p = _Parser(prog="emorl", description="Offline RL benchmark for emotion-adaptive robot control.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a behaviour-policy dataset", formatter_class=fmt)
    g.add_argument("--config", help="simulator config JSON (defaults built in)")
    g.add_argument("--seed", type=int, default=42, help="dataset RNG seed")
    g.add_argument("--out", required=True, help="output JSON-lines file")
    g.add_argument("--steps", type=int, default=None,
                   help="generate episodes until this many transitions instead of episode_count")
    g.add_argument("--stats-dir", default=None, help="stats sidecar directory (default: <out stem>_stats)")
    g.add_argument("--window", type=int, default=1, help="reward trend smoothing window")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("stats", help="dataset diagnostics", formatter_class=fmt)
    s.add_argument("--data", required=True, help="JSON-lines dataset")
    s.add_argument("--out", default=None, help="output directory (default: <data stem>_stats)")
    s.add_argument("--window", type=int, default=1, help="reward trend smoothing window")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train one model", formatter_class=fmt)
    t.add_argument("--algo", required=True, type=_algo_name, help=f"one of {', '.join(ALGOS)}")
    t.add_argument("--data", required=True, help="JSON-lines dataset")
    t.add_argument("--config", default=None, help="run config JSON; explicit flags override it")
    t.add_argument("--out", required=True, help="output run directory")
    defaults = RunConfig()
    t.add_argument("--lr", type=float, help=f"learning rate (default: {defaults.lr})")
    t.add_argument("--batch-size", type=int, help=f"minibatch size (default: {defaults.batch_size})")
    t.add_argument("--hidden-layers", type=int, help=f"hidden layers (default: {defaults.spec.hidden_layers})")
    t.add_argument("--hidden-units", type=int, help=f"units per hidden layer (default: {defaults.spec.hidden_units})")
    t.add_argument("--activation", choices=("relu", "tanh"), help=f"hidden activation (default: {defaults.spec.activation})")
    t.add_argument("--dropout", type=float, help=f"dropout rate (default: {defaults.spec.dropout_rate})")
    t.add_argument("--total-steps", type=int, help=f"gradient steps (default: {defaults.total_steps})")
    t.add_argument("--steps-per-epoch", type=int, help=f"steps per logged epoch (default: {defaults.steps_per_epoch})")
    t.add_argument("--target-update-interval", type=int,
                   help=f"steps between target syncs (default: {defaults.target_update_interval})")
    t.add_argument("--seed", type=int, help=f"training RNG seed (default: {defaults.seed})")
    t.set_defaults(func=cmd_train)

    gr = sub.add_parser("grid", help="full hyperparameter grid", formatter_class=fmt)
    gr.add_argument("--algos", type=_algo_list, default=",".join(ALGOS), help="comma-separated list")
    gr.add_argument("--data", required=True, help="JSON-lines dataset")
    gr.add_argument("--out", required=True, help="output directory for run directories and manifest.csv")
    gr.add_argument("--parallel", type=int, default=default_parallelism(), help="concurrent runs")
    gr.add_argument("--seed", type=int, default=0, help="root seed; per-run seeds derive from it")
    gr.add_argument("--total-steps", type=int, default=10_000, help="gradient steps per run")
    gr.add_argument("--steps-per-epoch", type=int, default=100, help="steps per logged epoch")
    gr.add_argument("--target-update-interval", type=int, default=2_500, help="steps between target syncs")
    gr.set_defaults(func=cmd_grid)

    r = sub.add_parser("report", help="best run per algorithm under the overestimation bound",
                       formatter_class=fmt)
    r.add_argument("--runs", required=True, help="grid or run directory")
    r.add_argument("--episode-len", type=int, default=DEFAULT_EPISODE_LEN, help="desired episode length")
    r.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="discount factor")
    r.add_argument("--rmax", type=float, default=DEFAULT_RMAX, help="maximum per-step reward")
    r.add_argument("--out", default=None, help="directory for report.csv and report.md")
    r.set_defaults(func=cmd_report)

    o = sub.add_parser("oracle", help="exact Q* of the simulator by value iteration", formatter_class=fmt)
    o.add_argument("--config", default=None, help="simulator config JSON (defaults built in)")
    o.add_argument("--gamma", type=float, default=0.99, help="discount factor")
    o.add_argument("--tol", type=float, default=1e-10, help="max-norm convergence tolerance")
    o.add_argument("--out", default="qstar.csv", help="output CSV (18 states x 9 actions)")
    o.set_defaults(func=cmd_oracle)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient",
                        formatter_class=fmt)
    gc.add_argument("--spec", type=parse_spec, default="3x32:tanh",
                    help="LAYERSxUNITS:ACTIVATION")
    gc.add_argument("--algo", type=_algo_name, action="append",
                    help="algorithm to check (repeatable; default: all)")
    gc.add_argument("--seed", type=int, default=0, help="seed for the batch and the model")
    gc.add_argument("--batch-size", type=int, default=16, help="transitions in the checked batch")
    gc.add_argument("--eps", type=float, default=1e-4, help="central-difference step")
    gc.add_argument("--corrupt", type=float, default=0.0,
                    help="scale the analytic gradient by 1+CORRUPT (checker self-test)")
    gc.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("chart", help="SVG loss chart from epochs.csv", formatter_class=fmt)
    c.add_argument("--epochs", required=True, help="epochs.csv from a run directory")
    c.add_argument("--out", default="loss.svg", help="output SVG")
    c.add_argument("--title", default="Average loss", help="chart title")
    c.set_defaults(func=cmd_chart)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
