"""``satrl`` command line: train, eval, suite, loop, inspect and serve.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O, checkpoint-format or responder error.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time

from . import __version__
from .config import ConfigError, load_config, to_ini, with_task
from .dynamics import FailureMode, NumericalFailure
from .env import Align, TaskSpec, UsageError, suite_tasks
from .evaluation import ConfigError as EvalConfigError
from .evaluation import (
    aggregate_envelope, convergence_time, export_results, run_eval_episodes, write_trace_csv,
)
from .harness import (
    ExperimentPlan, InProcessTransport, PolicyResponder, ProtocolError, ResponderError,
    SocketTransport, make_latency, run_experiment, serve_policy,
)
from .nn import FORMAT_VERSION, FormatError, checkpoint_load, checkpoint_save
from .ppo import EpochStats, multi_seed_select

log = logging.getLogger("satrl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MANIFEST_SCHEMA = "satrl-manifest/1"


def task_slug(task):
    return task.key.replace("/", "-")


def parse_task(text):
    text = text.strip().lower()
    if text in ("nominal", "full"):
        return TaskSpec()
    failed, _, aligned = text.partition("/")
    if not aligned:
        raise ConfigError(f"task must be 'nominal' or '<failed>/<aligned>', got {text!r}")
    try:
        return TaskSpec(FailureMode.parse(failed), Align.parse(aligned))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- artifacts ---------------------------------------------------------------

def write_stats_csv(path, per_seed):
    """One row per (seed, epoch); floats in repr form so re-runs compare byte for byte."""
    fields = ("seed",) + EpochStats.CSV_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for seed in sorted(per_seed, key=int):
            for row in per_seed[seed]:
                w.writerow([seed] + [repr(row[k]) if isinstance(row[k], float) else row[k]
                                     for k in EpochStats.CSV_FIELDS])


def write_manifest(path, command, cfg, extra=None):
    doc = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "version": __version__,
        "config_hash": cfg.hash(),
        "seeds": list(cfg.seeds),
        "workers": cfg.workers,
        "config_ini": to_ini(cfg),
    }
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc


def read_manifest(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from None
    if doc.get("schema") != MANIFEST_SCHEMA or "config_ini" not in doc:
        raise ConfigError(f"{path} is not a satrl manifest")
    return doc


def resolve_config(args):
    overrides = list(getattr(args, "set", None) or ())
    if getattr(args, "manifest", None):
        doc = read_manifest(args.manifest)
        cfg = load_config(text=doc["config_ini"], overrides=overrides)
    else:
        cfg = load_config(args.config, overrides, paper_scale=args.paper_scale)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = tuple(range(args.seed, args.seed + len(cfg.seeds)))
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "task", None):
        cfg = with_task(cfg, parse_task(args.task))
    return cfg


def run_dir(args, cfg, command, task=None):
    if getattr(args, "out", None):
        path = args.out
    else:
        name = f"{command}-{task_slug(task or cfg.task)}-{cfg.hash()}"
        path = os.path.join(cfg.out, name)
    os.makedirs(path, exist_ok=True)
    return path


# -- subcommands ---------------------------------------------------------------

def train_task(cfg, out):
    """Multi-seed training for ``cfg.task`` into ``out``; returns the summary."""
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    meta = {"config_hash": cfg.hash(), "version": __version__}
    best, summary = multi_seed_select(cfg.task, cfg.hp, cfg.seeds, cfg.satellite, cfg.episode,
                                      cfg.reward, ckpt_dir, meta, cfg.workers)
    checkpoint_save(best.best_net, os.path.join(out, "best.ckpt"), meta=best.best_net.meta)
    write_stats_csv(os.path.join(out, "stats.csv"), summary.pop("per_seed_stats"))
    with open(os.path.join(out, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def cmd_train(args):
    cfg = resolve_config(args)
    out = run_dir(args, cfg, "train")
    write_manifest(os.path.join(out, "manifest.json"), "train", cfg)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(to_ini(cfg))
    t0 = time.perf_counter()
    summary = train_task(cfg, out)
    print(f"task {summary['task']}: best seed {summary['best_seed']} epoch "
          f"{summary['best_epoch']} reward {summary['best_reward']:.2f} "
          f"({time.perf_counter() - t0:.1f}s)")
    if summary["failed_seeds"]:
        print(f"failed seeds: {summary['failed_seeds']}", file=sys.stderr)
    print(out)
    return EXIT_OK


def evaluate(net, cfg, task, out, args):
    ev = cfg.eval
    n = args.episodes or ev.episodes
    deterministic = ev.deterministic if args.deterministic is None else args.deterministic
    steps = ev.steps
    traces = run_eval_episodes(net, task, n, (ev.start_min_deg, ev.start_max_deg), steps,
                               deterministic, ev.delays, ev.seed, cfg.satellite, cfg.workers,
                               cfg.episode.control_dt)
    stats = aggregate_envelope(traces, cfg.episode.control_dt)
    accuracy = ev.accuracy or task.threshold
    report = convergence_time(traces, accuracy, task.key)
    export_results(stats, [report], traces[:args.traces], out, task.key)
    return report


def cmd_eval(args):
    cfg = resolve_config(args)
    net = checkpoint_load(args.checkpoint)
    task = cfg.task
    if not args.task and net.meta.get("task"):
        task = parse_task(net.meta["task"])
        cfg = with_task(cfg, task)
    out = run_dir(args, cfg, "eval", task)
    write_manifest(os.path.join(out, "manifest.json"), "eval", cfg,
                   {"checkpoint": os.path.abspath(args.checkpoint),
                    "param_hash": net.param_hash()})
    report = evaluate(net, cfg, task, out, args)
    _print_report(report)
    print(out)
    return EXIT_OK


def _seconds(v):
    return "n/a" if v != v else f"{v:.1f}s"


def _print_report(r):
    print(f"{r.task}: settled {r.converged_fraction:.1%} mean {_seconds(r.mean_convergence_time)}, "
          f"first crossing {r.crossed_fraction:.1%} mean {_seconds(r.mean_first_crossing_time)} "
          f"(accuracy {r.accuracy} rad, {r.n_episodes} episodes)")


def cmd_suite(args):
    cfg = resolve_config(args)
    tasks = suite_tasks()
    if args.list:
        for t in tasks:
            print(f"{t.key}\tthreshold={t.threshold}")
        return EXIT_OK
    root = run_dir(args, cfg, "suite", TaskSpec())
    write_manifest(os.path.join(root, "manifest.json"), "suite", cfg)
    reports = []
    for task in tasks:
        tcfg = with_task(cfg, task)
        out = os.path.join(root, task_slug(task))
        os.makedirs(out, exist_ok=True)
        train_task(tcfg, out)
        net = checkpoint_load(os.path.join(out, "best.ckpt"))
        report = evaluate(net, tcfg, task, out, args)
        _print_report(report)
        reports.append(report.to_dict())
    with open(os.path.join(root, "suite_summary.json"), "w") as fh:
        json.dump({"tasks": {r["task"]: r for r in reports}}, fh, indent=2, sort_keys=True)
    print(root)
    return EXIT_OK


def _latency(args):
    values = None
    if args.latency == "replay":
        if not args.latency_file:
            raise ConfigError("--latency replay needs --latency-file")
        with open(args.latency_file) as fh:
            values = [float(v) for v in fh.read().replace(",", " ").split()]
    return make_latency(args.latency, seed=args.seed or 0, values=values)


def cmd_loop(args):
    try:
        plan = ExperimentPlan.from_json(args.plan)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid plan {args.plan}: {exc}") from None
    latency = _latency(args)
    if args.connect:
        host, _, port = args.connect.rpartition(":")
        transport = SocketTransport.connect(host or "127.0.0.1", int(port), args.timeout)
    else:
        if not args.checkpoint:
            raise ConfigError("loop needs --checkpoint or --connect")
        transport = InProcessTransport(PolicyResponder(checkpoint_load(args.checkpoint)))
    try:
        result = run_experiment(plan, transport, latency)
    finally:
        transport.close()
    trace = result.trace
    print(f"verdict {result.verdict.value} after {trace.time[-1]:.1f}s, "
          f"final error {trace.theta[-1]:.4g} rad")
    if result.diagnostic:
        print(result.diagnostic, file=sys.stderr)
    out = args.out or os.path.join(os.environ.get("SATRL_OUT", "runs"), "loop")
    path = out if out.endswith(".csv") else os.path.join(out, "trace.csv")
    write_trace_csv(trace, path)
    print(path)
    return EXIT_OK


def cmd_inspect(args):
    net = checkpoint_load(args.checkpoint)
    print(f"file: {args.checkpoint}")
    print(f"format version: {FORMAT_VERSION}")
    print(f"obs_dim={net.obs_dim} act_dim={net.act_dim} hidden={list(net.hidden)}")
    for name, shape in net.layout:
        print(f"  {name:16s} {shape}")
    print(f"parameters: {net.n_params}")
    print(f"param hash: {net.param_hash()}")
    print(f"config hash: {net.meta.get('config_hash', '-')}")
    for k in ("task", "seed", "epoch", "version"):
        if k in net.meta:
            print(f"{k}: {net.meta[k]}")
    return EXIT_OK


def cmd_serve(args):
    srv = serve_policy(checkpoint_load(args.checkpoint), args.host, args.port)
    print(f"serving on {srv.address[0]}:{srv.address[1]}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        srv.stop()
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _config_flags(p, seeds=True):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--manifest", help="re-run from a manifest.json written by an earlier run")
    p.add_argument("--paper-scale", action="store_true",
                   help="40 epochs, 10 seeds, 10000 eval episodes (many hours)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", help="output directory (default: $SATRL_OUT or ./runs)")
    p.add_argument("--task", help="'nominal' or '<failed>/<aligned>', e.g. x/y")
    if seeds:
        p.add_argument("--seed", type=int, help="first training seed")


def _eval_flags(p):
    p.add_argument("--episodes", type=int, help="evaluation episodes")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    g.add_argument("--stochastic", dest="deterministic", action="store_false")
    p.add_argument("--traces", type=int, default=10, help="per-episode trace CSVs to keep")


def build_parser():
    parser = argparse.ArgumentParser(prog="satrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train controllers over several seeds")
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte-Carlo evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _config_flags(p, seeds=False)
    _eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", help="train and evaluate all ten task configurations")
    _config_flags(p)
    _eval_flags(p)
    p.add_argument("--list", action="store_true", help="only list the tasks")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("loop", help="closed-loop experiment against a policy responder")
    p.add_argument("--plan", required=True, help="experiment plan JSON")
    p.add_argument("--checkpoint")
    p.add_argument("--connect", metavar="HOST:PORT", help="use a remote responder")
    p.add_argument("--latency", choices=("fixed", "uniform", "replay"), default="fixed")
    p.add_argument("--latency-file", help="cycle times for --latency replay")
    p.add_argument("--seed", type=int, help="seed for --latency uniform")
    p.add_argument("--timeout", type=float, default=5.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("serve", help="serve a checkpoint over TCP for loop --connect")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5555)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, EvalConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ProtocolError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ResponderError as exc:
        print(f"responder failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
