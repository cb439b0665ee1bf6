"""Command-line front end: ``wlancb {generate,analyze,simulate,sweep}``.

Tables go to ``--out`` (stdout by default) as CSV or JSON lines with a fixed
column order per subcommand; scenario-level summaries go to ``--summary`` or
stderr. Exit status is 0 only when every requested computation succeeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import ctmn, sim, sweep
from .channels import Policy
from .errors import NoConvergence, WlancbError
from .scenario import DeploymentSpec, Scenario, generate, load_config, save_config

ANALYZE_COLUMNS = ("scenario_id", "wlan_id", "policy", "primary", "alloc_left", "alloc_right", "load_bps",
                   "rho", "throughput_bps", "saturated", "states", "iterations", "converged")
SIMULATE_COLUMNS = sweep.ROW_COLUMNS
EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _policy_list(text: str) -> list[Policy]:
    try:
        return [Policy.parse(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _scalar(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def write_table(rows, columns, out, fmt: str) -> None:
    """Write dict rows in a fixed column order as csv or jsonl."""
    handle = open(out, "w", newline="") if out and out != "-" else sys.stdout
    try:
        if fmt == "csv":
            writer = csv.writer(handle)
            writer.writerow(columns)
            for r in rows:
                writer.writerow(["" if _scalar(r.get(c)) is None else _scalar(r.get(c)) for c in columns])
        else:
            for r in rows:
                handle.write(json.dumps({c: _scalar(r.get(c)) for c in columns}) + "\n")
    finally:
        if handle is not sys.stdout:
            handle.close()


def _write_summary(summary: dict, path) -> None:
    text = json.dumps(summary, indent=2, sort_keys=True, default=_scalar)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text, file=sys.stderr)


def _load_scenario(args) -> Scenario:
    cfg = load_config(args.config)
    if isinstance(cfg, DeploymentSpec):
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        cfg = generate(cfg)
    if getattr(args, "policy", None):
        cfg = cfg.with_policies(args.policy)
    if getattr(args, "load", None) is not None:
        cfg = cfg.with_loads(args.load)
    return cfg


def _scenario_id(sc: Scenario, args) -> str:
    return sc.name or Path(args.config).stem


def cmd_generate(args) -> int:
    spec = load_config(args.config)
    if not isinstance(spec, DeploymentSpec):
        raise UsageError("generate needs a deployment config")
    if args.count < 1:
        raise UsageError("count must be >= 1")
    base_seed = spec.seed if args.seed is None else args.seed
    out = Path(args.out) if args.out else None
    for k in range(args.count):
        seed = base_seed if args.count == 1 else sweep.derive_seed(base_seed, k)
        sc = generate(spec.replace(seed=seed))
        if out is None:
            import yaml
            from .scenario import scenario_to_dict
            sys.stdout.write(yaml.safe_dump(scenario_to_dict(sc), sort_keys=False))
            if k + 1 < args.count:
                sys.stdout.write("---\n")
        elif args.count == 1 and out.suffix in (".yaml", ".yml"):
            save_config(sc, out)
        else:
            out.mkdir(parents=True, exist_ok=True)
            save_config(sc, out / f"scenario_{k:03d}.yaml")
    return 0


def cmd_analyze(args) -> int:
    sc = _load_scenario(args)
    status = 0
    try:
        res = ctmn.fixed_point_loads(sc, max_iter=args.max_iter)
    except NoConvergence as exc:
        res, status = exc.result, EXIT_FAILURE
    if not res.converged:
        print(f"warning: fixed point not converged after {res.iterations} iterations", file=sys.stderr)
        status = EXIT_FAILURE
    if args.dump_chain:
        res.ctmn.dump(args.dump_chain)
    sid = _scenario_id(sc, args)
    rows = []
    for i, w in enumerate(sc.wlans):
        rows.append({
            "scenario_id": sid, "wlan_id": w.id, "policy": str(w.policy), "primary": w.channels.primary,
            "alloc_left": w.channels.allocated.left, "alloc_right": w.channels.allocated.right,
            "load_bps": w.load, "rho": float(res.rho[i]), "throughput_bps": float(res.throughput[i]),
            "saturated": bool(res.saturated[i]), "states": len(res.ctmn.states),
            "iterations": res.iterations, "converged": res.converged,
        })
    write_table(rows, ANALYZE_COLUMNS, args.out, args.format)
    return status


def cmd_simulate(args) -> int:
    if not args.duration > 0:
        raise UsageError("duration must be > 0")
    if args.repetitions < 1:
        raise UsageError("repetitions must be >= 1")
    sc = _load_scenario(args)
    seed = 0 if args.seed is None else args.seed
    sid = _scenario_id(sc, args)
    rows, summary = [], {"scenario_id": sid, "duration_s": args.duration, "runs": []}
    for rep in range(args.repetitions):
        run_seed = seed if args.repetitions == 1 else sweep.derive_seed(seed, rep)
        result = sim.run(sc, args.duration, seed=run_seed, trace=bool(args.trace))
        run_id = sid if args.repetitions == 1 else f"{sid}-r{rep}"
        rows.extend(sweep.wlan_rows(sc, result.metrics, run_id))
        summary["runs"].append({
            "scenario_id": run_id, "seed": run_seed,
            "starvation": {f"{e:g}": sim.starvation_ratio(result.metrics, eps=e) for e in args.epsilon_list},
            "events": dict(result.events),
        })
        if args.trace:
            path = Path(args.trace) if args.repetitions == 1 else Path(f"{args.trace}.r{rep}")
            path.write_text("\n".join(result.trace) + "\n")
    write_table(rows, SIMULATE_COLUMNS, args.out, args.format)
    _write_summary(summary, args.summary)
    return 0


def cmd_sweep(args) -> int:
    if args.repetitions < 1:
        raise UsageError("repetitions must be >= 1")
    if not args.duration > 0:
        raise UsageError("duration must be > 0")
    spec = load_config(args.config)
    if not isinstance(spec, DeploymentSpec):
        raise UsageError("sweep needs a deployment config")
    policies = args.policies or [spec.policy_law if spec.policy_law != "uniform" else "AM"]
    loads = args.loads or ([spec.load_law] if isinstance(spec.load_law, (int, float)) else None)
    if not loads:
        raise UsageError("sweep needs --loads when the deployment load is a range")
    try:
        axes = sweep.SweepAxes(args.deployments, tuple(Policy.parse(p) for p in policies), tuple(loads),
                               args.repetitions, args.duration, args.engine)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = 0 if args.seed is None else args.seed
    result = sweep.run_sweep(spec, axes, seed, workers=args.workers, epsilons=args.epsilon_list,
                             delay_margin=args.delay_margin, keep_raw=bool(args.raw_delays))
    write_table(result.rows, sweep.SWEEP_COLUMNS, args.out, args.format)
    _write_summary(result.summary, args.summary)
    if args.raw_delays:
        raw = Path(args.raw_delays)
        raw.mkdir(parents=True, exist_ok=True)
        for c in result.cells:
            if c.raw_delays:
                d, pi, li, rep = c.cell
                np.savez_compressed(raw / f"d{d}-p{pi}-l{li}-r{rep}.npz", **c.raw_delays)
    for c in result.failed:
        print(f"cell {c.cell} failed: {c.error.splitlines()[0]}", file=sys.stderr)
    return EXIT_FAILURE if result.failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wlancb", description="Dynamic channel bonding analysis for WLANs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="scenario or deployment YAML")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output path (default stdout)")

    def table(p):
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    def overrides(p):
        p.add_argument("--policy", type=Policy.parse, default=None, help="override every WLAN's policy")
        p.add_argument("--load", type=float, default=None, help="override every WLAN's load (bits/s)")

    p = sub.add_parser("generate", help="draw random deployments into scenario files")
    common(p)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("analyze", help="solve the continuous-time Markov model")
    common(p)
    table(p)
    overrides(p)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--dump-chain", default=None, help="write the chain's transitions to this file")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="run the event-driven simulator")
    common(p)
    table(p)
    overrides(p)
    p.add_argument("--duration", type=float, required=True, help="simulated seconds")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--epsilon-list", type=_float_list, default=[0.5, 0.75, 0.9])
    p.add_argument("--summary", default=None, help="JSON summary path (default stderr)")
    p.add_argument("--trace", default=None, help="write an event trace to this file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="deployments x policies x loads grid")
    common(p)
    table(p)
    p.add_argument("--deployments", type=int, default=1)
    p.add_argument("--policies", type=_policy_list, default=None)
    p.add_argument("--loads", type=_float_list, default=None, help="bits/s, comma separated")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--engine", choices=("sim", "ctmn"), default="sim")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--epsilon-list", type=_float_list, default=[0.5, 0.75, 0.9])
    p.add_argument("--delay-margin", type=float, default=1e-3, help="seconds")
    p.add_argument("--summary", default=None, help="JSON summary path (default stderr)")
    p.add_argument("--raw-delays", default=None, help="directory for per-cell raw packet delays")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (WlancbError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
