"""Grid sweeps over random deployments, policies and loads.

Every cell is an independent simulation whose seeds derive from the master
seed and the cell's grid indices, so results do not depend on how many
worker processes execute the grid.
"""
from __future__ import annotations

import itertools
import math
import multiprocessing
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import ctmn, sim
from .channels import Policy
from .errors import MissingMetrics
from .scenario import DeploymentSpec, Scenario, generate

ROW_COLUMNS = ("scenario_id", "wlan_id", "policy", "primary", "alloc_left", "alloc_right", "load_bps",
               "throughput_bps", "access_delay_s", "packet_delay_s", "drop_ratio", "avg_agg", "saturated")
SWEEP_COLUMNS = ("deployment", "policy_index", "load_index", "repetition", "engine") + ROW_COLUMNS + ("error",)

CDF_QUANTILES = (1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 99)
# log-spaced delay bins from 1 us to 1000 s
DELAY_BINS = np.logspace(-6, 3, 1801)


def derive_seed(master: int, *indices: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class SweepAxes:
    deployments: int
    policies: tuple
    loads: tuple  # bits/s, homogeneous across WLANs
    repetitions: int = 1
    duration: float = 10.0
    engine: str = "sim"

    def __post_init__(self):
        if self.deployments < 1:
            raise ValueError("need at least one deployment")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.policies or not self.loads:
            raise ValueError("policy and load grids must be nonempty")
        if self.engine not in ("sim", "ctmn"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.engine == "sim" and not self.duration > 0:
            raise ValueError("duration must be > 0")
        if any(l < 0 for l in self.loads):
            raise ValueError("loads must be >= 0")

    def cells(self):
        return list(itertools.product(range(self.deployments), range(len(self.policies)),
                                      range(len(self.loads)), range(self.repetitions)))


@dataclass
class CellResult:
    cell: tuple
    rows: list
    delay_hist: np.ndarray | None = None
    error: str | None = None
    raw_delays: dict | None = None


@dataclass
class SweepResult:
    axes: SweepAxes
    master_seed: int
    cells: list
    summary: dict = field(default_factory=dict)

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.error is not None]

    @property
    def rows(self) -> list:
        return [r for c in self.cells for r in c.rows]


def deployment_scenario(spec: DeploymentSpec, master_seed: int, d: int) -> Scenario:
    return generate(spec.replace(seed=derive_seed(master_seed, d)))


def cell_scenario(spec, axes, master_seed, cell) -> Scenario:
    d, pi, li, _ = cell
    base = deployment_scenario(spec, master_seed, d)
    sc = base.with_policies(Policy.parse(axes.policies[pi])).with_loads(float(axes.loads[li]))
    return sc


def wlan_rows(scenario: Scenario, metrics, scenario_id: str) -> list[dict]:
    rows = []
    for cfg, m in zip(scenario.wlans, metrics):
        rows.append({
            "scenario_id": scenario_id, "wlan_id": cfg.id, "policy": str(cfg.policy),
            "primary": cfg.channels.primary, "alloc_left": cfg.channels.allocated.left,
            "alloc_right": cfg.channels.allocated.right, "load_bps": cfg.load,
            "throughput_bps": m.throughput, "access_delay_s": m.access_delay,
            "packet_delay_s": m.packet_delay, "drop_ratio": m.drop_ratio,
            "avg_agg": m.avg_aggregation, "saturated": m.saturated,
        })
    return rows


def _run_cell(args):
    spec, axes, master_seed, cell, keep_raw = args
    d, pi, li, rep = cell
    tag = {"deployment": d, "policy_index": pi, "load_index": li, "repetition": rep, "engine": axes.engine}
    scenario_id = f"d{d}-p{pi}-l{li}-r{rep}"
    try:
        sc = cell_scenario(spec, axes, master_seed, cell)
        if axes.engine == "ctmn":
            res = ctmn.fixed_point_loads(sc)
            metrics = []
            for cfg, g in zip(sc.wlans, res.throughput):
                m = sim.WlanMetrics(cfg.id, cfg.load, 0.0, throughput=float(g))
                metrics.append(m)
            hist, raw = None, None
        else:
            result = sim.run(sc, axes.duration, seed=derive_seed(master_seed, d, rep), keep_delays=True)
            metrics = result.metrics
            samples = [m.delays for m in metrics if m.delays is not None and len(m.delays)]
            pooled = np.concatenate(samples) if samples else np.empty(0)
            hist = np.histogram(np.clip(pooled, DELAY_BINS[0], DELAY_BINS[-1]), bins=DELAY_BINS)[0]
            raw = {m.wlan_id: m.delays for m in metrics} if keep_raw else None
            for m in metrics:
                m.delays = None
        rows = [dict(tag, **r, error="") for r in wlan_rows(sc, metrics, scenario_id)]
        return CellResult(cell, rows, hist, None, raw)
    except Exception as exc:  # recorded per cell; the sweep keeps going
        msg = f"{type(exc).__name__}: {exc}"
        row = dict(tag, **{c: "" for c in ROW_COLUMNS}, error=msg)
        row["scenario_id"] = scenario_id
        return CellResult(cell, [row], None, msg + "\n" + traceback.format_exc(limit=3))


def run_sweep(spec: DeploymentSpec, axes: SweepAxes, master_seed: int = 0, workers: int = 1,
              epsilons=(0.5, 0.75, 0.9), delay_margin: float = 1e-3, keep_raw: bool = False,
              on_cell=None) -> SweepResult:
    """Run every grid cell, in a process pool when ``workers > 1``.

    ``on_cell`` is called in grid order with each finished :class:`CellResult`.
    """
    jobs = [(spec, axes, master_seed, cell, keep_raw) for cell in axes.cells()]
    results = []
    if workers <= 1:
        for job in jobs:
            res = _run_cell(job)
            results.append(res)
            if on_cell:
                on_cell(res)
    else:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(workers) as pool:
            for res in pool.imap(_run_cell, jobs):
                results.append(res)
                if on_cell:
                    on_cell(res)
    out = SweepResult(axes, master_seed, results)
    out.summary = summarize(out, epsilons, delay_margin)
    return out


def _quantiles_from_hist(hist: np.ndarray) -> dict:
    total = hist.sum()
    if total == 0:
        return {f"p{q}": None for q in CDF_QUANTILES}
    cum = np.cumsum(hist) / total
    upper = DELAY_BINS[1:]
    return {f"p{q}": float(upper[min(int(np.searchsorted(cum, q / 100)), len(upper) - 1)])
            for q in CDF_QUANTILES}


def summarize(result: SweepResult, epsilons=(0.5, 0.75, 0.9), delay_margin: float = 1e-3) -> dict:
    """Aggregate statistics per (policy, load), plus pairwise delay-share outcomes."""
    axes = result.axes
    by_cell = {c.cell: c for c in result.cells}
    groups = []
    for pi, policy in enumerate(axes.policies):
        for li, load in enumerate(axes.loads):
            cells = [by_cell[c] for c in axes.cells() if c[1] == pi and c[2] == li]
            ok = [c for c in cells if c.error is None]
            gammas = [r["throughput_bps"] for c in ok for r in c.rows]
            per_run_min = [min(r["throughput_bps"] for r in c.rows) for c in ok]
            per_run_mean = [float(np.mean([r["throughput_bps"] for r in c.rows])) for c in ok]
            entry = {
                "policy": str(policy), "load_bps": float(load), "cells": len(cells), "failed": len(cells) - len(ok),
                "throughput_mean": float(np.mean(gammas)) if gammas else None,
                "throughput_min": float(np.min(gammas)) if gammas else None,
                "throughput_max": float(np.max(gammas)) if gammas else None,
                "run_min_mean": float(np.mean(per_run_min)) if per_run_min else None,
                "run_mean_min": float(np.min(per_run_mean)) if per_run_mean else None,
                "starvation": {},
            }
            for eps in epsilons:
                ratios = [sim.starvation_ratio([r["throughput_bps"] for r in c.rows],
                                               [r["load_bps"] for r in c.rows], eps) for c in ok]
                entry["starvation"][f"{eps:g}"] = float(np.mean(ratios)) if ratios else None
            hists = [c.delay_hist for c in ok if c.delay_hist is not None]
            entry["delay_cdf"] = _quantiles_from_hist(np.sum(hists, axis=0)) if hists else None
            groups.append(entry)

    shares = []
    for (p1, a), (p2, b) in itertools.combinations(enumerate(axes.policies), 2):
        for li, load in enumerate(axes.loads):
            counts = {"first_better": 0, "second_better": 0, "draw": 0, "incomparable": 0}
            for d in range(axes.deployments):
                for rep in range(axes.repetitions):
                    c1, c2 = by_cell[(d, p1, li, rep)], by_cell[(d, p2, li, rep)]
                    if c1.error or c2.error:
                        counts["incomparable"] += 1
                        continue
                    try:
                        delays1 = [r["packet_delay_s"] for r in c1.rows]
                        delays2 = [r["packet_delay_s"] for r in c2.rows]
                        outcome = sim.delay_share_compare(delays1, delays2, delay_margin)
                        counts[outcome if outcome == "draw" else outcome + "_better"] += 1
                    except MissingMetrics:
                        counts["incomparable"] += 1
            shares.append({"policy_first": str(a), "policy_second": str(b), "load_bps": float(load), **counts})

    return {
        "master_seed": result.master_seed,
        "axes": {"deployments": axes.deployments, "policies": [str(p) for p in axes.policies],
                 "loads_bps": [float(l) for l in axes.loads], "repetitions": axes.repetitions,
                 "duration_s": axes.duration, "engine": axes.engine},
        "delay_margin_s": delay_margin,
        "cdf_quantiles_pct": list(CDF_QUANTILES),
        "groups": groups,
        "delay_share": shares,
        "failed_cells": [{"cell": list(c.cell), "error": c.error.splitlines()[0]} for c in result.failed],
    }


def clean_float(x):
    """JSON-friendly float (NaN becomes None)."""
    if isinstance(x, float) and math.isnan(x):
        return None
    return x
