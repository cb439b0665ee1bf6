"""Acceptance gate: one test per primary criterion, each printing a PASS/FAIL line.

The long simulation checks (1000 s toy runs, the desk-scale deployment sweep)
take tens of minutes on a single core.
"""
import json

import numpy as np
import pytest

import oracles
from conftest import record_criterion
from test_phy import AIRTIME_ORACLE
from wlancb import ctmn, phy, sim, sweep
from wlancb.channels import ChannelRange, Policy
from wlancb.scenario import load_fixture

T = phy.MacTimingConstants()
MCS = phy.DEFAULT_MCS_TABLE
R20_REPORTED = 109.71e6
TOY1 = load_fixture("toy_scenario_1")
TOY_LOADS_B = (10e6, 50e6, 100e6, 150e6, 200e6)
TOY_DURATION = 1000.0


def test_criterion_01_airtime_oracle():
    bad = []
    for (width, mcs, n), (data, tsuc) in AIRTIME_ORACLE.items():
        d = phy.frame_durations(T, width, MCS[mcs], n)
        if (d.data, phy.t_successful(T, width, MCS[mcs], n)) != (data, tsuc) or (d.rts, d.cts, d.back) != (56, 48, 100):
            bad.append((width, mcs, n))
    ok = not bad
    record_criterion(1, "airtime oracle (4 widths x MCS {0,11} x n_agg {1,64})", ok,
                     f"{len(AIRTIME_ORACLE) - len(bad)}/{len(AIRTIME_ORACLE)} exact")
    assert ok


def test_criterion_02_effective_rates():
    r20 = phy.effective_rate(T, 1, MCS[11])
    r40 = phy.effective_rate(T, 2, MCS[11])
    raw = (phy.raw_rate(1, MCS[11]), phy.raw_rate(2, MCS[11]))
    ok = (abs(r20 / R20_REPORTED - 1) < 0.01 and abs(r40 / 207.18e6 - 1) < 0.01
          and raw == (121.875e6, 243.75e6))
    record_criterion(2, "effective and raw rates", ok,
                     f"r20={r20 / 1e6:.3f} r40={r40 / 1e6:.3f} raw={raw[0] / 1e6:g}/{raw[1] / 1e6:g} Mbps")
    assert ok


def test_criterion_03_markov_state_counts():
    expected = {Policy.OP: (4, (1, 0, 1, 0)), Policy.SCB: (3, (0, 1, 0, 1)),
                Policy.AM: (3, (0, 1, 0, 1)), Policy.PU: (6, (0.5, 0.5, 0.5, 0.5))}
    got = {}
    for policy in Policy:
        chain = ctmn.build_state_space(TOY1, policy)

        def alpha(w, text):
            target = chain.index.get(((w, ChannelRange.parse(text)),))
            return sum(a for d, a in chain.alpha(0, w) if d == target)

        got[policy] = (chain.size, (alpha(0, "1"), alpha(0, "1-2"), alpha(1, "2"), alpha(1, "1-2")))
    toy2 = (ctmn.build_state_space(load_fixture("toy_scenario_2_no")).size,
            ctmn.build_state_space(load_fixture("toy_scenario_2_ov")).size)
    ok = got == expected and toy2 == (8, 5)
    record_criterion(3, "toy-scenario state counts and transition probabilities", ok,
                     f"I: {[got[p][0] for p in Policy]} II: {toy2}")
    assert ok


def test_criterion_04_stationary_solver():
    worst_residual, count = 0.0, 0
    ok = True
    for name in ("toy_scenario_1", "toy_scenario_1_scb", "toy_scenario_2_no", "toy_scenario_2_ov"):
        for policy in Policy:
            for rho in (0.05, 0.5, 1.0):
                chain = ctmn.build_state_space(load_fixture(name), policy)
                ctmn.bind_rates(chain, ctmn.LoadModel.for_scenario(chain.scenario, rho=rho))
                pi = ctmn.solve_stationary(chain)
                residual = float(np.max(np.abs(pi @ chain.dense_q())))
                worst_residual = max(worst_residual, residual)
                ok &= bool(np.all(pi >= 0)) and abs(pi.sum() - 1) < 1e-12 and residual < 1e-9
                count += 1
    tvs = []
    for name in ("toy_scenario_1", "toy_scenario_2_no", "toy_scenario_2_ov"):
        chain = ctmn.build_state_space(load_fixture(name), Policy.PU)
        ctmn.bind_rates(chain, ctmn.LoadModel.for_scenario(chain.scenario))
        pi = ctmn.solve_stationary(chain)
        tvs.append(oracles.total_variation(pi, oracles.jump_chain_occupancy(chain.dense_q(), 10**6, seed=1)))
    ok &= max(tvs) < 1e-2
    record_criterion(4, "stationary solver properties and Monte-Carlo agreement", ok,
                     f"{count} chains, max residual {worst_residual:.1e}, max TV {max(tvs):.4f}")
    assert ok


def test_criterion_05_saturation_points():
    base = TOY1.with_loads({"A": 76.8e6, "B": 0.0})
    op = ctmn.saturation_throughput(base, 1, Policy.OP)
    am = ctmn.saturation_throughput(base, 1, Policy.AM)
    ok = abs(op / R20_REPORTED - 1) <= 0.05 and abs(am / 130e6 - 1) <= 0.10
    record_criterion(5, "fixed-point saturation of B (OP ~ r20, AM ~ 130 Mbps)", ok,
                     f"OP {op / 1e6:.2f} Mbps, AM {am / 1e6:.2f} Mbps")
    assert ok


@pytest.fixture(scope="module")
def toy_runs():
    """Simulator and model results for toy scenario I over the B load sweep."""
    out = {}
    for policy in (Policy.OP, Policy.SCB):
        for lb in TOY_LOADS_B:
            sc = TOY1.with_policies(policy).with_loads({"A": 76.8e6, "B": lb})
            model = ctmn.fixed_point_loads(sc)
            run = sim.run(sc, TOY_DURATION, seed=2020)
            out[(policy, lb)] = (sc, model, run)
    return out


@pytest.mark.slow
def test_criterion_06_simulator_matches_model(toy_runs):
    worst, where = 0.0, None
    for (policy, lb), (sc, model, run) in toy_runs.items():
        for w, m in enumerate(run.metrics):
            err = abs(m.throughput - model.throughput[w]) / model.throughput[w]
            if err > worst:
                worst, where = err, f"{policy} lB={lb / 1e6:g} {m.wlan_id}"
    ok = worst < 0.05
    record_criterion(6, "simulator vs model on toy scenario I (OP, SCB; 1000 s)", ok,
                     f"worst relative gap {worst:.4f} at {where}")
    assert ok


@pytest.mark.slow
def test_criterion_07_unsaturated_identity(toy_runs):
    checked, worst = 0, 0.0
    ok = True
    for (policy, lb), (sc, model, run) in toy_runs.items():
        for w, cfg in enumerate(sc.wlans):
            if model.saturated[w]:
                continue
            for gamma in (model.throughput[w], run.metrics[w].throughput):
                err = abs(gamma - cfg.load) / cfg.load
                worst = max(worst, err)
                ok &= err <= 0.02
            checked += 1
    ok &= checked > 0
    record_criterion(7, "unsaturated WLANs carry their load in both engines", ok,
                     f"{checked} WLAN cases, worst gap {worst:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_08_fim_starvation():
    loads = {"A": 600e6, "B": 76.8e6, "C": 600e6}
    ov = sim.run(load_fixture("toy_scenario_2_ov").with_policies(Policy.AM).with_loads(loads), 100.0, seed=7)
    no = sim.run(load_fixture("toy_scenario_2_no").with_policies(Policy.AM).with_loads(loads), 100.0, seed=7)
    gb_ov, gb_no = ov.by_id("B").throughput, no.by_id("B").throughput
    ok = gb_ov < 0.2 * 76.8e6 and abs(gb_no / 76.8e6 - 1) <= 0.02
    record_criterion(8, "flow-in-the-middle starvation of B", ok,
                     f"overlapping {gb_ov / 1e6:.2f} Mbps, disjoint {gb_no / 1e6:.2f} Mbps")
    assert ok


DESK_LOADS = (0.768e6, 30.72e6, 122.88e6)
DESK_POLICIES = (Policy.OP, Policy.AM)
DESK_DEPLOYMENTS = 20
DESK_SEED = 2020
EPSILONS = (0.5, 0.75, 0.9)
# the lightest load runs longer so Poisson noise cannot push a WLAN below 0.9 of its load
DESK_DURATIONS = {0.768e6: 30.0, 30.72e6: 5.0, 122.88e6: 5.0}


def _desk_groups(spec):
    groups = {}
    for load in DESK_LOADS:
        axes = sweep.SweepAxes(DESK_DEPLOYMENTS, DESK_POLICIES, (load,), 1, DESK_DURATIONS[load])
        res = sweep.run_sweep(spec, axes, master_seed=DESK_SEED, epsilons=EPSILONS)
        assert not res.failed, res.summary["failed_cells"]
        for g in res.summary["groups"]:
            groups[(g["policy"], load)] = g
    return groups


@pytest.mark.slow
def test_criterion_09_desk_scale_trends():
    maps = {"dense": load_fixture("deployment_6wlan_20x20"), "sparse": load_fixture("deployment_6wlan_80x80")}
    checks, lines = [], []
    for label, spec in maps.items():
        g = _desk_groups(spec)
        top = DESK_LOADS[-1]
        op_top, am_top = g[("OP", top)], g[("AM", top)]
        a = op_top["throughput_mean"] <= 1.05 * R20_REPORTED
        b = am_top["throughput_mean"] > op_top["throughput_mean"]
        checks += [a, b]
        lines.append(f"{label}: OP mean {op_top['throughput_mean'] / 1e6:.1f}, AM mean {am_top['throughput_mean'] / 1e6:.1f}")
        if label == "dense":
            c = am_top["run_min_mean"] < op_top["run_min_mean"]
            checks.append(c)
            lines.append(f"dense min (avg per deployment) OP {op_top['run_min_mean'] / 1e6:.1f} "
                         f"AM {am_top['run_min_mean'] / 1e6:.1f}")
        for policy in ("OP", "AM"):
            for eps in EPSILONS:
                series = [g[(policy, l)]["starvation"][f"{eps:g}"] for l in DESK_LOADS]
                d = all(y >= x for x, y in zip(series, series[1:]))
                checks.append(d)
                if not d:
                    lines.append(f"{label} {policy} eps={eps:g} starvation not monotone {series}")
        lines.append(json.dumps({f"{p}@{l / 1e6:g}": g[(p, l)]["starvation"] for p in ("OP", "AM") for l in DESK_LOADS}))
    ok = all(checks)
    record_criterion(9, "desk-scale OP/AM trends on 20x20 and 80x80 maps", ok, "; ".join(lines))
    assert ok


def test_criterion_10_determinism():
    sc = load_fixture("toy_scenario_2_ov").with_loads(200e6)
    a = sim.run(sc, 2.0, seed=3)
    b = sim.run(sc, 2.0, seed=3)
    same_sim = [m.as_row() for m in a.metrics] == [m.as_row() for m in b.metrics] and a.events == b.events
    ca, cb = ctmn.fixed_point_loads(sc), ctmn.fixed_point_loads(sc)
    same_ctmn = np.array_equal(ca.throughput, cb.throughput) and np.array_equal(ca.pi, cb.pi)
    spec = load_fixture("deployment_6wlan_20x20")
    axes = sweep.SweepAxes(3, ("OP", "AM"), (30.72e6,), 1, 0.3)
    one = sweep.run_sweep(spec, axes, master_seed=4, workers=1)
    two = sweep.run_sweep(spec, axes, master_seed=4, workers=2)
    same_sweep = (json.dumps(one.rows, sort_keys=True) == json.dumps(two.rows, sort_keys=True)
                  and json.dumps(one.summary, sort_keys=True) == json.dumps(two.summary, sort_keys=True))
    ok = same_sim and same_ctmn and same_sweep
    record_criterion(10, "bit-identical reruns (simulator, model, sweep with 1 vs 2 workers)", ok,
                     f"sim={same_sim} model={same_ctmn} sweep={same_sweep}")
    assert ok
