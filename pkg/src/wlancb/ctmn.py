"""Continuous-time Markov network (CTMN) model of CSMA/CA WLANs with channel bonding.

A state is the set of WLANs transmitting and the block each one occupies.
Forward transitions (a WLAN's backoff expiring) happen at rate
``rho * lam * alpha`` and backward transitions (a transmission ending) at
``1 / T_suc``. Throughput follows from the stationary distribution, and the
``rho`` values of unsaturated WLANs come from a damped fixed-point iteration.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import phy
from .channels import NUM_CHANNELS, ChannelRange, Policy, feasible_transitions
from .errors import NoLink, SingularSystem, StateExplosion, WlanActive
from .scenario import Scenario

DENSE_LIMIT = 2000

# A state: tuple of (wlan index, ChannelRange) sorted by wlan index.
CtmnState = tuple


def format_state(state: CtmnState, scenario: Scenario | None = None) -> str:
    if not state:
        return "{}"
    names = scenario.ids if scenario is not None else None
    return " ".join(f"{names[w] if names else w}[{r}]" for w, r in state)


class _Radio:
    """Link budgets between every AP and every node, cached per scenario."""

    def __init__(self, scenario: Scenario):
        env = scenario.env
        self.scenario = scenario
        self.env = env
        n = len(scenario.wlans)
        self.ap_to_ap = np.full((n, n), phy.POWER_FLOOR_DBM)
        self.ap_to_sta = np.zeros((n, n))
        for i, wi in enumerate(scenario.wlans):
            for j, wj in enumerate(scenario.wlans):
                if i != j:
                    self.ap_to_ap[i, j] = phy.received_power(env, wi.ap, wj.ap)
                self.ap_to_sta[i, j] = phy.received_power(env, wi.ap, wj.sta)
        self.noise_mw = phy.dbm_to_mw(env.noise)
        self.cca_mw = phy.dbm_to_mw(env.cca)
        self.ce_lin = 10 ** (env.capture_effect / 10)
        self._mcs = {}

    def per_channel_offset(self, width: int) -> float:
        return -10.0 * math.log10(width)

    def sensed_mw(self, state: CtmnState, listener_ap: int, channel: int) -> float:
        total = 0.0
        for v, r in state:
            rx = self.ap_to_ap[v, listener_ap] + self.per_channel_offset(r.width)
            total += phy.dbm_to_mw(rx + phy.leakage_db(self.env, r, channel))
        return total

    def sinr(self, state: CtmnState, w: int) -> float:
        """Worst per-channel SINR (dB) at w's STA over w's transmission block."""
        block = dict(state)[w]
        signal = self.ap_to_sta[w, w] + self.per_channel_offset(block.width)
        worst = math.inf
        for c in block.channels:
            interference = 0.0
            for v, r in state:
                if v == w:
                    continue
                rx = self.ap_to_sta[v, w] + self.per_channel_offset(r.width)
                interference += phy.dbm_to_mw(rx + phy.leakage_db(self.env, r, c))
            value = signal - phy.mw_to_dbm(interference + self.noise_mw)
            worst = min(worst, value)
        return worst

    def mcs(self, w: int, width: int):
        key = (w, width)
        if key not in self._mcs:
            self._mcs[key] = phy.select_mcs(self.ap_to_sta[w, w], width, self.scenario.mcs_table)
        return self._mcs[key]


def idle_channels_in_state(scenario: Scenario, state: CtmnState, wlan: int, radio: _Radio | None = None) -> set:
    """Basic channels sensed idle (power not above CCA) at ``wlan``'s AP in ``state``."""
    if any(v == wlan for v, _ in state):
        raise WlanActive(f"WLAN {scenario.wlans[wlan].id} already transmits in {format_state(state, scenario)}")
    radio = radio or _Radio(scenario)
    return {c for c in range(1, NUM_CHANNELS + 1) if radio.sensed_mw(state, wlan, c) <= radio.cca_mw}


@dataclass
class LoadModel:
    """Per-WLAN offered load (bits/s), access probability and attempt rate."""

    load: np.ndarray
    rho: np.ndarray
    mean_backoff: float
    slot: float  # seconds
    saturated: np.ndarray = None

    def __post_init__(self):
        self.load = np.asarray(self.load, dtype=float)
        self.rho = np.clip(np.asarray(self.rho, dtype=float), 0.0, 1.0)
        if self.saturated is None:
            self.saturated = np.zeros(len(self.load), dtype=bool)

    @property
    def lam(self) -> float:
        return 1.0 / (self.mean_backoff * self.slot)

    @classmethod
    def for_scenario(cls, scenario: Scenario, rho=1.0, loads=None) -> "LoadModel":
        n = len(scenario.wlans)
        load = np.array([w.load for w in scenario.wlans] if loads is None else loads, dtype=float)
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,)).copy()
        return cls(load, rho, scenario.timing.mean_backoff_slots, scenario.timing.t_empty * 1e-6)


@dataclass
class Ctmn:
    scenario: Scenario
    policies: tuple
    states: list
    index: dict
    forward: list  # (src, dst, wlan, alpha)
    backward: list  # (src, dst, wlan)
    Q: object = None
    pi: np.ndarray = None
    loads: LoadModel = None
    radio: _Radio = field(default=None, repr=False)
    _mu: dict = field(default_factory=dict, repr=False)
    _terms: list = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def alpha(self, src: int, wlan: int) -> list:
        return [(dst, a) for s, dst, w, a in self.forward if s == src and w == wlan]

    def dense_q(self) -> np.ndarray:
        return self.Q.toarray() if sp.issparse(self.Q) else np.asarray(self.Q)

    def dump(self, path) -> None:
        """Write states and rate edges, one edge per line: ``src dst rate annotation``."""
        names = self.scenario.ids
        with open(path, "w") as fh:
            fh.write(f"# states {self.size}\n")
            for i, s in enumerate(self.states):
                fh.write(f"# state {i} {format_state(s, self.scenario)}\n")
            rates = self.forward_rates() if self.loads is not None else None
            for k, (s, d, w, a) in enumerate(self.forward):
                rate = rates[k] if rates is not None else float("nan")
                fh.write(f"{s} {d} {rate:.9g} fwd {names[w]} alpha={a:g}\n")
            mus = self.backward_rates() if self.loads is not None else None
            for k, (s, d, w) in enumerate(self.backward):
                rate = mus[k] if mus is not None else float("nan")
                fh.write(f"{s} {d} {rate:.9g} bwd {names[w]}\n")

    def forward_rates(self) -> np.ndarray:
        lam = self.loads.lam
        return np.array([self.loads.rho[w] * lam * a for _, _, w, a in self.forward])

    def backward_rates(self) -> np.ndarray:
        return np.array([departure_rate(self, self.states[s], w) for s, _, w in self.backward])

    def service_terms(self) -> list:
        """(state index, wlan, departure rate, decodable) for every active transmission."""
        if self._terms is None:
            ce = self.scenario.env.capture_effect
            self._terms = [(i, w, departure_rate(self, s, w), self.radio.sinr(s, w) > ce)
                           for i, s in enumerate(self.states) for w, _ in s]
        return self._terms


def build_state_space(scenario: Scenario, policies=None, max_states: int = 1_000_000) -> Ctmn:
    """Enumerate reachable states from the empty state and their transitions."""
    if policies is not None:
        scenario = scenario.with_policies(policies)
    pol = tuple(w.policy for w in scenario.wlans)
    radio = _Radio(scenario)
    empty: CtmnState = ()
    states = [empty]
    index = {empty: 0}
    forward, backward = [], []
    queue = deque([empty])

    def intern(s):
        if s not in index:
            if len(states) >= max_states:
                raise StateExplosion(f"more than {max_states} CTMN states")
            index[s] = len(states)
            states.append(s)
            queue.append(s)
        return index[s]

    while queue:
        s = queue.popleft()
        i = index[s]
        active = {v for v, _ in s}
        for w, cfg in enumerate(scenario.wlans):
            if w in active:
                continue
            idle = idle_channels_in_state(scenario, s, w, radio)
            if cfg.channels.primary not in idle:
                continue
            for block, a in feasible_transitions(pol[w], cfg.channels, idle):
                t = tuple(sorted(s + ((w, block),), key=lambda x: x[0]))
                forward.append((i, intern(t), w, a))
        for k, (w, _) in enumerate(s):
            backward.append((i, intern(s[:k] + s[k + 1:]), w))
    return Ctmn(scenario, pol, states, index, forward, backward, radio=radio)


def departure_rate(ctmn: Ctmn, state: CtmnState, w: int) -> float:
    """1/T_suc (per second) of w's transmission in ``state``."""
    block = dict(state)[w]
    key = (w, block.width)
    if key not in ctmn._mu:
        mcs = ctmn.radio.mcs(w, block.width)
        if mcs is None:
            raise NoLink(f"WLAN {ctmn.scenario.wlans[w].id} has no decodable MCS at {block.mhz} MHz")
        timing = ctmn.scenario.timing
        ctmn._mu[key] = 1e6 / phy.t_successful(timing, block.width, mcs, timing.max_aggregation)
    return ctmn._mu[key]


def bind_rates(ctmn: Ctmn, loads: LoadModel) -> Ctmn:
    """Fill the generator matrix Q for the given loads (in place; returns ``ctmn``)."""
    ctmn.loads = loads
    n = ctmn.size
    rows, cols, vals = [], [], []
    for (s, d, w, a), rate in zip(ctmn.forward, ctmn.forward_rates()):
        if rate > 0:
            rows.append(s), cols.append(d), vals.append(rate)
    for (s, d, w), rate in zip(ctmn.backward, ctmn.backward_rates()):
        rows.append(s), cols.append(d), vals.append(rate)
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    ctmn.Q = Q.toarray() if n <= DENSE_LIMIT else Q.tocsr()
    ctmn.pi = None
    return ctmn


def solve_stationary(ctmn: Ctmn) -> np.ndarray:
    """Stationary distribution: one balance equation replaced by normalization."""
    n = ctmn.size
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        if sp.issparse(ctmn.Q):
            A = ctmn.Q.T.tolil()
            A[n - 1, :] = np.ones(n)
            pi = spla.spsolve(A.tocsc(), b)
        else:
            A = ctmn.Q.T.copy()
            A[-1, :] = 1.0
            pi = np.linalg.solve(A, b)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularSystem(f"stationary solve failed: {exc}") from exc
    if not np.all(np.isfinite(pi)):
        raise SingularSystem("stationary solve produced non-finite values")
    pi = np.where(pi < 0, 0.0, pi)
    pi /= pi.sum()
    ctmn.pi = pi
    return pi


def throughput(ctmn: Ctmn, pi: np.ndarray | None = None) -> np.ndarray:
    """Average throughput (bits/s) of every WLAN."""
    pi = ctmn.pi if pi is None else pi
    sc = ctmn.scenario
    frame_bits = sc.timing.max_aggregation * sc.timing.l_data
    ok = 1.0 - sc.env.packet_error_rate
    out = np.zeros(len(sc.wlans))
    for i, w, mu, decodable in ctmn.service_terms():
        if decodable:
            out[w] += mu * pi[i]
    return frame_bits * ok * out


@dataclass
class FixedPointResult:
    ctmn: Ctmn
    loads: LoadModel
    throughput: np.ndarray
    pi: np.ndarray
    iterations: int
    converged: bool

    @property
    def rho(self) -> np.ndarray:
        return self.loads.rho

    @property
    def saturated(self) -> np.ndarray:
        return self.loads.saturated


def fixed_point_loads(scenario: Scenario, policies=None, loads=None, damping: float = 0.5,
                      tol: float = 1e-4, max_iter: int = 1000, ctmn: Ctmn | None = None) -> FixedPointResult:
    """Find the access probabilities rho that make every WLAN carry its load or saturate."""
    if ctmn is None:
        ctmn = build_state_space(scenario, policies)
    scenario = ctmn.scenario
    model = LoadModel.for_scenario(scenario, loads=loads)
    if np.any(model.load < 0):
        raise ValueError("traffic loads must be >= 0")
    model.rho = np.where(model.load > 0, 1.0, 0.0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        bind_rates(ctmn, model)
        pi = solve_stationary(ctmn)
        gamma = throughput(ctmn, pi)
        target = model.load
        saturated = (model.rho >= 1.0) & (gamma < target * (1 - tol))
        matched = np.abs(gamma - target) <= tol * np.maximum(target, 1.0)
        if np.all(saturated | matched):
            converged = True
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            proposal = np.where(gamma > 0, model.rho * target / gamma, np.where(target > 0, 1.0, 0.0))
        proposal = np.clip(proposal, 0.0, 1.0)
        model.rho = np.where(proposal >= 1.0, 1.0, damping * proposal + (1 - damping) * model.rho)
    model.saturated = (model.rho >= 1.0) & (gamma < model.load * (1 - tol))
    return FixedPointResult(ctmn, model, gamma, pi, it, converged)


def saturation_throughput(scenario: Scenario, wlan: int, policies=None, **kw) -> float:
    """Throughput ``wlan`` reaches once saturated, other loads held fixed."""
    sc = scenario.with_policies(policies) if policies is not None else scenario
    loads = [w.load for w in sc.wlans]
    loads[wlan] = 1e12
    return float(fixed_point_loads(sc, loads=loads, **kw).throughput[wlan])
