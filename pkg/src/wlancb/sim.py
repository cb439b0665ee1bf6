"""Event-driven CSMA/CA simulator with dynamic channel bonding.

Downlink only: each AP contends on its primary channel, bonds secondary
channels that stayed idle for a PIFS, and runs an RTS/CTS/DATA/BACK exchange
on the chosen block. Receptions succeed when the SINR stays above the
capture-effect threshold for the whole frame. Third-party APs that decode an
RTS or CTS on their primary channel defer through NAV.

Time is kept in integer nanoseconds so slot arithmetic is exact.
"""
from __future__ import annotations

import heapq
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from . import phy
from .channels import NUM_CHANNELS, ChannelRange, Policy, candidate_blocks, select_channel
from .errors import InvalidScenario, MissingMetrics, ZeroLoad
from .scenario import Scenario

US = 1000  # ns per microsecond

# event kinds, listed in tie-break rank order
TX_END, TIMEOUT, NAV_END, EXPIRY, TX_START, ARRIVAL = range(6)

RTS, CTS, DATA, BACK = "RTS", "CTS", "DATA", "BACK"

# WLAN states
IDLE, CONTEND, EXCHANGE = 0, 1, 2


@dataclass
class WlanMetrics:
    wlan_id: str
    load: float
    duration: float
    throughput: float = 0.0  # bits/s
    access_delay: float = math.nan  # s
    packet_delay: float = math.nan  # s
    drop_ratio: float = 0.0
    avg_aggregation: float = math.nan
    generated: int = 0
    delivered: int = 0
    dropped: int = 0
    queued: int = 0
    in_flight: int = 0
    tx_attempts: int = 0
    successes: int = 0
    collisions: int = 0
    data_failures: int = 0
    corrupted: int = 0
    concurrent_starts: int = 0
    no_transmission: int = 0
    buffer_full_hits: int = 0
    delays: np.ndarray | None = field(default=None, repr=False)

    @property
    def saturated(self) -> bool:
        return self.dropped > 0

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in (
            "wlan_id", "load", "throughput", "access_delay", "packet_delay", "drop_ratio",
            "avg_aggregation", "generated", "delivered", "dropped", "queued", "tx_attempts",
            "successes", "collisions", "data_failures", "corrupted", "concurrent_starts")}


@dataclass
class SimResult:
    scenario: Scenario
    duration: float
    seed: int
    metrics: list
    events: Counter
    trace: list | None = None
    frames: list | None = None

    def by_id(self, wlan_id: str) -> WlanMetrics:
        return next(m for m in self.metrics if m.wlan_id == wlan_id)

    @property
    def throughputs(self) -> np.ndarray:
        return np.array([m.throughput for m in self.metrics])


class _Frame:
    __slots__ = ("wlan", "kind", "src", "dst", "block", "start", "end", "contrib",
                 "n_agg", "width", "mcs", "corrupted", "listeners", "tracked")

    def __init__(self, wlan, kind, src, dst, block, start, end, contrib):
        self.wlan = wlan
        self.kind = kind
        self.src = src
        self.dst = dst
        self.block = block
        self.start = start
        self.end = end
        self.contrib = contrib
        self.n_agg = 0
        self.width = block.width
        self.mcs = None
        self.corrupted = False
        self.listeners = None
        self.tracked = {}  # node -> worst SINR (linear) so far


class _Arrivals:
    """Lazily generated arrival instants (ns) of one WLAN's traffic process."""

    BATCH = 4096

    def __init__(self, traffic, l_data: int, rng: np.random.Generator):
        self.rng = rng
        self.burst = traffic.burst_size
        if traffic.load > 0:
            packets_per_s = traffic.load / l_data
            self.mean_gap = 1e9 * self.burst / packets_per_s
        else:
            self.mean_gap = math.inf
        self.last = 0.0
        self.times = np.empty(0, dtype=np.int64)
        self.pos = 0
        self._refill()

    def _refill(self):
        if math.isinf(self.mean_gap):
            self.times = np.array([np.iinfo(np.int64).max], dtype=np.int64)
            self.pos = 0
            return
        gaps = self.rng.exponential(self.mean_gap, size=self.BATCH)
        t = self.last + np.cumsum(gaps)
        self.last = float(t[-1])
        times = np.ceil(t).astype(np.int64)
        if self.burst > 1:
            times = np.repeat(times, self.burst)
        self.times = times
        self.pos = 0

    def peek(self) -> int:
        return int(self.times[self.pos])

    def take_until(self, now: int) -> np.ndarray:
        """Arrival instants <= now, consumed in order."""
        chunks = []
        while True:
            k = int(np.searchsorted(self.times, now, side="right"))
            if k > self.pos:
                chunks.append(self.times[self.pos:k])
                self.pos = k
            if self.pos < len(self.times):
                break
            self._refill()
        if not chunks:
            return self.times[:0]
        return chunks[0] if len(chunks) == 1 else np.concatenate(chunks)


class _Wlan:
    __slots__ = ("idx", "cfg", "ap", "stas", "primary", "alloc", "policy", "queue", "arrivals",
                 "rng_backoff", "rng_pu", "rng_eta", "rng_dst", "backoff", "stage", "state",
                 "counting", "count_start", "expiry_time", "token", "nav_until",
                 "contention_start", "mcs", "m", "delay_sum", "delays", "agg_sum", "access_sum",
                 "access_n", "pending_agg")

    def __init__(self, idx, cfg):
        self.idx = idx
        self.cfg = cfg
        self.primary = cfg.channels.primary
        self.alloc = cfg.channels
        self.policy = cfg.policy
        self.queue = deque()
        self.backoff = 0
        self.stage = 0
        self.state = IDLE
        self.counting = False
        self.count_start = 0
        self.expiry_time = 0
        self.token = 0
        self.nav_until = 0
        self.contention_start = 0
        self.delay_sum = 0.0
        self.delays = []
        self.agg_sum = 0
        self.access_sum = 0
        self.access_n = 0
        self.pending_agg = 0


class Simulator:
    """One simulation run; use :func:`run` for the functional entry point."""

    def __init__(self, scenario: Scenario, seed: int = 0, trace: bool = False,
                 record_frames: bool = False, keep_delays: bool = False):
        self.sc = scenario
        self.seed = int(seed)
        env, timing = scenario.env, scenario.timing
        self.env, self.timing = env, timing
        for w in scenario.wlans:
            if w.load < 0:
                raise InvalidScenario(f"WLAN {w.id} has negative load")
        n = len(scenario.wlans)
        self.n = n
        # nodes: APs 0..n-1, then STAs
        positions = [w.ap for w in scenario.wlans]
        sta_nodes = []
        for w in scenario.wlans:
            ids = []
            for s in w.stas:
                ids.append(len(positions))
                positions.append(s)
            sta_nodes.append(ids)
        self.positions = positions
        nn = len(positions)
        gain = np.zeros((nn, nn))
        for i in range(nn):
            for j in range(nn):
                if i != j:
                    d = phy.distance(positions[i], positions[j])
                    if d <= 0:
                        raise InvalidScenario("coincident node positions")
                    gain[i, j] = 10 ** ((env.tx_gain + env.rx_gain - phy.path_loss(d, env.breakpoint)) / 10)
        self.gain = gain
        self.noise = phy.dbm_to_mw(env.noise)
        self.cca = phy.dbm_to_mw(env.cca)
        self.ce = 10 ** (env.capture_effect / 10)
        self.leak = {}
        self._contrib_cache = {}

        t = timing
        self.t_e = t.t_empty * US
        self.t_sifs = t.t_sifs * US
        self.t_difs = t.t_difs * US
        self.t_pifs = t.t_pifs * US
        self.n_a = t.max_aggregation
        self.n_b = t.buffer_size
        self.durations = {}

        self.wlans = []
        for i, cfg in enumerate(scenario.wlans):
            w = _Wlan(i, cfg)
            w.ap = i
            w.stas = sta_nodes[i]
            streams = [np.random.SeedSequence(self.seed, spawn_key=(i, k)) for k in range(5)]
            w.arrivals = _Arrivals(cfg.traffic, t.l_data, np.random.default_rng(streams[0]))
            w.rng_backoff = random.Random(int(streams[1].generate_state(1)[0]))
            w.rng_pu = random.Random(int(streams[2].generate_state(1)[0]))
            w.rng_eta = random.Random(int(streams[3].generate_state(1)[0]))
            w.rng_dst = random.Random(int(streams[4].generate_state(1)[0]))
            w.mcs = {}
            for k, sta in enumerate(cfg.stas):
                rx = phy.received_power(env, cfg.ap, sta)
                for block in candidate_blocks(cfg.channels):
                    entry = phy.select_mcs(rx, block.width, scenario.mcs_table)
                    if entry is None:
                        raise InvalidScenario(f"WLAN {cfg.id}: no decodable MCS to STA {k} at {block.mhz} MHz")
                    w.mcs[(k, block.width)] = entry
            w.m = Counter()
            self.wlans.append(w)

        self.power = np.zeros((nn, NUM_CHANNELS))
        self.busy = np.zeros((n, NUM_CHANNELS), dtype=bool)
        self.idle_since = np.zeros((n, NUM_CHANNELS), dtype=np.int64)
        self.active = []
        self.now = 0
        self.heap = []
        self.seq = 0
        self.events = Counter()
        self.trace = [] if trace else None
        self.frames = [] if record_frames else None
        self.keep_delays = keep_delays
        self._last_rts_start = {}

    # -- helpers -----------------------------------------------------------

    def _push(self, time, kind, wlan, payload=None):
        self.seq += 1
        heapq.heappush(self.heap, (time, kind, wlan, self.seq, payload))

    def _log(self, w, kind, block, outcome):
        if self.trace is not None:
            self.trace.append(f"{self.now / US:.3f} {self.sc.wlans[w].id} {kind} "
                              f"{block if block is not None else '-'} {outcome}")

    def _leak(self, block):
        vec = self.leak.get(block)
        if vec is None:
            vec = np.array([10 ** (self.env.leakage * block.distance_to(c) / 10)
                            for c in range(1, NUM_CHANNELS + 1)])
            self.leak[block] = vec
        return vec

    def _contrib(self, src, block):
        key = (src, block)
        c = self._contrib_cache.get(key)
        if c is None:
            p = 10 ** (phy.per_channel_tx_power(self.env.tx_power, block.width) / 10)
            c = np.outer(self.gain[src] * p, self._leak(block))
            self._contrib_cache[key] = c
        return c

    def _durations(self, width, mcs, n_agg):
        key = (width, mcs.index, n_agg)
        d = self.durations.get(key)
        if d is None:
            d = tuple(x * US for x in phy.frame_durations(self.timing, width, mcs, n_agg))
            self.durations[key] = d
        return d

    def _draw_backoff(self, w):
        cw = (2 ** w.stage) * self.timing.cw_min
        w.backoff = w.rng_backoff.randrange(cw)

    # -- queue ---------------------------------------------------------------

    def _catch_up(self, w):
        arrived = w.arrivals.take_until(self.now)
        if len(arrived):
            m = w.m
            m["generated"] += len(arrived)
            free = self.n_b - len(w.queue)
            take = min(free, len(arrived))
            if take > 0:
                w.queue.extend(arrived[:take].tolist())
            if take < len(arrived):
                m["dropped"] += len(arrived) - take
            if len(w.queue) >= self.n_b and take > 0:
                m["buffer_full_hits"] += 1

    def _schedule_arrival(self, w):
        t = w.arrivals.peek()
        if t <= self.horizon:
            self._push(max(t, self.now), ARRIVAL, w.idx)

    # -- channel access ----------------------------------------------------

    def _medium_idle_since(self, w):
        a, p = w.ap, w.primary - 1
        if self.busy[a, p] or w.nav_until > self.now:
            return None
        return max(int(self.idle_since[a, p]), w.nav_until)

    def _try_resume(self, w):
        if w.state != CONTEND or w.counting:
            return
        t_idle = self._medium_idle_since(w)
        if t_idle is None:
            return
        start = t_idle + self.t_difs
        if self.now > start:
            start += -(-(self.now - start) // self.t_e) * self.t_e
        w.counting = True
        w.count_start = start
        w.expiry_time = start + w.backoff * self.t_e
        w.token += 1
        self._push(w.expiry_time, EXPIRY, w.idx, w.token)

    def _freeze(self, w):
        if not w.counting or w.expiry_time <= self.now:
            return
        if self.now > w.count_start:
            w.backoff -= (self.now - w.count_start) // self.t_e
        w.counting = False
        w.token += 1

    def _enter_contention(self, w):
        """After an exchange or an arrival: contend if backlogged, else wait for traffic."""
        self._catch_up(w)
        if w.queue:
            w.state = CONTEND
            w.contention_start = self.now
            self._try_resume(w)
        else:
            w.state = IDLE
            self._schedule_arrival(w)

    def _on_expiry(self, w, token):
        if token != w.token or w.state != CONTEND:
            return
        w.counting = False
        a = w.ap
        limit = self.now - self.t_pifs
        busy = self.busy[a]
        since = self.idle_since[a]
        idle = {c for c in w.alloc.allocated.channels if not busy[c - 1] and since[c - 1] <= limit}
        idle.add(w.primary)
        block = select_channel(w.policy, w.alloc, idle, w.rng_pu.random() if w.policy is Policy.PU else 0.0)
        if block is None:
            w.m["no_transmission"] += 1
            self._log(w.idx, "NOTX", None, "blocked")
            self._draw_backoff(w)
            self._try_resume(w)
            return
        self._catch_up(w)
        n_agg = min(len(w.queue), self.n_a)
        k = 0 if len(w.stas) == 1 else w.rng_dst.randrange(len(w.stas))
        mcs = w.mcs[(k, block.width)]
        d = self._durations(block.width, mcs, n_agg)
        w.state = EXCHANGE
        w.pending_agg = n_agg
        w.m["tx_attempts"] += 1
        w.access_sum += self.now - w.contention_start
        w.access_n += 1
        f = _Frame(w.idx, RTS, w.ap, w.stas[k], block, self.now, self.now + d[0], self._contrib(w.ap, block))
        f.n_agg, f.mcs = n_agg, mcs
        f.listeners = k
        self._push(self.now, TX_START, w.idx, f)

    # -- medium --------------------------------------------------------------

    def _update_busy(self):
        if self.active:
            now_busy = self.power[: self.n] > self.cca
        else:
            self.power[:] = 0.0
            now_busy = np.zeros_like(self.busy)
        if now_busy.tobytes() == self.busy.tobytes():
            return
        changed = now_busy != self.busy
        freed = changed & ~now_busy
        self.idle_since[freed] = self.now
        self.busy = now_busy
        for w in self.wlans:
            p = w.primary - 1
            if changed[w.ap, p]:
                if now_busy[w.ap, p]:
                    self._freeze(w)
                else:
                    self._try_resume(w)

    def _sinr(self, f, node):
        ch = slice(f.block.left - 1, f.block.right)
        signal = f.contrib[node, ch]
        interference = self.power[node, ch] - signal
        return float((signal / (np.maximum(interference, 0.0) + self.noise)).min())

    def _on_tx_start(self, f):
        self.events[f.kind] += 1
        if f.kind == RTS:
            prev = self._last_rts_start.get(f.start)
            if prev is not None and prev.block.overlaps(f.block):
                self.wlans[f.wlan].m["concurrent_starts"] += 1
                self.wlans[prev.wlan].m["concurrent_starts"] += 1
            self._last_rts_start = {f.start: f}
        self.power += f.contrib
        self.active.append(f)
        for g in self.active:
            if g is not f:
                for node, worst in g.tracked.items():
                    s = self._sinr(g, node)
                    if s < worst:
                        g.tracked[node] = s
        f.tracked[f.dst] = self._sinr(f, f.dst)
        if f.kind in (RTS, CTS):
            for w in self.wlans:
                if w.idx != f.wlan and w.primary in f.block:
                    s = self._sinr(f, w.ap)
                    if s > self.ce:
                        f.tracked[w.ap] = s
        self._update_busy()
        if self.frames is not None:
            self.frames.append(f)
        self._push(f.end, TX_END, f.wlan, f)

    def _on_tx_end(self, f):
        self.power -= f.contrib
        self.active.remove(f)
        self._update_busy()
        w = self.wlans[f.wlan]
        decoded = f.tracked[f.dst] > self.ce
        if f.kind in (RTS, CTS):
            self._set_nav(f)
        kind = f.kind
        if kind == RTS:
            self._log(f.wlan, RTS, f.block, "ok" if decoded else "lost")
            if decoded:
                cts = self._next_frame(f, CTS, f.dst, f.src, 1)
                self._push(cts.start, TX_START, f.wlan, cts)
            else:
                w.m["collisions"] += 1
                self._push(f.end + self.t_sifs + self._durations(f.width, f.mcs, f.n_agg)[1] + self.t_e,
                           TIMEOUT, f.wlan, "cts")
        elif kind == CTS:
            self._log(f.wlan, CTS, f.block, "ok" if decoded else "lost")
            if decoded:
                data = self._next_frame(f, DATA, f.dst, f.src, 2)
                self._push(data.start, TX_START, f.wlan, data)
            else:
                w.m["collisions"] += 1
                self._push(f.end + self.t_e, TIMEOUT, f.wlan, "cts")
        elif kind == DATA:
            if decoded:
                eta = self.env.packet_error_rate
                corrupted = eta > 0 and w.rng_eta.random() < eta
                self._log(f.wlan, DATA, f.block, "corrupted" if corrupted else "ok")
                back = self._next_frame(f, BACK, f.dst, f.src, 3)
                back.corrupted = corrupted
                self._push(back.start, TX_START, f.wlan, back)
            else:
                self._log(f.wlan, DATA, f.block, "lost")
                w.m["data_failures"] += 1
                self._push(f.end + self.t_sifs + self._durations(f.width, f.mcs, f.n_agg)[3] + self.t_e,
                           TIMEOUT, f.wlan, "back")
        else:
            self._log(f.wlan, BACK, f.block, "ok" if decoded else "lost")
            if not decoded:
                w.m["data_failures"] += 1
                self._fail(w, escalate=True)
            elif f.corrupted:
                w.m["corrupted"] += 1
                self._fail(w, escalate=False)
            else:
                self._succeed(w, f)

    def _next_frame(self, prev, kind, src, dst, slot):
        start = prev.end + self.t_sifs
        dur = self._durations(prev.width, prev.mcs, prev.n_agg)[slot]
        g = _Frame(prev.wlan, kind, src, dst, prev.block, start, start + dur, self._contrib(src, prev.block))
        g.n_agg, g.mcs, g.listeners = prev.n_agg, prev.mcs, prev.listeners
        return g

    def _set_nav(self, f):
        if f.kind == RTS:
            rest = (3 * self.t_sifs + sum(self._durations(f.width, f.mcs, f.n_agg)[1:]))
        else:
            d = self._durations(f.width, f.mcs, f.n_agg)
            rest = 2 * self.t_sifs + d[2] + d[3]
        until = f.end + rest
        for node, worst in f.tracked.items():
            if node == f.dst or node >= self.n or worst <= self.ce:
                continue
            w = self.wlans[node]
            if w.state == EXCHANGE or until <= w.nav_until:
                continue
            w.nav_until = until
            self._freeze(w)
            self._push(until, NAV_END, w.idx)

    def _succeed(self, w, f):
        self._catch_up(w)
        n = f.n_agg
        now = self.now
        total = 0
        for _ in range(n):
            t_arr = w.queue.popleft()
            total += now - t_arr
            if self.keep_delays:
                w.delays.append((now - t_arr) / 1e9)
        w.delay_sum += total
        w.agg_sum += n
        w.m["delivered"] += n
        w.m["successes"] += 1
        w.stage = 0
        self._draw_backoff(w)
        self._enter_contention(w)

    def _fail(self, w, escalate):
        if escalate:
            w.stage = min(w.stage + 1, self.timing.backoff_stages)
        self._draw_backoff(w)
        self._enter_contention(w)

    # -- main loop -----------------------------------------------------------

    def run(self, duration: float) -> SimResult:
        if not duration > 0:
            raise ValueError("duration must be > 0")
        self.horizon = int(round(duration * 1e9))
        for w in self.wlans:
            self._draw_backoff(w)
            self._enter_contention(w)
        heap = self.heap
        horizon = self.horizon
        while heap:
            time, kind, wi, _, payload = heapq.heappop(heap)
            if time > horizon:
                break
            self.now = time
            if kind == TX_END:
                self._on_tx_end(payload)
            elif kind == TX_START:
                self._on_tx_start(payload)
            elif kind == EXPIRY:
                self._on_expiry(self.wlans[wi], payload)
            elif kind == TIMEOUT:
                self.events["TIMEOUT"] += 1
                self._log(wi, "TIMEOUT", None, payload)
                self._fail(self.wlans[wi], escalate=True)
            elif kind == NAV_END:
                w = self.wlans[wi]
                if self.now >= w.nav_until:
                    self._try_resume(w)
            elif kind == ARRIVAL:
                w = self.wlans[wi]
                if w.state == IDLE:
                    self._enter_contention(w)
        self.now = horizon
        return self._result(duration)

    def _result(self, duration):
        metrics = []
        for w in self.wlans:
            self._catch_up(w)
            m = w.m
            out = WlanMetrics(w.cfg.id, w.cfg.load, duration)
            for key in ("generated", "delivered", "dropped", "tx_attempts", "successes", "collisions",
                        "data_failures", "corrupted", "concurrent_starts", "no_transmission",
                        "buffer_full_hits"):
                setattr(out, key, m[key])
            out.in_flight = w.pending_agg if w.state == EXCHANGE else 0
            out.queued = len(w.queue) - out.in_flight
            out.throughput = out.delivered * self.timing.l_data / duration
            if out.delivered:
                out.packet_delay = w.delay_sum / out.delivered / 1e9
            if out.successes:
                out.avg_aggregation = w.agg_sum / out.successes
            if w.access_n:
                out.access_delay = w.access_sum / w.access_n / 1e9
            if out.generated:
                out.drop_ratio = out.dropped / out.generated
            if self.keep_delays:
                out.delays = np.array(w.delays)
            metrics.append(out)
        return SimResult(self.sc, duration, self.seed, metrics, self.events, self.trace, self.frames)


def run(scenario: Scenario, duration: float, seed: int = 0, trace: bool = False,
        record_frames: bool = False, keep_delays: bool = False) -> SimResult:
    """Simulate ``scenario`` for ``duration`` seconds; deterministic in (scenario, duration, seed)."""
    return Simulator(scenario, seed, trace=trace, record_frames=record_frames,
                     keep_delays=keep_delays).run(duration)


def starvation_ratio(metrics, loads=None, eps: float = 0.5) -> float:
    """Fraction of WLANs whose throughput is below ``eps`` times their load.

    WLANs without demand cannot starve and count as non-starving.
    """
    if not 0 < eps <= 1:
        raise ValueError("starvation threshold must lie in (0, 1]")
    metrics = list(metrics)
    if not metrics:
        return 0.0
    if loads is None:
        loads = [m.load for m in metrics]
    gammas = [m.throughput if isinstance(m, WlanMetrics) else float(m) for m in metrics]
    starving = sum(1 for g, load in zip(gammas, loads) if load > 0 and g < eps * load)
    return starving / len(metrics)


def delay_share_compare(first, second, margin: float = 1e-3) -> str:
    """Compare mean packet delays of the same scenario under two policies.

    Returns ``"first"``, ``"second"`` or ``"draw"``; the lower delay wins when the
    gap exceeds ``margin`` seconds. Accepts WlanMetrics lists or plain delays.
    """
    def mean_delay(ms):
        vals = []
        for m in ms:
            d = m.packet_delay if isinstance(m, WlanMetrics) else float(m)
            if isinstance(m, WlanMetrics) and m.delivered == 0 or math.isnan(d):
                raise MissingMetrics("a WLAN delivered nothing; delays are incomparable")
            vals.append(d)
        if not vals:
            raise MissingMetrics("no delay samples")
        return sum(vals) / len(vals)

    diff = mean_delay(first) - mean_delay(second)
    if diff < -margin:
        return "first"
    if diff > margin:
        return "second"
    return "draw"


def success_probability(gamma: float, load: float, eps: float = 0.05) -> bool:
    """Whether a WLAN met its demand within relative margin ``eps``."""
    if load <= 0:
        raise ZeroLoad("success needs a positive load")
    return gamma >= (1 - eps) * load
