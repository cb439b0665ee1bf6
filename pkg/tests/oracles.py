"""Independent reference computations used only by the tests."""
import numpy as np

from wlancb import phy
from wlancb.channels import ChannelRange, feasible_transitions


def reachable_states(scenario):
    """Depth-first enumeration of CTMN states, sensing through the dBm-level phy helpers.

    Shares no code with the production state-space builder beyond the policy
    rules and the propagation formulas.
    """
    env = scenario.env
    wlans = scenario.wlans

    def idle_at(state, w):
        listener = wlans[w].ap
        active = [(wlans[v].ap, r, phy.per_channel_tx_power(env.tx_power, r.width)) for v, r in state]
        return {c for c in range(1, 9) if phy.sensed_power_on_channel(env, listener, active, c) <= env.cca}

    seen = {frozenset()}
    stack = [frozenset()]
    while stack:
        s = stack.pop()
        nxt = [s - {item} for item in s]
        busy = {v for v, _ in s}
        for w, cfg in enumerate(wlans):
            if w in busy:
                continue
            idle = idle_at(s, w)
            if cfg.channels.primary not in idle:
                continue
            for block, _ in feasible_transitions(cfg.policy, cfg.channels, idle):
                nxt.append(s | {(w, block)})
        for t in nxt:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def jump_chain_occupancy(Q, n_jumps, seed=0, start=0):
    """Time-weighted state occupancy of a CTMN sampled jump by jump."""
    rng = np.random.default_rng(seed)
    Q = np.asarray(Q)
    n = Q.shape[0]
    out_rate = -np.diag(Q)
    probs = []
    for i in range(n):
        row = Q[i].copy()
        row[i] = 0.0
        probs.append(np.cumsum(row / out_rate[i]))
    occupancy = np.zeros(n)
    holds = rng.exponential(size=n_jumps)
    picks = rng.random(n_jumps)
    s = start
    for k in range(n_jumps):
        occupancy[s] += holds[k] / out_rate[s]
        s = min(int(np.searchsorted(probs[s], picks[k], side="right")), n - 1)
    return occupancy / occupancy.sum()


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def airtime_capacity(scenario, w):
    """Upper bound on a WLAN's throughput: back-to-back full frames on its widest candidate."""
    cfg = scenario.wlans[w]
    width = cfg.channels.allocated.width
    rx = phy.received_power(scenario.env, cfg.ap, cfg.sta)
    mcs = phy.select_mcs(rx, width, scenario.mcs_table)
    return phy.effective_rate(scenario.timing, width, mcs)


def sensed_dbm_from_frames(scenario, frames, node_pos, channel, t):
    """Power on ``channel`` at ``node_pos`` from every recorded frame on air at time ``t`` (ns)."""
    env = scenario.env
    active = []
    for f in frames:
        if f.start <= t < f.end:
            pos = _node_position(scenario, f.src)
            if pos == node_pos:
                continue
            active.append((pos, f.block, phy.per_channel_tx_power(env.tx_power, f.block.width)))
    return phy.sensed_power_on_channel(env, node_pos, active, channel)


def _node_position(scenario, node):
    n = len(scenario.wlans)
    if node < n:
        return scenario.wlans[node].ap
    k = node - n
    for w in scenario.wlans:
        if k < len(w.stas):
            return w.stas[k]
        k -= len(w.stas)
    raise IndexError(node)


def block(text):
    return ChannelRange.parse(text)

