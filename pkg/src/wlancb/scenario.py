"""Scenario model shared by both engines, random deployments and config files."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import phy
from .channels import NUM_CHANNELS, VALID_WIDTHS, ChannelAllocation, ChannelRange, Policy, block_containing
from .errors import InvalidScenario, PackingFailure, ParseError, SchemaVersionMismatch

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrafficModel:
    """Downlink traffic: Poisson packet arrivals, or Poisson bursts of ``burst_size`` packets."""

    load: float  # bits/s
    kind: str = "poisson"
    burst_size: int = 1

    def __post_init__(self):
        if self.kind not in ("poisson", "bursty"):
            raise ValueError(f"unknown traffic model {self.kind!r}")
        if not self.load >= 0:
            raise ValueError("traffic load must be >= 0")
        if self.burst_size < 1:
            raise ValueError("burst size must be >= 1")
        if self.kind == "poisson" and self.burst_size != 1:
            raise ValueError("poisson traffic has burst size 1")

    @classmethod
    def poisson(cls, load: float) -> "TrafficModel":
        return cls(load=float(load))

    @classmethod
    def bursty(cls, load: float, burst_size: int = 10) -> "TrafficModel":
        return cls(load=float(load), kind="bursty", burst_size=int(burst_size))

    def with_load(self, load: float) -> "TrafficModel":
        return dataclasses.replace(self, load=float(load))


@dataclass(frozen=True)
class WlanConfig:
    id: str
    ap: tuple
    stas: tuple
    channels: ChannelAllocation
    policy: Policy
    traffic: TrafficModel

    @property
    def sta(self):
        return self.stas[0]

    @property
    def load(self) -> float:
        return self.traffic.load


@dataclass(frozen=True)
class Scenario:
    wlans: tuple
    env: phy.RadioEnvironment = phy.RadioEnvironment()
    timing: phy.MacTimingConstants = phy.MacTimingConstants()
    mcs_table: tuple = phy.DEFAULT_MCS_TABLE
    name: str = ""
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "wlans", tuple(self.wlans))
        self.validate()

    def validate(self):
        ids = [w.id for w in self.wlans]
        if len(set(ids)) != len(ids):
            raise InvalidScenario(f"duplicate WLAN ids in {ids}")
        points = []
        for w in self.wlans:
            if not w.stas:
                raise InvalidScenario(f"WLAN {w.id} has no station")
            points.append((w.ap, f"{w.id}.ap"))
            points.extend((s, f"{w.id}.sta{k}") for k, s in enumerate(w.stas))
        for i, (p, a) in enumerate(points):
            for q, b in points[i + 1:]:
                if phy.distance(p, q) <= 0:
                    raise InvalidScenario(f"nodes {a} and {b} share position {p}")

    @property
    def ids(self) -> list[str]:
        return [w.id for w in self.wlans]

    def index(self, wlan_id: str) -> int:
        return self.ids.index(wlan_id)

    def with_policies(self, policies) -> "Scenario":
        """Copy with policies replaced; ``policies`` is one Policy, a sequence or an id mapping."""
        return self._per_wlan(policies, lambda w, p: dataclasses.replace(w, policy=Policy.parse(p)))

    def with_loads(self, loads) -> "Scenario":
        return self._per_wlan(loads, lambda w, l: dataclasses.replace(w, traffic=w.traffic.with_load(l)))

    def _per_wlan(self, values, apply):
        if isinstance(values, dict):
            picked = [values.get(w.id) for w in self.wlans]
        elif isinstance(values, (str, Policy, int, float)):
            picked = [values] * len(self.wlans)
        else:
            picked = list(values)
            if len(picked) != len(self.wlans):
                raise ValueError("one value per WLAN expected")
        wlans = [w if v is None else apply(w, v) for w, v in zip(self.wlans, picked)]
        return dataclasses.replace(self, wlans=tuple(wlans))


# ---------------------------------------------------------------------------
# random deployments


@dataclass(frozen=True)
class DeploymentSpec:
    width: float = 80.0
    height: float = 80.0
    n_wlans: int = 6
    d_ap_ap_min: float = 8.0
    d_ap_sta: tuple = (1.0, 4.0)
    width_law: Any = 8  # fixed basic-channel count or "uniform" over {1,2,4,8}
    policy_law: Any = "AM"  # fixed policy or "uniform"
    load_law: Any = 10e6  # fixed bits/s or (low, high) uniform
    traffic_kind: str = "poisson"
    burst_size: int = 1
    central: dict | None = None  # {"policy": ..., "load": ...} pins WLAN 0 at the map centre
    seed: int = 0
    rejection_budget: int = 100_000
    env: phy.RadioEnvironment = phy.RadioEnvironment()
    timing: phy.MacTimingConstants = phy.MacTimingConstants()

    def __post_init__(self):
        lo, hi = self.d_ap_sta
        if self.d_ap_ap_min < 0 or lo <= 0 or hi < lo:
            raise ValueError("invalid distance bounds")
        if self.width <= 0 or self.height <= 0 or self.n_wlans < 1:
            raise ValueError("map size and WLAN count must be positive")
        if self.width_law != "uniform" and int(self.width_law) not in VALID_WIDTHS:
            raise ValueError(f"width law must be 'uniform' or one of {VALID_WIDTHS}")
        if self.policy_law != "uniform":
            Policy.parse(self.policy_law)
        if not isinstance(self.load_law, (int, float)):
            low, high = self.load_law
            if not 0 <= low <= high:
                raise ValueError("load range must satisfy 0 <= low <= high")
        elif self.load_law < 0:
            raise ValueError("load must be >= 0")

    def replace(self, **changes) -> "DeploymentSpec":
        return dataclasses.replace(self, **changes)


PLACEMENT_ROUNDS = 10


def _place_aps(spec: DeploymentSpec, rng) -> list:
    # sequential placement can jam (no room left for the next AP); start over a few times
    best = 0
    for _ in range(PLACEMENT_ROUNDS):
        aps = [(spec.width / 2, spec.height / 2)] if spec.central is not None else []
        attempts = 0
        while len(aps) < spec.n_wlans and attempts < spec.rejection_budget:
            attempts += 1
            cand = (float(rng.uniform(0, spec.width)), float(rng.uniform(0, spec.height)))
            if all(phy.distance(cand, p) >= spec.d_ap_ap_min for p in aps):
                aps.append(cand)
        if len(aps) == spec.n_wlans:
            return aps
        best = max(best, len(aps))
    raise PackingFailure(f"placed at most {best}/{spec.n_wlans} APs in {PLACEMENT_ROUNDS} rounds "
                         f"of {spec.rejection_budget} attempts")


def generate(spec: DeploymentSpec) -> Scenario:
    """Draw a random deployment; deterministic in ``spec`` (including its seed)."""
    rng = np.random.default_rng(spec.seed)
    aps = _place_aps(spec, rng)

    lo, hi = spec.d_ap_sta
    stas = []
    for ap in aps:
        angle = rng.uniform(0, 2 * math.pi)
        radius = rng.uniform(lo, hi)
        stas.append((ap[0] + radius * math.cos(angle), ap[1] + radius * math.sin(angle)))

    primaries = rng.integers(1, NUM_CHANNELS + 1, size=spec.n_wlans)
    if spec.width_law == "uniform":
        widths = [VALID_WIDTHS[i] for i in rng.integers(0, len(VALID_WIDTHS), size=spec.n_wlans)]
    else:
        widths = [int(spec.width_law)] * spec.n_wlans
    if spec.policy_law == "uniform":
        policies = [list(Policy)[i] for i in rng.integers(0, len(Policy), size=spec.n_wlans)]
    else:
        policies = [Policy.parse(spec.policy_law)] * spec.n_wlans
    if isinstance(spec.load_law, (int, float)):
        loads = [float(spec.load_law)] * spec.n_wlans
    else:
        loads = [float(x) for x in rng.uniform(spec.load_law[0], spec.load_law[1], size=spec.n_wlans)]

    if spec.central is not None:
        widths[0] = NUM_CHANNELS
        if "policy" in spec.central:
            policies[0] = Policy.parse(spec.central["policy"])
        if "load" in spec.central:
            loads[0] = float(spec.central["load"])

    wlans = []
    for i in range(spec.n_wlans):
        p = int(primaries[i])
        traffic = TrafficModel(loads[i], spec.traffic_kind, spec.burst_size)
        wlans.append(WlanConfig(
            id=_wlan_name(i), ap=_round_point(aps[i]), stas=(_round_point(stas[i]),),
            channels=ChannelAllocation(block_containing(p, widths[i]), p),
            policy=policies[i], traffic=traffic))
    return Scenario(tuple(wlans), env=spec.env, timing=spec.timing,
                    name=f"deployment-{spec.seed}", seed=spec.seed)


def _round_point(p):
    return (round(float(p[0]), 6), round(float(p[1]), 6))


def _wlan_name(i: int) -> str:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return letters[i] if i < len(letters) else f"W{i}"


# ---------------------------------------------------------------------------
# config files


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "kind": "scenario", "name": scenario.name,
           "seed": scenario.seed,
           "environment": dataclasses.asdict(scenario.env),
           "timing": dataclasses.asdict(scenario.timing)}
    if scenario.mcs_table != phy.DEFAULT_MCS_TABLE:
        out["mcs_table"] = [[e.index, e.modulation_bits, str(e.coding_rate), *e.sensitivity]
                            for e in scenario.mcs_table]
    out["wlans"] = [_wlan_to_dict(w) for w in scenario.wlans]
    return out


def _wlan_to_dict(w: WlanConfig) -> dict:
    traffic = {"model": w.traffic.kind, "load_bps": w.traffic.load}
    if w.traffic.kind == "bursty":
        traffic["burst_size"] = w.traffic.burst_size
    return {"id": w.id, "ap": list(w.ap), "stas": [list(s) for s in w.stas],
            "channels": {"allocated": str(w.channels.allocated), "primary": w.channels.primary},
            "policy": w.policy.value, "traffic": traffic}


def deployment_to_dict(spec: DeploymentSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["d_ap_sta"] = list(spec.d_ap_sta)
    if not isinstance(spec.load_law, (int, float)):
        d["load_law"] = list(spec.load_law)
    return {"schema_version": SCHEMA_VERSION, "kind": "deployment",
            "environment": d.pop("env"), "timing": d.pop("timing"), "deployment": d}


def save_config(obj, path) -> None:
    """Write a Scenario or DeploymentSpec as a versioned YAML document."""
    data = scenario_to_dict(obj) if isinstance(obj, Scenario) else deployment_to_dict(obj)
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))


def load_config(path):
    """Read a scenario or deployment config; returns Scenario or DeploymentSpec."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ParseError(f"invalid YAML: {exc.problem}", line=line) from None
    return config_from_dict(data)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ParseError("config must be a mapping")
    version = data.get("schema_version")
    if version is None:
        raise ParseError("missing schema version", field="schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema version {version} unsupported (expected {SCHEMA_VERSION})",
                                    field="schema_version")
    kind = data.get("kind", "scenario")
    env = _build(phy.RadioEnvironment, data.get("environment") or {}, "environment")
    timing = _build(phy.MacTimingConstants, data.get("timing") or {}, "timing")
    if kind == "deployment":
        return _deployment_from_dict(data.get("deployment") or {}, env, timing)
    if kind != "scenario":
        raise ParseError(f"unknown config kind {kind!r}", field="kind")
    table = phy.DEFAULT_MCS_TABLE
    if data.get("mcs_table") is not None:
        table = _mcs_from_rows(data["mcs_table"])
    raw_wlans = _require(data, "wlans", "")
    if not isinstance(raw_wlans, list) or not raw_wlans:
        raise ParseError("at least one WLAN required", field="wlans")
    wlans = tuple(_wlan_from_dict(w, f"wlans[{i}]") for i, w in enumerate(raw_wlans))
    try:
        return Scenario(wlans, env=env, timing=timing, mcs_table=table,
                        name=str(data.get("name") or ""), seed=data.get("seed"))
    except InvalidScenario as exc:
        raise ParseError(str(exc), field="wlans") from None


def _require(d, key, prefix):
    if not isinstance(d, dict) or key not in d or d[key] is None:
        raise ParseError("missing required field", field=f"{prefix}.{key}".lstrip("."))
    return d[key]


def _build(cls, values, prefix):
    if not isinstance(values, dict):
        raise ParseError("expected a mapping", field=prefix)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ParseError("unknown field", field=f"{prefix}.{key}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field=prefix) from None


def _mcs_from_rows(rows):
    from fractions import Fraction
    try:
        entries = [phy.McsEntry(int(r[0]), int(r[1]), Fraction(str(r[2])), tuple(float(x) for x in r[3:7]))
                   for r in rows]
    except (TypeError, ValueError, IndexError, ZeroDivisionError) as exc:
        raise ParseError(f"malformed MCS row: {exc}", field="mcs_table") from None
    return phy.validate_mcs_table(entries)


def _point(value, name):
    try:
        x, y = value
        return (float(x), float(y))
    except (TypeError, ValueError):
        raise ParseError("expected [x, y] in meters", field=name) from None


def _wlan_from_dict(d, prefix) -> WlanConfig:
    wid = str(_require(d, "id", prefix))
    ap = _point(_require(d, "ap", prefix), f"{prefix}.ap")
    stas = d.get("stas")
    if stas is None and "sta" in d:
        stas = [d["sta"]]
    if not stas:
        raise ParseError("missing required field", field=f"{prefix}.stas")
    stas = tuple(_point(s, f"{prefix}.stas[{k}]") for k, s in enumerate(stas))
    ch = _require(d, "channels", prefix)
    allocated = _require(ch, "allocated", f"{prefix}.channels")
    primary = _require(ch, "primary", f"{prefix}.channels")
    try:
        alloc = ChannelAllocation(ChannelRange.parse(allocated), int(primary))
    except ValueError as exc:
        raise ParseError(str(exc), field=f"{prefix}.channels") from None
    try:
        policy = Policy.parse(_require(d, "policy", prefix))
    except ValueError as exc:
        raise ParseError(str(exc), field=f"{prefix}.policy") from None
    tr = _require(d, "traffic", prefix)
    try:
        load = float(tr["load_bps"]) if "load_bps" in tr else float(_require(tr, "load_mbps", f"{prefix}.traffic")) * 1e6
        traffic = TrafficModel(load, str(tr.get("model", "poisson")), int(tr.get("burst_size", 1)))
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field=f"{prefix}.traffic") from None
    return WlanConfig(wid, ap, stas, alloc, policy, traffic)


def _deployment_from_dict(d, env, timing) -> DeploymentSpec:
    if not isinstance(d, dict):
        raise ParseError("expected a mapping", field="deployment")
    values = dict(d)
    if "d_ap_sta" in values:
        values["d_ap_sta"] = tuple(values["d_ap_sta"])
    if isinstance(values.get("load_law"), list):
        values["load_law"] = tuple(values["load_law"])
    values["env"] = env
    values["timing"] = timing
    known = {f.name for f in dataclasses.fields(DeploymentSpec)}
    for key in values:
        if key not in known:
            raise ParseError("unknown field", field=f"deployment.{key}")
    try:
        return DeploymentSpec(**values)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), field="deployment") from None


def fixture_path(name: str) -> Path:
    return Path(__file__).parent / "fixtures" / name


def load_fixture(name: str):
    if not name.endswith(".yaml"):
        name += ".yaml"
    return load_config(fixture_path(name))
