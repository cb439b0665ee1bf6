import math

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from wlancb import phy
from wlancb.channels import NUM_CHANNELS, Policy
from wlancb.errors import InvalidScenario, PackingFailure, ParseError, SchemaVersionMismatch
from wlancb.scenario import (DeploymentSpec, Scenario, TrafficModel, config_from_dict, generate, load_config,
                             load_fixture, save_config, scenario_to_dict)

FIXTURES = ["toy_scenario_1", "toy_scenario_1_scb", "toy_scenario_2_no", "toy_scenario_2_ov"]


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_roundtrip(name, tmp_path):
    sc = load_fixture(name)
    path = tmp_path / "copy.yaml"
    save_config(sc, path)
    assert load_config(path) == sc


@pytest.mark.parametrize("name", ["deployment_6wlan_20x20", "deployment_6wlan_80x80", "deployment_central"])
def test_deployment_roundtrip(name, tmp_path):
    spec = load_fixture(name)
    assert isinstance(spec, DeploymentSpec)
    path = tmp_path / "d.yaml"
    save_config(spec, path)
    assert load_config(path) == spec


def test_toy_fixtures_share_carrier_sense():
    sc = load_fixture("toy_scenario_1")
    a, b = sc.wlans
    co_channel = phy.received_power(sc.env, a.ap, b.ap) - 10 * math.log10(1)
    assert co_channel > sc.env.cca
    assert co_channel + sc.env.leakage <= sc.env.cca


def _doc(**changes):
    data = scenario_to_dict(load_fixture("toy_scenario_1"))
    data.update(changes)
    return data


def test_parse_errors_name_the_field():
    data = _doc()
    data["wlans"][1]["channels"]["primary"] = 5
    with pytest.raises(ParseError, match=r"wlans\[1\]\.channels"):
        config_from_dict(data)
    data = _doc()
    data["wlans"][0]["policy"] = "XYZ"
    with pytest.raises(ParseError, match=r"wlans\[0\]\.policy"):
        config_from_dict(data)
    data = _doc()
    del data["wlans"][0]["traffic"]
    with pytest.raises(ParseError, match="traffic"):
        config_from_dict(data)
    data = _doc(environment={"cca": -82, "bogus": 1})
    with pytest.raises(ParseError, match="environment.bogus"):
        config_from_dict(data)


def test_schema_version_checked():
    with pytest.raises(SchemaVersionMismatch):
        config_from_dict(_doc(schema_version=2))
    data = _doc()
    del data["schema_version"]
    with pytest.raises(ParseError):
        config_from_dict(data)


def test_yaml_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("schema_version: 1\nwlans: [\n  {id: A\n")
    with pytest.raises(ParseError, match="line"):
        load_config(path)


def test_load_in_mbps_accepted():
    data = _doc()
    data["wlans"][0]["traffic"] = {"model": "poisson", "load_mbps": 10}
    assert config_from_dict(data).wlans[0].load == 10e6


def test_invalid_scenarios():
    sc = load_fixture("toy_scenario_1")
    a, b = sc.wlans
    with pytest.raises(InvalidScenario):
        Scenario((a, a))
    with pytest.raises(InvalidScenario):
        Scenario((a, b.__class__(b.id, a.ap, b.stas, b.channels, b.policy, b.traffic)))
    with pytest.raises(ValueError):
        TrafficModel(-1.0)


def test_overrides():
    sc = load_fixture("toy_scenario_1")
    assert [w.policy for w in sc.with_policies("AM").wlans] == [Policy.AM, Policy.AM]
    assert [w.load for w in sc.with_loads({"B": 1.0}).wlans] == [76.8e6, 1.0]
    assert [w.load for w in sc.with_loads([1.0, 2.0]).wlans] == [1.0, 2.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.sampled_from([8, 4, "uniform"]),
       st.sampled_from(["OP", "AM", "uniform"]))
def test_generated_deployments_respect_constraints(seed, n, width_law, policy_law):
    spec = DeploymentSpec(width=60, height=60, n_wlans=n, d_ap_ap_min=8, d_ap_sta=(1, 4),
                          width_law=width_law, policy_law=policy_law, load_law=(1e6, 5e6), seed=seed)
    sc = generate(spec)
    assert len(sc.wlans) == n
    for i, w in enumerate(sc.wlans):
        assert 0 <= w.ap[0] <= 60 and 0 <= w.ap[1] <= 60
        assert 1 - 1e-5 <= phy.distance(w.ap, w.sta) <= 4 + 1e-5
        assert 1 <= w.channels.primary <= NUM_CHANNELS
        if width_law != "uniform":
            assert w.channels.allocated.width == width_law
        assert 1e6 <= w.load <= 5e6
        for v in sc.wlans[i + 1:]:
            assert phy.distance(w.ap, v.ap) >= 8 - 1e-5
    assert generate(spec) == sc


def test_central_wlan_pinned():
    spec = load_fixture("deployment_central").replace(seed=3)
    sc = generate(spec)
    assert sc.wlans[0].ap == (50.0, 50.0)
    assert sc.wlans[0].channels.allocated.width == 8
    assert sc.wlans[0].policy is Policy.AM
    assert sc.wlans[0].traffic.kind == "bursty" and sc.wlans[0].traffic.burst_size == 10


def test_packing_failure():
    spec = DeploymentSpec(width=10, height=10, n_wlans=20, d_ap_ap_min=8, rejection_budget=2000)
    with pytest.raises(PackingFailure):
        generate(spec)


def test_jammed_placement_restarts():
    # seed 390 leaves no room for the sixth AP on the first pass
    spec = load_fixture("deployment_6wlan_20x20").replace(seed=390)
    aps = [w.ap for w in generate(spec).wlans]
    assert len(aps) == 6
    assert all(math.dist(a, b) >= spec.d_ap_ap_min - 0.01 for i, a in enumerate(aps) for b in aps[i + 1:])


def test_generated_scenario_serializes(tmp_path):
    sc = generate(load_fixture("deployment_6wlan_20x20").replace(seed=11))
    path = tmp_path / "g.yaml"
    save_config(sc, path)
    assert yaml.safe_load(path.read_text())["kind"] == "scenario"
    assert load_config(path) == sc
