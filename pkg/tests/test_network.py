"""Case loading, structural validation, and round-trip serialization."""

import json

import pytest

from gridvvc.network import (
    CaseError,
    Network,
    OltcSpec,
    PvSpec,
    ScSpec,
    load_builtin_case,
    load_case,
    network_from_dict,
    network_to_dict,
    validate_network,
)


def two_bus_dict():
    return {
        "base_mva": 10.0,
        "base_kv": 12.66,
        "v_ref": 1.0,
        "v_min": 0.95,
        "v_max": 1.05,
        "regions": 1,
        "buses": [{"id": 0, "region": 1}, {"id": 1, "region": 1}],
        "branches": [{"from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.01}],
        "oltc": {"positions": 11, "step_pu": 0.006, "daily_change_limit": 4},
        "scs": [],
        "pvs": [],
    }


def test_embedded_33_bus_case():
    net = load_builtin_case("ieee33")
    assert net.n_buses == 33
    assert len(net.branches) == 32
    assert net.region_count == 3
    assert len(net.scs) == 3
    assert len(net.pvs) == 6
    assert validate_network(net) == []


def test_two_bus_toy_case_accepted(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(two_bus_dict()))
    net = load_case(path)
    assert net.n_buses == 2
    assert len(net.branches) == 1


def test_cycle_rejected(tmp_path):
    data = two_bus_dict()
    data["buses"].append({"id": 2, "region": 1})
    data["branches"] += [
        {"from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.01},
        {"from": 0, "to": 2, "r_pu": 0.01, "x_pu": 0.01},
    ]
    path = tmp_path / "cycle.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CaseError, match="radial"):
        load_case(path)


def test_parse_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(CaseError, match="cannot read"):
        load_case(path)
    path.write_text(json.dumps({"base_mva": 1.0}))
    with pytest.raises(CaseError, match="malformed"):
        load_case(path)


def test_device_on_unknown_bus(tmp_path):
    data = two_bus_dict()
    data["pvs"] = [{"bus": 7, "s_mva": 1.0, "lambda": 0.3}]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(CaseError, match="unknown bus"):
        load_case(path)


def test_sc_on_pv_bus_is_a_violation():
    net = network_from_dict(two_bus_dict())
    conflicted = Network(
        buses=net.buses,
        branches=net.branches,
        base_mva=net.base_mva,
        base_kv=net.base_kv,
        v_ref=net.v_ref,
        v_min=net.v_min,
        v_max=net.v_max,
        region_count=1,
        oltc=net.oltc,
        scs=(ScSpec(bus=1, q_mvar=0.15),),
        pvs=(PvSpec(bus=1, s_mva=1.0, reactive_factor=0.3),),
    )
    violations = validate_network(conflicted)
    assert any("bus 1" in v and "both" in v for v in violations)


def test_band_ordering_violation():
    data = two_bus_dict()
    data["v_min"] = 1.06
    data["v_max"] = 1.05
    data["v_ref"] = 1.055
    net = network_from_dict(data)
    violations = validate_network(net)
    assert any("v_min < v_ref < v_max" in v for v in violations)


def test_valid_case_has_no_violations():
    assert validate_network(load_builtin_case("ieee33")) == []
    assert validate_network(load_builtin_case("toy5")) == []


def test_round_trip_serialization(tmp_path):
    net = load_builtin_case("ieee33")
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(network_to_dict(net)))
    again = load_case(path)
    assert again == net


def test_oltc_tap_range():
    oltc = OltcSpec(position_count=11, step_pu=0.006, daily_change_limit=4)
    assert oltc.max_tap == 5
    assert list(oltc.tap_range()) == list(range(-5, 6))


def test_regions_partition_all_buses():
    net = load_builtin_case("ieee33")
    seen = []
    for r in range(1, net.region_count + 1):
        seen.extend(net.region_buses(r))
    assert sorted(seen) == list(range(33))


def test_devices_disjoint_in_shipped_case():
    net = load_builtin_case("ieee33")
    assert not set(net.sc_buses) & set(net.pv_buses)
