"""Static feeder model: buses, branches, device specs, and case-file loading.

A case describes a radial feeder (bus 0 is the root/slack), its per-unit
bases and voltage band, the root tap changer, and the shunt capacitors and
PV inverters attached to load buses.  Everything here is immutable after
load and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class CaseError(ValueError):
    """Raised when a case file cannot be loaded as a valid feeder."""


@dataclass(frozen=True)
class Bus:
    id: int
    region: int


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float


@dataclass(frozen=True)
class OltcSpec:
    """Root transformer tap changer.

    Tap positions are symmetric integers, e.g. 11 positions -> -5..+5.
    """

    position_count: int = 11
    step_pu: float = 0.006
    daily_change_limit: int = 4

    @property
    def max_tap(self) -> int:
        return (self.position_count - 1) // 2

    def tap_range(self) -> range:
        return range(-self.max_tap, self.max_tap + 1)


@dataclass(frozen=True)
class ScSpec:
    """Switchable shunt capacitor: fixed MVAr when committed, zero otherwise."""

    bus: int
    q_mvar: float
    window: tuple[int, int] = (6, 22)  # allowed commitment hours [h0, h1)


@dataclass(frozen=True)
class PvSpec:
    """PV inverter: installed MVA and the reactive capacity factor of its
    usable headroom sqrt(S^2 - P^2)."""

    bus: int
    s_mva: float
    reactive_factor: float


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float
    base_kv: float
    v_ref: float
    v_min: float
    v_max: float
    region_count: int
    oltc: OltcSpec = field(default_factory=OltcSpec)
    scs: tuple[ScSpec, ...] = ()
    pvs: tuple[PvSpec, ...] = ()

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def sc_buses(self) -> tuple[int, ...]:
        return tuple(sc.bus for sc in self.scs)

    @property
    def pv_buses(self) -> tuple[int, ...]:
        return tuple(pv.bus for pv in self.pvs)

    def region_of(self, bus_id: int) -> int:
        return self.buses[bus_id].region

    def region_buses(self, region: int) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.region == region)


def feeder_order(net: Network) -> tuple[list[int], list[int]]:
    """BFS order from the root and parent pointers (parent[0] = -1).

    Unreachable buses are simply absent from the order; callers that need
    radiality guarantees go through validate_network/load_case first.
    """
    n = net.n_buses
    adj: list[list[int]] = [[] for _ in range(n)]
    for br in net.branches:
        if 0 <= br.from_bus < n and 0 <= br.to_bus < n:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    parent = [-1] * n
    order = [0]
    seen = [False] * n
    seen[0] = True
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                order.append(v)
    return order, parent


def validate_network(net: Network) -> list[str]:
    """Return every violated structural invariant, ordered deterministically.

    Violations are data, not exceptions: an empty list means the network is
    a valid radial feeder with a consistent device layout.
    """
    violations: list[str] = []
    n = net.n_buses

    ids = [b.id for b in net.buses]
    if ids != list(range(n)):
        violations.append(f"bus ids must be contiguous 0..{n - 1}, got {ids[:8]}...")
    if n == 0:
        return violations + ["network has no buses"]

    for br in net.branches:
        if br.from_bus == br.to_bus:
            violations.append(f"branch {br.from_bus}-{br.to_bus}: self-loop")
        if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
            violations.append(f"branch {br.from_bus}-{br.to_bus}: unknown bus")
        if br.r_pu < 0:
            violations.append(f"branch {br.from_bus}-{br.to_bus}: negative resistance")

    if len(net.branches) != n - 1:
        violations.append(
            f"radial feeder needs {n - 1} branches for {n} buses, got {len(net.branches)}"
        )
    order, _ = feeder_order(net)
    if len(order) != n:
        missing = sorted(set(range(n)) - set(order))
        violations.append(f"buses unreachable from root: {missing}")

    if not (net.v_min < net.v_ref < net.v_max):
        violations.append(
            f"voltage band must satisfy v_min < v_ref < v_max, "
            f"got {net.v_min} / {net.v_ref} / {net.v_max}"
        )

    if net.region_count < 1:
        violations.append(f"region_count must be >= 1, got {net.region_count}")
    for b in net.buses:
        if not (1 <= b.region <= net.region_count):
            violations.append(f"bus {b.id}: region {b.region} outside 1..{net.region_count}")

    if net.oltc.position_count < 1 or net.oltc.position_count % 2 == 0:
        violations.append(f"oltc position_count must be odd, got {net.oltc.position_count}")
    if net.oltc.step_pu <= 0:
        violations.append(f"oltc step_pu must be > 0, got {net.oltc.step_pu}")
    if net.oltc.daily_change_limit < 0:
        violations.append("oltc daily_change_limit must be >= 0")

    sc_buses = [sc.bus for sc in net.scs]
    pv_buses = [pv.bus for pv in net.pvs]
    for sc in net.scs:
        if not (0 <= sc.bus < n):
            violations.append(f"capacitor on unknown bus {sc.bus}")
        if sc.q_mvar <= 0:
            violations.append(f"capacitor at bus {sc.bus}: capacity must be > 0")
        h0, h1 = sc.window
        if not (0 <= h0 < h1 <= 24):
            violations.append(f"capacitor at bus {sc.bus}: empty or out-of-range window {sc.window}")
    for pv in net.pvs:
        if not (0 <= pv.bus < n):
            violations.append(f"pv on unknown bus {pv.bus}")
        if pv.s_mva <= 0:
            violations.append(f"pv at bus {pv.bus}: capacity must be > 0")
        if not (0.0 <= pv.reactive_factor <= 1.0):
            violations.append(f"pv at bus {pv.bus}: reactive factor outside [0, 1]")
    for bus_id in sorted(set(sc_buses) & set(pv_buses)):
        violations.append(f"bus {bus_id}: carries both a capacitor and a pv (disjointness required)")
    if len(set(sc_buses)) != len(sc_buses):
        violations.append("duplicate capacitor placement")
    if len(set(pv_buses)) != len(pv_buses):
        violations.append("duplicate pv placement")
    if 0 in sc_buses or 0 in pv_buses:
        violations.append("bus 0: root bus cannot carry a device")

    return violations


def network_from_dict(data: dict) -> Network:
    """Build a Network from the case JSON structure (no validation)."""
    try:
        buses = tuple(Bus(int(b["id"]), int(b["region"])) for b in data["buses"])
        branches = tuple(
            Branch(int(br["from"]), int(br["to"]), float(br["r_pu"]), float(br["x_pu"]))
            for br in data["branches"]
        )
        oltc_d = data.get("oltc", {})
        oltc = OltcSpec(
            position_count=int(oltc_d.get("positions", 11)),
            step_pu=float(oltc_d.get("step_pu", 0.006)),
            daily_change_limit=int(oltc_d.get("daily_change_limit", 4)),
        )
        scs = tuple(
            ScSpec(int(sc["bus"]), float(sc["q_mvar"]), (int(sc["window"][0]), int(sc["window"][1])))
            for sc in data.get("scs", [])
        )
        pvs = tuple(
            PvSpec(int(pv["bus"]), float(pv["s_mva"]), float(pv["lambda"]))
            for pv in data.get("pvs", [])
        )
        return Network(
            buses=buses,
            branches=branches,
            base_mva=float(data["base_mva"]),
            base_kv=float(data["base_kv"]),
            v_ref=float(data["v_ref"]),
            v_min=float(data["v_min"]),
            v_max=float(data["v_max"]),
            region_count=int(data["regions"]),
            oltc=oltc,
            scs=scs,
            pvs=pvs,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CaseError(f"malformed case data: {exc}") from exc


def network_to_dict(net: Network) -> dict:
    """Serialize a Network back to the case JSON structure."""
    return {
        "base_mva": net.base_mva,
        "base_kv": net.base_kv,
        "v_ref": net.v_ref,
        "v_min": net.v_min,
        "v_max": net.v_max,
        "regions": net.region_count,
        "buses": [{"id": b.id, "region": b.region} for b in net.buses],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r_pu": br.r_pu, "x_pu": br.x_pu}
            for br in net.branches
        ],
        "oltc": {
            "positions": net.oltc.position_count,
            "step_pu": net.oltc.step_pu,
            "daily_change_limit": net.oltc.daily_change_limit,
        },
        "scs": [
            {"bus": sc.bus, "q_mvar": sc.q_mvar, "window": [sc.window[0], sc.window[1]]}
            for sc in net.scs
        ],
        "pvs": [
            {"bus": pv.bus, "s_mva": pv.s_mva, "lambda": pv.reactive_factor} for pv in net.pvs
        ],
    }


def load_case(path: str | Path) -> Network:
    """Load and validate a feeder case file.

    Raises CaseError on parse failure or on any structural violation
    (non-radial topology, device on unknown bus, capacitor on a PV bus, ...).
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from exc
    net = network_from_dict(data)
    violations = validate_network(net)
    if violations:
        raise CaseError(f"invalid case {path}: " + "; ".join(violations))
    return net


def builtin_case_path(name: str) -> Path:
    """Path of a case file shipped with the package (e.g. 'ieee33', 'toy5')."""
    ref = resources.files("gridvvc").joinpath("cases").joinpath(f"{name}.json")
    with resources.as_file(ref) as p:
        return Path(p)


def load_builtin_case(name: str) -> Network:
    return load_case(builtin_case_path(name))
