"""Steady-state AC power flow for radial feeders.

The production solver is a backward/forward sweep specialized to trees:
branch currents are accumulated leaf-to-root from the nodal injection
currents, then voltages propagate root-to-leaf across branch impedances.
Convergence is judged on the bus-injection mismatch (active and reactive
power balance at every non-root bus), so a converged solution satisfies
the nodal power balance equations to the stated tolerance regardless of
the sweep internals.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .network import Network, OltcSpec, feeder_order


class PowerFlowError(RuntimeError):
    """Non-convergence or voltage collapse."""


@dataclass(frozen=True)
class Injections:
    """Net nodal injections in p.u. (generation positive, load negative).

    Root entries are carried but ignored by the solver: the root bus is the
    slack that balances the feeder.
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError(f"p/q must be equal-length vectors, got {p.shape} / {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")


@dataclass(frozen=True)
class PfSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    iterations: int
    max_mismatch: float
    converged: bool


def root_voltage_from_tap(tap: int, oltc: OltcSpec, v_ref: float) -> float:
    """Root-bus voltage setpoint for a tap position: v_ref + tap * step."""
    if abs(tap) > oltc.max_tap:
        raise ValueError(f"tap {tap} outside range +-{oltc.max_tap}")
    return v_ref + tap * oltc.step_pu


def assemble_injections(
    net: Network,
    loads_p_mw: np.ndarray,
    loads_q_mvar: np.ndarray,
    pv_p_mw: np.ndarray,
    pv_q_mvar: np.ndarray,
    sc_on: np.ndarray,
) -> Injections:
    """Combine loads, PV output, and capacitor states into p.u. injections.

    Load buses draw power (negative injection); PV buses add their active
    and reactive output; a committed capacitor adds its full MVAr rating.
    """
    n = net.n_buses
    loads_p_mw = np.asarray(loads_p_mw, dtype=float)
    loads_q_mvar = np.asarray(loads_q_mvar, dtype=float)
    pv_p_mw = np.asarray(pv_p_mw, dtype=float)
    pv_q_mvar = np.asarray(pv_q_mvar, dtype=float)
    sc_on = np.asarray(sc_on, dtype=bool)
    if loads_p_mw.shape != (n,) or loads_q_mvar.shape != (n,):
        raise ValueError(f"load vectors must have length {n}")
    if pv_p_mw.shape != (len(net.pvs),) or pv_q_mvar.shape != (len(net.pvs),):
        raise ValueError(f"pv vectors must have length {len(net.pvs)}")
    if sc_on.shape != (len(net.scs),):
        raise ValueError(f"sc_on must have length {len(net.scs)}")

    p_mw = -loads_p_mw.copy()
    q_mvar = -loads_q_mvar.copy()
    for k, pv in enumerate(net.pvs):
        p_mw[pv.bus] += pv_p_mw[k]
        q_mvar[pv.bus] += pv_q_mvar[k]
    for k, sc in enumerate(net.scs):
        if sc_on[k]:
            q_mvar[sc.bus] += sc.q_mvar
    return Injections(p=p_mw / net.base_mva, q=q_mvar / net.base_mva)


@functools.lru_cache(maxsize=16)
def _admittance_matrix(net: Network) -> np.ndarray:
    n = net.n_buses
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        yb = 1.0 / complex(br.r_pu, br.x_pu)
        y[br.from_bus, br.from_bus] += yb
        y[br.to_bus, br.to_bus] += yb
        y[br.from_bus, br.to_bus] -= yb
        y[br.to_bus, br.from_bus] -= yb
    return y


@functools.lru_cache(maxsize=16)
def _sweep_topology(net: Network) -> tuple[tuple[int, ...], tuple[int, ...], np.ndarray]:
    """(bfs order, parent pointers, branch impedance keyed by child bus)."""
    order, parent = feeder_order(net)
    if len(order) != net.n_buses or len(net.branches) != net.n_buses - 1:
        raise PowerFlowError("network is not a radial feeder")
    z = np.zeros(net.n_buses, dtype=complex)
    for br in net.branches:
        child = br.to_bus if parent[br.to_bus] == br.from_bus else br.from_bus
        z[child] = complex(br.r_pu, br.x_pu)
    return tuple(order), tuple(parent), z


def _power_mismatch(y: np.ndarray, v: np.ndarray, inj: Injections) -> float:
    """Max absolute P/Q balance error over non-root buses, complex form."""
    s_calc = v * np.conj(y @ v)
    dp = s_calc.real - inj.p
    dq = s_calc.imag - inj.q
    err = np.maximum(np.abs(dp), np.abs(dq))
    return float(err[1:].max()) if err.size > 1 else 0.0


def solve_powerflow(
    net: Network,
    inj: Injections,
    v_root: float,
    tol: float = 1e-8,
    max_iterations: int = 100,
) -> PfSolution:
    """Backward/forward sweep solve with the root held at v_root, angle 0.

    Raises PowerFlowError on divergence (any |V| below 0.5 p.u.) or if the
    mismatch is still above tol after max_iterations sweeps.
    """
    if not (0.8 <= v_root <= 1.2):
        raise ValueError(f"root voltage {v_root} outside the 0.8..1.2 sanity band")
    n = net.n_buses
    if inj.p.shape != (n,):
        raise ValueError(f"injection vectors must have length {n}")
    order, parent, z = _sweep_topology(net)
    y = _admittance_matrix(net)
    rev = order[:0:-1]  # leaves first, root excluded

    v = np.full(n, complex(v_root), dtype=complex)
    s = inj.p + 1j * inj.q
    mismatch = np.inf
    for it in range(1, max_iterations + 1):
        # Backward: branch current into each bus = draw of its whole subtree.
        flow = -np.conj(s / v)
        flow[0] = 0.0
        for i in rev:
            flow[parent[i]] += flow[i]
        # Forward: voltage drop across each branch.
        v[0] = complex(v_root)
        for i in order[1:]:
            v[i] = v[parent[i]] - z[i] * flow[i]
        vm = np.abs(v)
        if np.any(vm < 0.5) or not np.all(np.isfinite(vm)):
            raise PowerFlowError(f"voltage collapse after {it} sweeps (min |V|={vm.min():.3g})")
        mismatch = _power_mismatch(y, v, inj)
        if mismatch <= tol:
            return PfSolution(
                v_mag=vm, v_ang=np.angle(v), iterations=it, max_mismatch=mismatch, converged=True
            )
    raise PowerFlowError(
        f"no convergence after {max_iterations} sweeps (mismatch {mismatch:.3e} > {tol:.1e})"
    )


def residual(net: Network, sol: PfSolution, inj: Injections) -> float:
    """Max bus-injection mismatch of a candidate solution, in p.u.

    Evaluates the polar power-balance equations
        P_i = V_i * sum_j V_j (G_ij cos th_ij + B_ij sin th_ij)
        Q_i = V_i * sum_j V_j (G_ij sin th_ij - B_ij cos th_ij)
    at every non-root bus, independent of how the solution was produced.
    """
    y = _admittance_matrix(net)
    g, b = y.real, y.imag
    vm = np.asarray(sol.v_mag, dtype=float)
    th = np.asarray(sol.v_ang, dtype=float)
    if vm.shape != (net.n_buses,) or th.shape != (net.n_buses,):
        raise ValueError("solution dimensions do not match the network")
    dth = th[:, None] - th[None, :]
    cos_m, sin_m = np.cos(dth), np.sin(dth)
    p_calc = vm * ((g * cos_m + b * sin_m) @ vm)
    q_calc = vm * ((g * sin_m - b * cos_m) @ vm)
    err = np.maximum(np.abs(p_calc - inj.p), np.abs(q_calc - inj.q))
    return float(err[1:].max()) if err.size > 1 else 0.0
