"""Intra-day control environment: 96 steps of 15 minutes under a fixed
day-ahead schedule.

Each step the agent picks a reactive setpoint fraction for every PV
inverter; the environment converts it through the inverter headroom,
applies the scheduled tap and capacitor states for the current hour,
solves the power flow, and pays the negative mean absolute voltage
deviation as reward. Observations carry the voltages produced by the
previous solve (at reset, by a zero-reactive solve), so no fixed point is
implied within a step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network
from .powerflow import assemble_injections, root_voltage_from_tap, solve_powerflow
from .scenario import HOURS, STEPS, STEPS_PER_HOUR, DayProfile
from .schedule import DaySchedule, validate_schedule


class ScheduleRejected(ValueError):
    """A schedule that fails grid-code validation is never executable."""


@dataclass(frozen=True)
class Observation:
    """Node-level measurements plus scheduled device states for one step."""

    load_p: np.ndarray  # per-bus MW
    load_q: np.ndarray  # per-bus MVAr
    v_mag: np.ndarray  # per-bus p.u., from the previous solve
    pv_p: np.ndarray  # per-PV MW
    pv_q: np.ndarray  # per-PV MVAr, as applied in the previous step
    tap_onehot: np.ndarray
    sc_status: np.ndarray
    step_fraction: float

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.load_p,
                self.load_q,
                self.v_mag,
                self.pv_p,
                self.pv_q,
                self.tap_onehot,
                self.sc_status.astype(float),
                [self.step_fraction],
            ]
        )


def observation_dim(net: Network) -> int:
    return 3 * net.n_buses + 2 * len(net.pvs) + net.oltc.position_count + len(net.scs) + 1


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool


@dataclass
class EpisodeLog:
    """Everything the day produced: voltages, rewards, and the hourly
    summaries fed back to the day-ahead side."""

    total_reward: float
    rewards: np.ndarray  # (96,)
    voltages: np.ndarray  # (96, n_buses)
    hourly_region_v: np.ndarray  # (n_regions, 24)
    hourly_system_v: np.ndarray  # (24,)
    deviation: float
    violation_rate: float
    schedule: DaySchedule


def metrics(log: EpisodeLog, v_min: float, v_max: float, v_ref: float) -> tuple[float, float]:
    """(mean |V - v_ref| over all bus-steps, % of bus-steps outside the band)."""
    v = log.voltages
    deviation = float(np.mean(np.abs(v - v_ref)))
    violated = np.count_nonzero((v < v_min) | (v > v_max))
    return deviation, 100.0 * violated / v.size


def summarize_episode(
    net: Network, voltages: np.ndarray, rewards: np.ndarray, schedule: DaySchedule
) -> EpisodeLog:
    """Build the feedback bundle from a completed day's raw voltages."""
    hourly = voltages.reshape(HOURS, STEPS_PER_HOUR, net.n_buses).mean(axis=1)
    region_v = np.empty((net.region_count, HOURS))
    for r in range(1, net.region_count + 1):
        region_v[r - 1] = hourly[:, list(net.region_buses(r))].mean(axis=1)
    log = EpisodeLog(
        total_reward=float(rewards.sum()),
        rewards=rewards,
        voltages=voltages,
        hourly_region_v=region_v,
        hourly_system_v=hourly.mean(axis=1),
        deviation=0.0,
        violation_rate=0.0,
        schedule=schedule,
    )
    log.deviation, log.violation_rate = metrics(log, net.v_min, net.v_max, net.v_ref)
    return log


class VoltageControlEnv:
    """Single-day, single-threaded environment over an immutable network.

    Run many instances concurrently for different days; one instance holds
    the episode clock and the active schedule.
    """

    def __init__(self, net: Network, pf_tol: float = 1e-8, pf_max_iterations: int = 100):
        self.net = net
        self.pf_tol = pf_tol
        self.pf_max_iterations = pf_max_iterations
        self._lam = np.array([pv.reactive_factor for pv in net.pvs])
        self._s_mva = np.array([pv.s_mva for pv in net.pvs])
        self._day: DayProfile | None = None
        self._schedule: DaySchedule | None = None
        self._t = 0
        self._last_v: np.ndarray | None = None
        self._last_pv_q = np.zeros(len(net.pvs))

    @property
    def n_actions(self) -> int:
        return len(self.net.pvs)

    @property
    def action_bounds(self) -> np.ndarray:
        return self._lam

    def _solve(self, t: int, pv_q_mvar: np.ndarray) -> np.ndarray:
        assert self._day is not None and self._schedule is not None
        hour = t // STEPS_PER_HOUR
        tap = self._schedule.tap_at(hour)
        sc_on = self._schedule.sc_states_at(hour)
        inj = assemble_injections(
            self.net,
            self._day.load_p[:, t],
            self._day.load_q[:, t],
            self._day.pv_p[:, t],
            pv_q_mvar,
            sc_on,
        )
        v_root = root_voltage_from_tap(tap, self.net.oltc, self.net.v_ref)
        sol = solve_powerflow(self.net, inj, v_root, self.pf_tol, self.pf_max_iterations)
        return sol.v_mag

    def _observe(self, t: int) -> Observation:
        assert self._day is not None and self._schedule is not None
        t_meas = min(t, STEPS - 1)
        hour = t_meas // STEPS_PER_HOUR
        onehot = np.zeros(self.net.oltc.position_count)
        onehot[self._schedule.tap_at(hour) + self.net.oltc.max_tap] = 1.0
        return Observation(
            load_p=self._day.load_p[:, t_meas].copy(),
            load_q=self._day.load_q[:, t_meas].copy(),
            v_mag=self._last_v.copy(),
            pv_p=self._day.pv_p[:, t_meas].copy(),
            pv_q=self._last_pv_q.copy(),
            tap_onehot=onehot,
            sc_status=self._schedule.sc_states_at(hour),
            step_fraction=t / STEPS,
        )

    def reset(
        self, day: DayProfile, schedule: DaySchedule, carried_tap: int = 0
    ) -> Observation:
        violations = validate_schedule(schedule, self.net.oltc, self.net.scs, carried_tap)
        if violations:
            raise ScheduleRejected("; ".join(violations))
        self._day = day
        self._schedule = schedule
        self._t = 0
        self._last_pv_q = np.zeros(self.n_actions)
        self._last_v = self._solve(0, self._last_pv_q)
        return self._observe(0)

    def reactive_setpoints(self, action: np.ndarray, t: int | None = None) -> np.ndarray:
        """MVAr commanded by an action at the current step: the action is a
        signed fraction of the inverter headroom sqrt(S^2 - P^2)."""
        assert self._day is not None
        t = self._t if t is None else t
        p_now = self._day.pv_p[:, t]
        headroom = np.sqrt(np.maximum(self._s_mva**2 - p_now**2, 0.0))
        return action * headroom

    def step(self, action: np.ndarray) -> StepResult:
        if self._day is None or self._t >= STEPS:
            raise RuntimeError("no active episode; call reset first")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.n_actions,):
            raise ValueError(f"action must have shape ({self.n_actions},), got {action.shape}")
        over = np.abs(action) - self._lam
        if np.any(over > 1e-9):
            raise ValueError(f"action outside +-lambda bounds by {over.max():.3g}")
        action = np.clip(action, -self._lam, self._lam)

        t = self._t
        pv_q = self.reactive_setpoints(action, t)
        self._last_v = self._solve(t, pv_q)
        self._last_pv_q = pv_q
        reward = -float(np.mean(np.abs(self._last_v - self.net.v_ref)))
        self._t = t + 1
        done = self._t >= STEPS
        return StepResult(observation=self._observe(self._t), reward=reward, done=done)

    def run_day(
        self,
        policy,
        day: DayProfile,
        schedule: DaySchedule,
        carried_tap: int = 0,
    ) -> EpisodeLog:
        """Roll a full day under `policy(observation) -> action` and summarize."""
        obs = self.reset(day, schedule, carried_tap)
        voltages = np.empty((STEPS, self.net.n_buses))
        rewards = np.empty(STEPS)
        for t in range(STEPS):
            result = self.step(np.asarray(policy(obs), dtype=float))
            voltages[t] = self._last_v
            rewards[t] = result.reward
            obs = result.observation
        return summarize_episode(self.net, voltages, rewards, schedule)


def zero_policy(obs: Observation) -> np.ndarray:
    """No reactive support: the passive baseline's intra-day 'controller'."""
    return np.zeros(len(obs.pv_p))
