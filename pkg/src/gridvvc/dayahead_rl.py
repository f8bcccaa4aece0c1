"""Day-ahead scheduling via RL instead of the advisor: the comparison
baseline where both stages are learned.

The day-ahead policy decides hour by hour with categorical heads (tap
delta down/hold/up, per-capacitor keep/switch). Grid codes are enforced
two ways at once: attempted violations are masked out of the executed
schedule (hard), and each masked attempt costs a penalty in the training
signal (soft). Penalties never reach reported metrics - those are always
recomputed from voltages alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import VoltageControlEnv, observation_dim
from .mlp import Adam, Mlp, clip_grad_norm
from .network import Network
from .ppo import ActorCritic, PpoConfig, compute_gae, rollout
from .scenario import HOURS, RegionForecast, ScenarioConfig, generate_day, make_forecast
from .schedule import DaySchedule, validate_schedule

TAP_DELTAS = (-1, 0, 1)


def day_ahead_obs_dim(net: Network) -> int:
    return (
        net.region_count * HOURS
        + HOURS
        + HOURS
        + 1
        + net.oltc.position_count
        + len(net.scs)
    )


def _day_ahead_obs(
    net: Network,
    forecast: RegionForecast,
    hour: int,
    tap: int,
    changes: int,
    sc_on: np.ndarray,
) -> np.ndarray:
    hour_onehot = np.zeros(HOURS)
    hour_onehot[hour] = 1.0
    tap_onehot = np.zeros(net.oltc.position_count)
    tap_onehot[tap + net.oltc.max_tap] = 1.0
    limit = max(net.oltc.daily_change_limit, 1)
    return np.concatenate(
        [
            forecast.region_mw.reshape(-1),
            forecast.system_mw,
            hour_onehot,
            [changes / limit],
            tap_onehot,
            sc_on.astype(float),
        ]
    )


@dataclass
class DayAheadTrajectory:
    obs: np.ndarray  # (24, dim)
    choices: np.ndarray  # (24, 1 + n_sc) int head choices
    log_probs: np.ndarray  # (24,)
    values: np.ndarray  # (24,)
    rewards: np.ndarray  # (24,) filled after the intra-day stage
    terminal_value: float = 0.0


class DayAheadPolicy:
    """Categorical actor-critic over hourly scheduling decisions."""

    def __init__(self, net: Network, cfg: PpoConfig, rng: np.random.Generator):
        self.net = net
        self.cfg = cfg
        self.n_sc = len(net.scs)
        self.head_sizes = [len(TAP_DELTAS)] + [2] * self.n_sc
        obs_dim = day_ahead_obs_dim(net)
        self.actor = Mlp((obs_dim,) + cfg.hidden + (sum(self.head_sizes),), rng, out_gain=0.01)
        self.critic = Mlp((obs_dim,) + cfg.hidden + (1,), rng, out_gain=1.0)
        self.optimizer = Adam(self.parameters())

    def parameters(self) -> list[np.ndarray]:
        return self.actor.parameters() + self.critic.parameters()

    def _head_slices(self) -> list[slice]:
        slices = []
        start = 0
        for size in self.head_sizes:
            slices.append(slice(start, start + size))
            start += size
        return slices

    def head_log_probs(self, logits: np.ndarray) -> list[np.ndarray]:
        out = []
        for sl in self._head_slices():
            z = logits[:, sl]
            z = z - z.max(axis=1, keepdims=True)
            out.append(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))
        return out

    def act(
        self, obs: np.ndarray, rng: np.random.Generator | None, deterministic: bool
    ) -> tuple[np.ndarray, float]:
        """(head choices, total log-probability) for one observation."""
        logits, _ = self.actor.forward(obs[None, :])
        choices = np.empty(len(self.head_sizes), dtype=int)
        total = 0.0
        for k, logp in enumerate(self.head_log_probs(logits)):
            probs = np.exp(logp[0])
            if deterministic:
                choice = int(np.argmax(probs))
            else:
                choice = int(rng.choice(len(probs), p=probs / probs.sum()))
            choices[k] = choice
            total += float(logp[0, choice])
        return choices, total

    def log_prob(self, obs: np.ndarray, choices: np.ndarray) -> np.ndarray:
        logits, _ = self.actor.forward(obs)
        total = np.zeros(len(obs))
        for k, logp in enumerate(self.head_log_probs(logits)):
            total += logp[np.arange(len(obs)), choices[:, k]]
        return total

    def value(self, obs: np.ndarray) -> np.ndarray:
        v, _ = self.critic.forward(np.atleast_2d(obs))
        return v[:, 0]

    def save(self, path) -> None:
        import json

        arrays: dict[str, np.ndarray] = {}
        for i, w in enumerate(self.actor.weights):
            arrays[f"actor_w{i}"] = w
            arrays[f"actor_b{i}"] = self.actor.biases[i]
        for i, w in enumerate(self.critic.weights):
            arrays[f"critic_w{i}"] = w
            arrays[f"critic_b{i}"] = self.critic.biases[i]
        meta = {"version": 1, "hidden": list(self.cfg.hidden), "n_sc": self.n_sc}
        np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)

    @classmethod
    def load(cls, path, net: Network, cfg: PpoConfig | None = None) -> "DayAheadPolicy":
        import json

        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        cfg = cfg or PpoConfig(hidden=tuple(meta["hidden"]))
        policy = cls(net, cfg, np.random.default_rng(0))
        for i in range(len(policy.actor.weights)):
            policy.actor.weights[i] = data[f"actor_w{i}"]
            policy.actor.biases[i] = data[f"actor_b{i}"]
        for i in range(len(policy.critic.weights)):
            policy.critic.weights[i] = data[f"critic_w{i}"]
            policy.critic.biases[i] = data[f"critic_b{i}"]
        policy.optimizer = Adam(policy.parameters())
        return policy


def _categorical_loss_and_grads(
    policy: DayAheadPolicy,
    obs: np.ndarray,
    choices: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    ret: np.ndarray,
    cfg: PpoConfig,
) -> tuple[float, list[np.ndarray]]:
    b = len(obs)
    logits, actor_cache = policy.actor.forward(obs)
    head_logps = policy.head_log_probs(logits)
    logp_new = np.zeros(b)
    for k, logp in enumerate(head_logps):
        logp_new += logp[np.arange(b), choices[:, k]]

    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv
    actor_loss = -float(np.minimum(unclipped, clipped).mean())
    active = (unclipped <= clipped).astype(float)
    dlogp = -(active * ratio * adv) / b

    dlogits = np.zeros_like(logits)
    entropy_total = 0.0
    for sl, logp, k in zip(policy._head_slices(), head_logps, range(len(head_logps))):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        onehot[np.arange(b), choices[:, k]] = 1.0
        dlogits[:, sl] += dlogp[:, None] * (onehot - probs)
        head_entropy = -(probs * logp).sum(axis=1)
        entropy_total += float(head_entropy.mean())
        # d(-coef * mean entropy)/dlogits
        dlogits[:, sl] += (cfg.entropy_coef / b) * probs * (logp + head_entropy[:, None])

    v, critic_cache = policy.critic.forward(obs)
    v = v[:, 0]
    value_loss = float(np.mean((v - ret) ** 2))
    dv = (cfg.value_coef * 2.0 * (v - ret) / b)[:, None]

    loss = actor_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy_total
    grads = policy.actor.backward(actor_cache, dlogits) + policy.critic.backward(critic_cache, dv)
    return loss, grads


def day_ahead_update(
    policy: DayAheadPolicy,
    traj: DayAheadTrajectory,
    cfg: PpoConfig,
    lr: float,
    rng: np.random.Generator,
) -> bool:
    """One clipped-surrogate update on a day of hourly decisions. Returns
    False (parameters untouched) if anything went non-finite."""
    adv, ret = compute_gae(traj.rewards, traj.values, traj.terminal_value, cfg.gamma, cfg.gae_lambda)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    params = policy.parameters()
    snapshot = [p.copy() for p in params]
    n = len(traj.obs)
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            loss, grads = _categorical_loss_and_grads(
                policy, traj.obs[idx], traj.choices[idx], traj.log_probs[idx],
                adv[idx], ret[idx], cfg,
            )
            if not (np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)):
                for p, s in zip(params, snapshot):
                    p[...] = s
                return False
            clip_grad_norm(grads, cfg.grad_clip)
            policy.optimizer.step(params, grads, lr)
    return True


def rollout_day_ahead(
    policy: DayAheadPolicy,
    forecast: RegionForecast,
    rng: np.random.Generator | None = None,
    stochastic: bool = False,
    carried_tap: int = 0,
    violation_penalty: float = 1.0,
) -> tuple[DaySchedule, np.ndarray, DayAheadTrajectory]:
    """Decide all 24 hours sequentially under masking.

    The policy's sampled choices are recorded as-is for training; whenever
    a choice would break a grid code it is replaced by the legal
    alternative in the executed schedule and the hour is charged
    -violation_penalty in the penalty vector. The emitted schedule is
    always valid.
    """
    net = policy.net
    oltc = net.oltc
    n_sc = policy.n_sc
    tap = carried_tap
    changes = 0
    sc_on = np.zeros(n_sc, dtype=bool)
    sc_done = np.zeros(n_sc, dtype=bool)  # one interval per day
    sc_start = [-1] * n_sc
    intervals: list[tuple[int, int] | None] = [None] * n_sc

    dim = day_ahead_obs_dim(net)
    obs_buf = np.empty((HOURS, dim))
    choice_buf = np.empty((HOURS, 1 + n_sc), dtype=int)
    logp_buf = np.empty(HOURS)
    value_buf = np.empty(HOURS)
    penalties = np.zeros(HOURS)
    taps: list[int] = []

    for hour in range(HOURS):
        obs = _day_ahead_obs(net, forecast, hour, tap, changes, sc_on)
        choices, logp = policy.act(obs, rng, deterministic=not stochastic)
        obs_buf[hour] = obs
        choice_buf[hour] = choices
        logp_buf[hour] = logp
        value_buf[hour] = float(policy.value(obs)[0])

        delta = TAP_DELTAS[choices[0]]
        if delta != 0:
            new_tap = tap + delta
            if changes >= oltc.daily_change_limit or abs(new_tap) > oltc.max_tap:
                penalties[hour] -= violation_penalty  # masked: tap holds
            else:
                tap = new_tap
                changes += 1
        taps.append(tap)

        for k, sc in enumerate(net.scs):
            w0, w1 = sc.window
            switch = choices[1 + k] == 1
            if sc_on[k]:
                must_close = hour >= w1  # window over; forced off
                if switch or must_close:
                    if must_close and not switch:
                        penalties[hour] -= violation_penalty
                    sc_on[k] = False
                    sc_done[k] = True
                    intervals[k] = (sc_start[k], hour)
            elif switch:
                if w0 <= hour < w1 and not sc_done[k]:
                    sc_on[k] = True
                    sc_start[k] = hour
                else:
                    penalties[hour] -= violation_penalty  # masked: stays off
    for k in range(n_sc):
        if sc_on[k]:
            end = min(HOURS, net.scs[k].window[1])
            intervals[k] = (sc_start[k], end)

    schedule = DaySchedule(oltc_taps=tuple(taps), sc_intervals=tuple(intervals))
    assert validate_schedule(schedule, oltc, net.scs, carried_tap) == []
    traj = DayAheadTrajectory(
        obs=obs_buf,
        choices=choice_buf,
        log_probs=logp_buf,
        values=value_buf,
        rewards=np.zeros(HOURS),
    )
    return schedule, penalties, traj


def train_pure_rl(
    net: Network,
    scenario: ScenarioConfig,
    episodes: int,
    cfg: PpoConfig,
    seed: int,
    day_pool: list[int] | None = None,
    violation_penalty: float = 1.0,
) -> tuple[DayAheadPolicy, ActorCritic, list[float]]:
    """Joint training of the two RL stages.

    Each episode: the day-ahead policy emits a schedule from the noisy
    forecast, the intra-day agent runs the day under it, the day-ahead
    return credits each hour with that hour's intra-day reward plus its
    grid-code penalties (training signal only), and both policies update.
    The reported curve is the penalty-free daily reward.
    """
    rng = np.random.default_rng([seed, 404])
    env = VoltageControlEnv(net)
    da_policy = DayAheadPolicy(net, cfg, rng)
    intra = ActorCritic(observation_dim(net), env.action_bounds, cfg, rng)
    pool = list(range(scenario.days)) if day_pool is None else list(day_pool)
    curve: list[float] = []
    from .ppo import _lr_schedule, ppo_update

    for ep in range(episodes):
        day = generate_day(net, scenario, int(rng.choice(pool)))
        forecast = make_forecast(net, day, rng, scenario.forecast_noise_sigma)
        schedule, penalties, da_traj = rollout_day_ahead(
            da_policy, forecast, rng, stochastic=True, violation_penalty=violation_penalty
        )
        traj, log = rollout(env, intra, day, schedule, rng, stochastic=True, update_norm=True)
        hour_rewards = log.rewards.reshape(HOURS, 4).sum(axis=1)
        da_traj.rewards = hour_rewards + penalties
        lr = _lr_schedule(cfg, ep, episodes)
        day_ahead_update(da_policy, da_traj, cfg, lr, rng)
        ppo_update(intra, [traj], cfg, lr, rng)
        curve.append(log.total_reward)
    return da_policy, intra, curve
