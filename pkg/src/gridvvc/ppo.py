"""Intra-day PV reactive control agent: actor-critic, clipped-surrogate
policy optimization, and the exploration-then-adaptation training pipeline.

The policy is a squashed Gaussian: the actor outputs a mean, a free
per-dimension log-std sets exploration, and tanh maps the pre-squash
sample into the signed reactive-fraction box, with the change-of-variables
term included in the log-density. All gradients are hand-derived (see
gradient_check for the finite-difference audit).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import EpisodeLog, VoltageControlEnv, observation_dim, summarize_episode
from .mlp import Adam, Mlp, RunningNorm, clip_grad_norm
from .network import Network
from .scenario import STEPS, DayProfile, ScenarioConfig, generate_day
from .schedule import DaySchedule, random_schedule

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.9
    # short advantage horizon: an action only moves the solve it feeds, and
    # upcoming schedule changes are invisible to the critic, so long GAE
    # horizons mostly inject schedule-surprise noise into the advantages
    gae_lambda: float = 0.2
    clip_epsilon: float = 0.3
    update_epochs: int = 4
    minibatch_size: int = 32
    lr_explore_start: float = 1e-4
    lr_explore_end: float = 1e-5
    lr_adapt: float = 1e-5
    days_per_update: int = 8
    adapt_days_per_update: int = 2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    critic_lr_scale: float = 10.0
    grad_clip: float = 0.5
    hidden: tuple[int, int] = (256, 256)
    init_log_std: float = -0.5
    log_std_bounds: tuple[float, float] = (-5.0, 2.0)

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must be in [0, 1)")
        if self.clip_epsilon <= 0.0:
            raise ValueError("clip_epsilon must be > 0")
        if self.update_epochs < 1:
            raise ValueError("update_epochs must be >= 1")


@dataclass
class Trajectory:
    """One rollout as seen by the learner: normalized observations, the
    pre-squash samples, and behavior-policy log-probabilities."""

    obs: np.ndarray  # (T, obs_dim), normalized
    pre_squash: np.ndarray  # (T, n_act)
    actions: np.ndarray  # (T, n_act)
    log_probs: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    terminal_value: float = 0.0


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class ActorCritic:
    """Gaussian-tanh actor plus value critic over normalized observations."""

    def __init__(
        self,
        obs_dim: int,
        action_bounds: np.ndarray,
        cfg: PpoConfig,
        rng: np.random.Generator,
    ):
        n_act = len(action_bounds)
        self.cfg = cfg
        self.action_bounds = np.asarray(action_bounds, dtype=float)
        self.actor = Mlp((obs_dim,) + cfg.hidden + (n_act,), rng, out_gain=0.01)
        self.critic = Mlp((obs_dim,) + cfg.hidden + (1,), rng, out_gain=1.0)
        self.log_std = np.full(n_act, cfg.init_log_std)
        self.obs_norm = RunningNorm(obs_dim)
        self._reset_optimizers()

    def _reset_optimizers(self) -> None:
        self.actor_opt = Adam(self.actor.parameters() + [self.log_std])
        self.critic_opt = Adam(self.critic.parameters())

    @property
    def n_actions(self) -> int:
        return len(self.action_bounds)

    def parameters(self) -> list[np.ndarray]:
        return self.actor.parameters() + [self.log_std] + self.critic.parameters()

    def _gaussian_log_prob(self, u: np.ndarray, mu: np.ndarray) -> np.ndarray:
        std = np.exp(self.log_std)
        z = (u - mu) / std
        return (-0.5 * z**2 - self.log_std - 0.5 * LOG_2PI).sum(axis=-1)

    def log_prob_normalized(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Log-density of the squashed action identified by pre-squash u."""
        mu, _ = self.actor.forward(np.atleast_2d(x))
        gauss = self._gaussian_log_prob(np.atleast_2d(u), mu)
        corr = (_log_one_minus_tanh_sq(np.atleast_2d(u)) + np.log(self.action_bounds)).sum(axis=-1)
        return gauss - corr

    def act_normalized(
        self,
        x: np.ndarray,
        rng: np.random.Generator | None = None,
        deterministic: bool = False,
    ) -> tuple[np.ndarray, np.ndarray, float]:
        """(action, pre-squash sample, log-probability) for one normalized obs."""
        mu, _ = self.actor.forward(x[None, :])
        mu = mu[0]
        if not np.all(np.isfinite(mu)):
            raise FloatingPointError("actor produced a non-finite mean")
        if deterministic:
            u = mu
        else:
            if rng is None:
                raise ValueError("stochastic mode requires an rng")
            u = mu + np.exp(self.log_std) * rng.standard_normal(self.n_actions)
        action = self.action_bounds * np.tanh(u)
        logp = float(self.log_prob_normalized(x, u)[0])
        return action, u, logp

    def act(
        self,
        obs_vector: np.ndarray,
        rng: np.random.Generator | None = None,
        deterministic: bool = False,
    ) -> tuple[np.ndarray, np.ndarray, float]:
        return self.act_normalized(self.obs_norm.normalize(obs_vector), rng, deterministic)

    def value_normalized(self, x: np.ndarray) -> float:
        v, _ = self.critic.forward(x[None, :])
        return float(v[0, 0])

    def policy(self, deterministic: bool = True, rng: np.random.Generator | None = None):
        """Adapter for env.run_day: observation -> action."""

        def _policy(obs):
            action, _, _ = self.act(obs.vector(), rng=rng, deterministic=deterministic)
            return action

        return _policy

    # --- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays: dict[str, np.ndarray] = {"log_std": self.log_std}
        for i, w in enumerate(self.actor.weights):
            arrays[f"actor_w{i}"] = w
            arrays[f"actor_b{i}"] = self.actor.biases[i]
        for i, w in enumerate(self.critic.weights):
            arrays[f"critic_w{i}"] = w
            arrays[f"critic_b{i}"] = self.critic.biases[i]
        meta = {
            "version": 1,
            "obs_dim": self.actor.sizes[0],
            "hidden": list(self.cfg.hidden),
            "action_bounds": self.action_bounds.tolist(),
            "obs_norm": self.obs_norm.state(),
        }
        np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)

    @classmethod
    def load(cls, path: str | Path, cfg: PpoConfig | None = None) -> "ActorCritic":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        cfg = cfg or PpoConfig(hidden=tuple(meta["hidden"]))
        ac = cls(
            meta["obs_dim"],
            np.array(meta["action_bounds"]),
            cfg,
            np.random.default_rng(0),
        )
        for i in range(len(ac.actor.weights)):
            ac.actor.weights[i] = data[f"actor_w{i}"]
            ac.actor.biases[i] = data[f"actor_b{i}"]
        for i in range(len(ac.critic.weights)):
            ac.critic.weights[i] = data[f"critic_w{i}"]
            ac.critic.biases[i] = data[f"critic_b{i}"]
        ac.log_std = data["log_std"]
        ac.obs_norm = RunningNorm.from_state(meta["obs_norm"])
        ac._reset_optimizers()
        return ac

    def clone(self) -> "ActorCritic":
        twin = ActorCritic(self.actor.sizes[0], self.action_bounds, self.cfg, np.random.default_rng(0))
        twin.actor.weights = [w.copy() for w in self.actor.weights]
        twin.actor.biases = [b.copy() for b in self.actor.biases]
        twin.critic.weights = [w.copy() for w in self.critic.weights]
        twin.critic.biases = [b.copy() for b in self.critic.biases]
        twin.log_std = self.log_std.copy()
        twin.obs_norm = RunningNorm.from_state(self.obs_norm.state())
        twin._reset_optimizers()
        return twin


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    terminal_value: float,
    gamma: float,
    gae_lambda: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted advantage estimates and value targets.

    delta_t = r_t + gamma*V_{t+1} - V_t, advantages are the discounted
    (gamma*lambda) tail sums of the deltas, and returns = advantages + V.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.append(values[1:], terminal_value)
    deltas = rewards + gamma * next_values - values
    advantages = np.empty_like(deltas)
    tail = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        tail = deltas[t] + gamma * gae_lambda * tail
        advantages[t] = tail
    return advantages, advantages + values


def _loss_and_grads(
    ac: ActorCritic,
    obs: np.ndarray,
    u: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    ret: np.ndarray,
    cfg: PpoConfig,
) -> tuple[float, list[np.ndarray], dict]:
    """Full loss (clipped surrogate + value error - entropy bonus) and its
    analytic gradients wrt every parameter, in parameters() order."""
    b = len(obs)
    mu, actor_cache = ac.actor.forward(obs)
    std = np.exp(ac.log_std)
    z = (u - mu) / std
    logp_gauss = (-0.5 * z**2 - ac.log_std - 0.5 * LOG_2PI).sum(axis=1)
    corr = (_log_one_minus_tanh_sq(u) + np.log(ac.action_bounds)).sum(axis=1)
    logp_new = logp_gauss - corr

    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv
    surrogate = np.minimum(unclipped, clipped)
    actor_loss = -float(surrogate.mean())

    # gradient flows only where the unclipped branch attains the min
    active = (unclipped <= clipped).astype(float)
    dlogp = -(active * ratio * adv) / b  # dLoss/dlogp_new, (b,)
    dmu = dlogp[:, None] * (z / std)
    dlog_std = (dlogp[:, None] * (z**2 - 1.0)).sum(axis=0)

    entropy = float(np.sum(ac.log_std) + 0.5 * ac.n_actions * (1.0 + LOG_2PI))
    dlog_std -= cfg.entropy_coef  # d(-coef*entropy)/dlog_std = -coef per dim

    v, critic_cache = ac.critic.forward(obs)
    v = v[:, 0]
    value_loss = float(np.mean((v - ret) ** 2))
    dv = (cfg.value_coef * 2.0 * (v - ret) / b)[:, None]

    loss = actor_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    grads = ac.actor.backward(actor_cache, dmu) + [dlog_std] + ac.critic.backward(critic_cache, dv)
    diag = {
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_epsilon)),
        "approx_kl": float(np.mean(logp_old - logp_new)),
    }
    return loss, grads, diag


def ppo_update(
    ac: ActorCritic,
    trajectories: list[Trajectory],
    cfg: PpoConfig,
    lr: float,
    rng: np.random.Generator,
) -> dict:
    """Several epochs of clipped-surrogate minibatch ascent on a batch of
    rollouts. Aborts without touching parameters if anything goes
    non-finite; returns diagnostics either way."""
    if not trajectories:
        raise ValueError("empty trajectory batch")
    obs = np.concatenate([t.obs for t in trajectories])
    u = np.concatenate([t.pre_squash for t in trajectories])
    logp_old = np.concatenate([t.log_probs for t in trajectories])
    adv_parts, ret_parts = [], []
    for t in trajectories:
        a, r = compute_gae(t.rewards, t.values, t.terminal_value, cfg.gamma, cfg.gae_lambda)
        adv_parts.append(a)
        ret_parts.append(r)
    adv = np.concatenate(adv_parts)
    ret = np.concatenate(ret_parts)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    params = ac.parameters()
    snapshot = [p.copy() for p in params]
    n = len(obs)
    clip_fractions: list[float] = []
    kls: list[float] = []
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            loss, grads, diag = _loss_and_grads(
                ac, obs[idx], u[idx], logp_old[idx], adv[idx], ret[idx], cfg
            )
            if not (np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)):
                for p, s in zip(params, snapshot):
                    p[...] = s
                return {"aborted": True, "clip_fraction": np.nan, "approx_kl": np.nan}
            clip_grad_norm(grads, cfg.grad_clip)
            n_actor = len(ac.actor.parameters()) + 1
            ac.actor_opt.step(
                ac.actor.parameters() + [ac.log_std], grads[:n_actor], lr
            )
            ac.critic_opt.step(
                ac.critic.parameters(), grads[n_actor:], lr * cfg.critic_lr_scale
            )
            np.clip(ac.log_std, *cfg.log_std_bounds, out=ac.log_std)
            clip_fractions.append(diag["clip_fraction"])
            kls.append(diag["approx_kl"])
    final_logp = ac.log_prob_normalized(obs, u)
    ratio = np.exp(final_logp - logp_old)
    return {
        "aborted": False,
        "clip_fraction": float(np.mean(clip_fractions)),
        "approx_kl": float(np.mean(kls)),
        "ratio_median": float(np.median(ratio)),
    }


def gradient_check(
    seed: int = 0,
    obs_dim: int = 3,
    n_actions: int = 2,
    batch: int = 4,
    hidden: tuple[int, int] = (2, 2),
    fd_step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central finite-difference
    gradients of the full loss on a tiny network."""
    rng = np.random.default_rng(seed)
    cfg = PpoConfig(hidden=hidden)
    ac = ActorCritic(obs_dim, np.full(n_actions, 0.3), cfg, rng)
    obs = rng.standard_normal((batch, obs_dim))
    u = rng.standard_normal((batch, n_actions))
    adv = rng.standard_normal(batch)
    ret = rng.standard_normal(batch)
    logp_old = ac.log_prob_normalized(obs, u) + rng.normal(0.0, 0.2, size=batch)
    # keep every sample away from the clip kinks so the FD probe stays on
    # one side of the min(); the kink set has measure zero but fd_step is not
    for _ in range(50):
        ratio = np.exp(ac.log_prob_normalized(obs, u) - logp_old)
        near = (np.abs(ratio - (1.0 - cfg.clip_epsilon)) < 1e-3) | (
            np.abs(ratio - (1.0 + cfg.clip_epsilon)) < 1e-3
        )
        if not near.any():
            break
        logp_old[near] += 3e-3

    _, grads, _ = _loss_and_grads(ac, obs, u, logp_old, adv, ret, cfg)

    def loss_at() -> float:
        value, _, _ = _loss_and_grads(ac, obs, u, logp_old, adv, ret, cfg)
        return value

    max_rel = 0.0
    for p, g in zip(ac.parameters(), grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + fd_step
            up = loss_at()
            flat_p[k] = orig - fd_step
            down = loss_at()
            flat_p[k] = orig
            fd = (up - down) / (2.0 * fd_step)
            denom = max(1e-8, abs(fd) + abs(flat_g[k]))
            max_rel = max(max_rel, abs(fd - flat_g[k]) / denom)
    return max_rel


def rollout(
    env: VoltageControlEnv,
    ac: ActorCritic,
    day: DayProfile,
    schedule: DaySchedule,
    rng: np.random.Generator | None,
    stochastic: bool = True,
    update_norm: bool = False,
) -> tuple[Trajectory, EpisodeLog]:
    """Roll one day, recording the learner's view plus the episode summary."""
    obs = env.reset(day, schedule)
    n = env.net.n_buses
    obs_buf = np.empty((STEPS, observation_dim(env.net)))
    u_buf = np.empty((STEPS, ac.n_actions))
    a_buf = np.empty((STEPS, ac.n_actions))
    logp_buf = np.empty(STEPS)
    val_buf = np.empty(STEPS)
    rew_buf = np.empty(STEPS)
    voltages = np.empty((STEPS, n))
    for t in range(STEPS):
        raw = obs.vector()
        if update_norm:
            ac.obs_norm.update(raw)
        x = ac.obs_norm.normalize(raw)
        action, u, logp = ac.act_normalized(x, rng=rng, deterministic=not stochastic)
        result = env.step(action)
        obs_buf[t] = x
        u_buf[t] = u
        a_buf[t] = action
        logp_buf[t] = logp
        val_buf[t] = ac.value_normalized(x)
        rew_buf[t] = result.reward
        voltages[t] = result.observation.v_mag
        obs = result.observation
    traj = Trajectory(
        obs=obs_buf,
        pre_squash=u_buf,
        actions=a_buf,
        log_probs=logp_buf,
        rewards=rew_buf,
        values=val_buf,
        terminal_value=0.0,
    )
    return traj, summarize_episode(env.net, voltages, rew_buf, schedule)


def _lr_schedule(cfg: PpoConfig, episode: int, episodes: int) -> float:
    if episodes <= 1:
        return cfg.lr_explore_start
    frac = episode / (episodes - 1)
    return cfg.lr_explore_start + frac * (cfg.lr_explore_end - cfg.lr_explore_start)


def pretrain(
    net: Network,
    scenario: ScenarioConfig,
    episodes: int,
    cfg: PpoConfig,
    seed: int,
    day_pool: list[int] | None = None,
    schedule_source=None,
) -> tuple[ActorCritic, list[float]]:
    """Exploration stage: random day-ahead schedules (or a caller-supplied
    source taking the episode rng), decaying learning rate.

    Returns the trained agent and the per-episode total-reward curve.
    """
    rng = np.random.default_rng([seed, 101])
    env = VoltageControlEnv(net)
    ac = ActorCritic(observation_dim(net), env.action_bounds, cfg, rng)
    pool = list(range(scenario.days)) if day_pool is None else list(day_pool)
    curve: list[float] = []
    batch: list[Trajectory] = []
    for ep in range(episodes):
        day = generate_day(net, scenario, int(rng.choice(pool)))
        if schedule_source is None:
            sched = random_schedule(rng, net.oltc, net.scs)
        else:
            sched = schedule_source(rng)
        traj, log = rollout(env, ac, day, sched, rng, stochastic=True, update_norm=True)
        batch.append(traj)
        curve.append(log.total_reward)
        if len(batch) >= cfg.days_per_update or ep == episodes - 1:
            ppo_update(ac, batch, cfg, _lr_schedule(cfg, ep, episodes), rng)
            batch = []
    return ac, curve


def finetune(
    ac: ActorCritic,
    net: Network,
    scenario: ScenarioConfig,
    schedule_source,
    episodes: int,
    cfg: PpoConfig,
    seed: int,
    day_pool: list[int] | None = None,
) -> tuple[ActorCritic, list[float]]:
    """Adaptation stage: schedules come from the frozen day-ahead policy,
    constant learning rate, observation scaling frozen.

    schedule_source: (DayProfile, rng) -> DaySchedule.
    """
    rng = np.random.default_rng([seed, 202])
    env = VoltageControlEnv(net)
    ac.obs_norm.frozen = True
    pool = list(range(scenario.days)) if day_pool is None else list(day_pool)
    curve: list[float] = []
    batch: list[Trajectory] = []
    for ep in range(episodes):
        day = generate_day(net, scenario, int(rng.choice(pool)))
        sched = schedule_source(day, rng)
        traj, log = rollout(env, ac, day, sched, rng, stochastic=True, update_norm=False)
        batch.append(traj)
        curve.append(log.total_reward)
        if len(batch) >= cfg.adapt_days_per_update or ep == episodes - 1:
            ppo_update(ac, batch, cfg, cfg.lr_adapt, rng)
            batch = []
    return ac, curve
