"""Policy math, advantage estimation, update mechanics, gradient audit."""

import numpy as np
import pytest

from gridvvc.env import VoltageControlEnv, observation_dim
from gridvvc.mlp import Adam, Mlp, clip_grad_norm
from gridvvc.network import load_builtin_case
from gridvvc.ppo import (
    ActorCritic,
    PpoConfig,
    Trajectory,
    _loss_and_grads,
    compute_gae,
    gradient_check,
    ppo_update,
    pretrain,
    rollout,
)
from gridvvc.scenario import builtin_scenario, generate_day
from gridvvc.schedule import neutral_schedule


def tiny_ac(seed=0, obs_dim=4, n_act=2, lam=0.3):
    cfg = PpoConfig(hidden=(8, 8))
    return ActorCritic(obs_dim, np.full(n_act, lam), cfg, np.random.default_rng(seed)), cfg


# --- acting -----------------------------------------------------------------


def test_deterministic_zero_mean_gives_zero_action():
    ac, _ = tiny_ac()
    for w in ac.actor.weights:
        w[...] = 0.0
    action, u, _ = ac.act(np.zeros(4), deterministic=True)
    assert np.all(action == 0.0)
    assert np.all(u == 0.0)


def test_actions_strictly_inside_box():
    ac, _ = tiny_ac()
    rng = np.random.default_rng(1)
    for _ in range(500):
        action, _, _ = ac.act(rng.standard_normal(4), rng=rng)
        assert np.all(np.abs(action) < 0.3)


def test_log_prob_matches_monte_carlo_density():
    # histogram estimate of the squashed one-dimensional action density
    ac, _ = tiny_ac(seed=3, obs_dim=2, n_act=1, lam=0.3)
    obs = np.array([0.4, -1.2])
    rng = np.random.default_rng(42)
    samples = np.array([ac.act(obs, rng=rng)[0][0] for _ in range(200_000)])
    lo, hi = -0.12, 0.12
    width = 0.012
    edges = np.arange(lo, hi + width / 2, width)
    hist, _ = np.histogram(samples, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = hist / (len(samples) * width)
    x = ac.obs_norm.normalize(obs)
    for c, d in zip(centers, density):
        if d < 5.0:  # skip sparse tail bins
            continue
        u = np.arctanh(c / 0.3)
        logp = float(ac.log_prob_normalized(x, np.array([u]))[0])
        assert np.exp(logp) == pytest.approx(d, rel=0.02)


def test_non_finite_network_output_raises():
    ac, _ = tiny_ac()
    ac.actor.weights[0][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        ac.act(np.ones(4), deterministic=True)


# --- GAE --------------------------------------------------------------------


def test_gae_single_step_base_case():
    adv, ret = compute_gae(np.array([2.5]), np.array([0.0]), 0.0, 0.9, 0.95)
    assert adv[0] == pytest.approx(2.5)
    assert ret[0] == pytest.approx(2.5)


def test_gae_hand_example():
    adv, ret = compute_gae(np.array([1.0, 1.0]), np.array([0.0, 0.0]), 0.0, 0.9, 0.95)
    assert adv == pytest.approx([1.855, 1.0])
    assert ret == pytest.approx([1.855, 1.0])


def test_gae_lambda_zero_is_td_error():
    rewards = np.array([1.0, -0.5, 0.25])
    values = np.array([0.3, 0.1, -0.2])
    adv, _ = compute_gae(rewards, values, 0.0, 0.9, 0.0)
    deltas = rewards + 0.9 * np.append(values[1:], 0.0) - values
    assert adv == pytest.approx(deltas)


def test_gae_matches_direct_telescoping_sum():
    rng = np.random.default_rng(17)
    for _ in range(100):
        T = int(rng.integers(1, 17))
        rewards = rng.standard_normal(T)
        values = rng.standard_normal(T)
        terminal = float(rng.standard_normal())
        gamma = float(rng.uniform(0.5, 0.99))
        lam = float(rng.uniform(0.0, 1.0))
        adv, ret = compute_gae(rewards, values, terminal, gamma, lam)
        next_values = np.append(values[1:], terminal)
        deltas = rewards + gamma * next_values - values
        direct = np.array(
            [
                sum((gamma * lam) ** k * deltas[t + k] for k in range(T - t))
                for t in range(T)
            ]
        )
        assert np.max(np.abs(adv - direct)) < 1e-10
        assert np.max(np.abs(ret - (direct + values))) < 1e-10


# --- surrogate objective ----------------------------------------------------


def test_clipped_objective_hand_values():
    eps = 0.3
    assert min(2.0 * 1.0, np.clip(2.0, 1 - eps, 1 + eps) * 1.0) == pytest.approx(1.3)
    assert min(0.5 * -1.0, np.clip(0.5, 1 - eps, 1 + eps) * -1.0) == pytest.approx(-0.7)


def test_identity_ratio_surrogate_is_mean_advantage():
    ac, cfg = tiny_ac(seed=5)
    rng = np.random.default_rng(5)
    obs = rng.standard_normal((8, 4))
    u = rng.standard_normal((8, 2))
    adv = rng.standard_normal(8)
    ret = rng.standard_normal(8)
    logp_old = ac.log_prob_normalized(obs, u)  # ratio == 1 everywhere
    loss, _, diag = _loss_and_grads(ac, obs, u, logp_old, adv, ret, cfg)
    v, _ = ac.critic.forward(obs)
    expected = (
        -adv.mean()
        + cfg.value_coef * np.mean((v[:, 0] - ret) ** 2)
        - cfg.entropy_coef * (np.sum(ac.log_std) + 0.5 * 2 * (1 + np.log(2 * np.pi)))
    )
    assert loss == pytest.approx(expected)
    assert diag["clip_fraction"] == 0.0


def test_zero_advantage_zero_entropy_kills_actor_gradient():
    ac, _ = tiny_ac(seed=6)
    cfg = PpoConfig(hidden=(8, 8), entropy_coef=0.0)
    rng = np.random.default_rng(6)
    obs = rng.standard_normal((4, 4))
    u = rng.standard_normal((4, 2))
    logp_old = ac.log_prob_normalized(obs, u) + rng.normal(0, 0.1, 4)
    _, grads, _ = _loss_and_grads(ac, obs, u, logp_old, np.zeros(4), np.zeros(4), cfg)
    n_actor = len(ac.actor.parameters())
    for g in grads[: n_actor + 1]:  # actor weights/biases plus log_std
        assert np.all(g == 0.0)


# --- gradient audit ---------------------------------------------------------


def test_gradient_check_under_threshold():
    for seed in (0, 1, 2):
        assert gradient_check(seed=seed) < 1e-4


def test_taylor_expansion_direction():
    ac, cfg = tiny_ac(seed=9)
    rng = np.random.default_rng(9)
    obs = rng.standard_normal((4, 4))
    u = rng.standard_normal((4, 2))
    adv = rng.standard_normal(4)
    ret = rng.standard_normal(4)
    logp_old = ac.log_prob_normalized(obs, u) + rng.normal(0, 0.2, 4)
    loss0, grads, _ = _loss_and_grads(ac, obs, u, logp_old, adv, ret, cfg)
    w = ac.actor.weights[0]
    g = grads[0][1, 1]
    h = 1e-6
    w[1, 1] += h
    loss1, _, _ = _loss_and_grads(ac, obs, u, logp_old, adv, ret, cfg)
    assert (loss1 - loss0) == pytest.approx(g * h, rel=1e-3, abs=1e-12)


# --- updates ----------------------------------------------------------------


def random_trajectory(ac, rng, T=96):
    obs = rng.standard_normal((T, ac.actor.sizes[0]))
    u = rng.standard_normal((T, ac.n_actions)) * 0.5
    logp = ac.log_prob_normalized(obs, u)
    return Trajectory(
        obs=obs,
        pre_squash=u,
        actions=ac.action_bounds * np.tanh(u),
        log_probs=logp,
        rewards=-rng.uniform(0.0, 0.05, T),
        values=rng.normal(0.0, 0.1, T),
        terminal_value=0.0,
    )


def test_ppo_update_moves_params_and_reports_diagnostics():
    ac, cfg = tiny_ac(seed=11)
    rng = np.random.default_rng(11)
    traj = random_trajectory(ac, rng)
    before = [p.copy() for p in ac.parameters()]
    diag = ppo_update(ac, [traj], cfg, lr=1e-3, rng=rng)
    assert not diag["aborted"]
    assert any(not np.array_equal(b, p) for b, p in zip(before, ac.parameters()))
    assert 0.5 <= diag["ratio_median"] <= 2.0
    assert np.isfinite(diag["approx_kl"])


def test_ppo_update_aborts_on_nonfinite_without_touching_params():
    ac, cfg = tiny_ac(seed=12)
    rng = np.random.default_rng(12)
    traj = random_trajectory(ac, rng)
    traj.rewards[3] = np.nan
    before = [p.copy() for p in ac.parameters()]
    diag = ppo_update(ac, [traj], cfg, lr=1e-3, rng=rng)
    assert diag["aborted"]
    for b, p in zip(before, ac.parameters()):
        assert np.array_equal(b, p)


def test_log_std_stays_clamped():
    ac, cfg = tiny_ac(seed=13)
    rng = np.random.default_rng(13)
    for _ in range(5):
        ppo_update(ac, [random_trajectory(ac, rng)], cfg, lr=0.5, rng=rng)
    assert np.all(ac.log_std >= cfg.log_std_bounds[0])
    assert np.all(ac.log_std <= cfg.log_std_bounds[1])


# --- infrastructure ---------------------------------------------------------


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(0)
    x = [rng.standard_normal(3)]
    opt = Adam(x)
    for _ in range(2000):
        opt.step(x, [2.0 * x[0]], lr=0.05)
    assert np.max(np.abs(x[0])) < 1e-4


def test_clip_grad_norm():
    grads = [np.full(4, 3.0), np.full(2, 4.0)]
    total = clip_grad_norm(grads, 1.0)
    assert total == pytest.approx(np.sqrt(4 * 9 + 2 * 16))
    clipped = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    assert clipped == pytest.approx(1.0)


def test_mlp_forward_shapes_and_backward_orders():
    rng = np.random.default_rng(2)
    net = Mlp((3, 5, 2), rng)
    x = rng.standard_normal((7, 3))
    out, cache = net.forward(x)
    assert out.shape == (7, 2)
    grads = net.backward(cache, np.ones((7, 2)))
    assert len(grads) == 4
    assert grads[0].shape == (3, 5)
    assert grads[3].shape == (2,)


def test_checkpoint_round_trip(tmp_path):
    ac, _ = tiny_ac(seed=21)
    ac.obs_norm.update(np.array([1.0, 2.0, 3.0, 4.0]))
    ac.obs_norm.update(np.array([2.0, 1.0, 0.0, -1.0]))
    path = tmp_path / "params.npz"
    ac.save(path)
    again = ActorCritic.load(path, PpoConfig(hidden=(8, 8)))
    obs = np.array([0.3, -0.5, 1.0, 0.7])
    a0, _, _ = ac.act(obs, deterministic=True)
    a1, _, _ = again.act(obs, deterministic=True)
    assert np.array_equal(a0, a1)


# --- end-to-end on the real environment --------------------------------------


def test_rollout_collects_full_episode():
    net = load_builtin_case("ieee33")
    cfg = PpoConfig(hidden=(16, 16))
    rng = np.random.default_rng(0)
    ac = ActorCritic(observation_dim(net), np.full(6, 0.3), cfg, rng)
    day = generate_day(net, builtin_scenario("ieee33"), 30)
    env = VoltageControlEnv(net)
    traj, log = rollout(env, ac, day, neutral_schedule(3), rng, update_norm=True)
    assert traj.obs.shape == (96, observation_dim(net))
    assert np.all(np.abs(traj.actions) < 0.3)
    assert log.total_reward == pytest.approx(traj.rewards.sum())


def test_pretrain_zero_episodes_returns_initial_params():
    net = load_builtin_case("toy5")
    scen = builtin_scenario("toy5")
    cfg = PpoConfig(hidden=(8, 8))
    ac, curve = pretrain(net, scen, episodes=0, cfg=cfg, seed=0)
    fresh = ActorCritic(
        observation_dim(net), np.array([0.8]), cfg, np.random.default_rng([0, 101])
    )
    assert curve == []
    for a, b in zip(ac.parameters(), fresh.parameters()):
        assert np.array_equal(a, b)


def test_finetune_zero_episodes_keeps_params():
    from gridvvc.ppo import finetune
    from gridvvc.schedule import neutral_schedule

    net = load_builtin_case("toy5")
    scen = builtin_scenario("toy5")
    cfg = PpoConfig(hidden=(8, 8))
    ac, _ = pretrain(net, scen, episodes=2, cfg=cfg, seed=3)
    before = [p.copy() for p in ac.parameters()]
    ac, curve = finetune(
        ac, net, scen, lambda day, rng: neutral_schedule(0), episodes=0, cfg=cfg, seed=3
    )
    assert curve == []
    for b, p in zip(before, ac.parameters()):
        assert np.array_equal(b, p)
    assert ac.obs_norm.frozen


def test_pretrain_deterministic_per_seed():
    net = load_builtin_case("toy5")
    scen = builtin_scenario("toy5")
    cfg = PpoConfig(hidden=(8, 8))
    ac1, curve1 = pretrain(net, scen, episodes=3, cfg=cfg, seed=7)
    ac2, curve2 = pretrain(net, scen, episodes=3, cfg=cfg, seed=7)
    assert curve1 == curve2
    for a, b in zip(ac1.parameters(), ac2.parameters()):
        assert np.array_equal(a, b)
