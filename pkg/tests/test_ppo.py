import copy
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from adamimic.ppo import (
    ActorCritic,
    EpisodeTracker,
    PPOConfig,
    RolloutBatch,
    clipped_surrogate,
    collect_rollouts,
    compute_gae,
    gaussian_policy_eval,
    ppo_update,
)
from adamimic.reference import standing_reference
from adamimic.rewards import RewardConfig, WeightStrategy, combine
from adamimic.sim.env import BipedEnv, Command
from adamimic.sim.model import RobotModel, SimConfig
from oracles import discounted_return_oracle, gae_oracle, gaussian_logpdf_oracle

GRID = [0.0, 0.5, 0.95, 1.0]


def small_policy(obs_dim=5, act_dim=3, hidden=(4, 4), seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    pol = ActorCritic(obs_dim, act_dim, hidden, init_std=0.5).to(dtype)
    with torch.no_grad():
        # undo the small-output initialisation so every layer carries gradient
        pol.actor[-1].weight.normal_(0, 0.5)
        pol.log_std.copy_(torch.tensor([-0.3, 0.1, -0.6], dtype=dtype)[:act_dim])
    return pol


def fake_batch(pol, n=64, seed=1, adv=None):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, 1, pol.obs_dim))
    act, logp = gaussian_policy_eval(pol, obs.reshape(n, -1), "sample", torch.Generator().manual_seed(seed))
    a = rng.normal(size=(n, 1)) if adv is None else np.asarray(adv, dtype=float).reshape(n, 1)
    b = RolloutBatch(obs, act.reshape(n, 1, -1), logp.reshape(n, 1), np.zeros((n, 1)), np.zeros((n, 1)),
                     np.zeros((n, 1), dtype=bool))
    b.advantages = a
    b.returns = rng.normal(size=(n, 1))
    return b


def test_mean_mode_deterministic_and_density():
    pol = small_policy()
    obs = np.random.default_rng(0).normal(size=(7, 5))
    a1, lp1 = gaussian_policy_eval(pol, obs, "mean")
    a2, _ = gaussian_policy_eval(pol, obs, "mean")
    assert np.array_equal(a1, a2)
    std = pol.std().detach().numpy()
    want = -np.log(std).sum() - 3 / 2 * math.log(2 * math.pi)
    assert np.max(np.abs(lp1 - want)) <= 1e-12


def test_sample_density_oracle():
    pol = small_policy()
    obs = np.random.default_rng(3).normal(size=(20, 5))
    act, lp = gaussian_policy_eval(pol, obs, "sample", torch.Generator().manual_seed(0))
    mean, _ = gaussian_policy_eval(pol, obs, "mean")
    std = pol.std().detach().numpy()
    for i in range(20):
        assert abs(lp[i] - gaussian_logpdf_oracle(act[i], mean[i], std)) <= 1e-10


def test_policy_input_check():
    with pytest.raises(ValueError):
        gaussian_policy_eval(small_policy(), np.zeros((2, 4)), "mean")
    with pytest.raises(ValueError):
        gaussian_policy_eval(small_policy(), np.zeros((2, 5)), "greedy")


@pytest.mark.parametrize("gamma", GRID)
@pytest.mark.parametrize("lam", GRID)
def test_gae_matches_oracle(gamma, lam):
    rng = np.random.default_rng(int(gamma * 100 + lam * 10))
    for _ in range(5):
        r, v = rng.normal(size=10), rng.normal(size=10)
        d = rng.random(10) < 0.2
        boot = rng.normal()
        adv, ret = compute_gae(r, v, d, boot, gamma, lam)
        want = gae_oracle(r.tolist(), v.tolist(), d.astype(float).tolist(), boot, gamma, lam)
        assert np.max(np.abs(adv - want)) <= 1e-10
        assert np.array_equal(ret, adv + v)


def test_gae_special_cases():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=10), rng.normal(size=10)
    boot, gamma = 0.7, 0.95
    no_done = np.zeros(10, dtype=bool)
    adv, _ = compute_gae(r, v, no_done, boot, gamma, 0.0)
    v_next = np.append(v[1:], boot)
    assert np.array_equal(adv, r + gamma * v_next - v)
    adv, _ = compute_gae(r, v, no_done, boot, gamma, 1.0)
    for t in range(10):
        assert abs(adv[t] - discounted_return_oracle(r, v, boot, gamma, t)) <= 1e-10
    d = no_done.copy()
    d[4] = True
    a1, _ = compute_gae(r, v, d, boot, gamma, 0.95)
    r2 = r.copy()
    r2[5:] += 10
    a2, _ = compute_gae(r2, v, d, boot + 3, gamma, 0.95)
    assert np.array_equal(a1[:5], a2[:5])


def test_gae_batched_rows_independent():
    rng = np.random.default_rng(4)
    r, v = rng.normal(size=(3, 10)), rng.normal(size=(3, 10))
    d = rng.random((3, 10)) < 0.2
    boot = rng.normal(size=3)
    adv, _ = compute_gae(r, v, d, boot, 0.99, 0.95)
    for i in range(3):
        assert np.allclose(adv[i], compute_gae(r[i], v[i], d[i], boot[i], 0.99, 0.95)[0], atol=0, rtol=0)


def test_zero_advantage_leaves_policy_unchanged():
    pol = small_policy()
    before = copy.deepcopy(pol.state_dict())
    batch = fake_batch(pol, adv=np.zeros(64))
    cfg = PPOConfig(value_coef=0.0, entropy_coef=0.0, epochs=2, minibatches=2)
    stats = ppo_update(batch, pol, torch.optim.Adam(pol.parameters(), lr=1e-2), cfg, torch.Generator().manual_seed(0))
    assert not stats["aborted"]
    for k, v in pol.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_surrogate_gradient_is_policy_gradient():
    """At ratio 1 the clipped surrogate has the vanilla policy gradient; check it against finite differences."""
    pol = small_policy(hidden=(4,))
    rng = np.random.default_rng(5)
    obs = torch.as_tensor(rng.normal(size=(32, 5)))
    act = torch.as_tensor(rng.normal(size=(32, 3)))
    adv = torch.as_tensor(rng.normal(size=32))
    old = pol.log_prob(obs, act).detach()
    pol.zero_grad()
    ratio = torch.exp(pol.log_prob(obs, act) - old)
    clipped_surrogate(ratio, adv, 0.2).mean().backward()
    params = [p for n, p in pol.named_parameters() if not n.startswith("critic")]
    grads = [p.grad.clone() for p in params]

    def pg_objective():
        with torch.no_grad():
            return (pol.log_prob(obs, act) * adv).mean().item()

    h = 1e-6
    for p, g in zip(params, grads):
        flat, gflat = p.data.view(-1), g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = pg_objective()
            flat[i] = orig - h
            down = pg_objective()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - gflat[i].item()) <= 1e-4 * max(abs(fd), 1e-3)


def test_mlp_gradients_match_finite_differences():
    pol = small_policy(hidden=(4, 3), seed=2)
    x = torch.as_tensor(np.random.default_rng(6).normal(size=(8, 5)))
    w = torch.as_tensor(np.random.default_rng(7).normal(size=(8, 3)))

    def f():
        return (pol.mean(x) * w).sum() + pol.value(x).pow(2).sum()

    pol.zero_grad()
    f().backward()
    h = 1e-6
    for name, p in pol.named_parameters():
        if name == "log_std":
            continue
        flat, g = p.data.view(-1), p.grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            with torch.no_grad():
                up = f().item()
            flat[i] = orig - h
            with torch.no_grad():
                down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - g[i].item()) <= 1e-4 * max(abs(fd), 1e-3), name


def test_clip_region_flat():
    a = torch.tensor([1.0, 2.0])
    assert torch.equal(clipped_surrogate(torch.tensor([1.3, 1.3]), a, 0.2),
                       clipped_surrogate(torch.tensor([1.5, 1.5]), a, 0.2))
    neg = torch.tensor([-1.0])
    assert clipped_surrogate(torch.tensor([0.5]), neg, 0.2) == clipped_surrogate(torch.tensor([0.7]), neg, 0.2)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=20), st.floats(0.1, 10), st.floats(-3, 3))
def test_advantage_normalisation_keeps_argmax(adv, scale, shift):
    a = np.array(adv)
    top = np.sort(a)[-2:]
    if top[1] - top[0] < 1e-6:  # argmax undefined up to round-off
        return
    norm = (a - a.mean()) / (a.std() + 1e-8)
    affine = scale * a + shift
    norm2 = (affine - affine.mean()) / (affine.std() + 1e-8)
    assert np.argmax(norm) == np.argmax(a) == np.argmax(norm2)


def test_kl_vanishes_with_tiny_lr():
    pol = small_policy()
    batch = fake_batch(pol)
    stats = ppo_update(batch, pol, torch.optim.Adam(pol.parameters(), lr=1e-6), PPOConfig(epochs=1, minibatches=1),
                       torch.Generator().manual_seed(0))
    assert stats["approx_kl"] < 1e-6


def test_nonfinite_loss_aborts_and_restores():
    pol = small_policy()
    before = copy.deepcopy(pol.state_dict())
    batch = fake_batch(pol)
    batch.returns[3, 0] = np.nan
    stats = ppo_update(batch, pol, torch.optim.Adam(pol.parameters(), lr=1e-3), PPOConfig(),
                       torch.Generator().manual_seed(0))
    assert stats["aborted"]
    for k, v in pol.state_dict().items():
        assert torch.equal(v, before[k])


def test_update_improves_surrogate():
    pol = small_policy()
    batch = fake_batch(pol, n=256)
    cfg = PPOConfig(value_coef=0.0, entropy_coef=0.0, epochs=3, minibatches=1, lr=1e-3, normalize_advantages=False)
    obs = torch.as_tensor(batch.obs.reshape(256, -1))
    act = torch.as_tensor(batch.actions.reshape(256, -1))
    adv = torch.as_tensor(batch.advantages.reshape(-1))
    old = torch.as_tensor(batch.log_probs.reshape(-1))

    def surrogate():
        with torch.no_grad():
            return clipped_surrogate(torch.exp(pol.log_prob(obs, act) - old), adv, 0.2).mean().item()

    s0 = surrogate()
    ppo_update(batch, pol, torch.optim.Adam(pol.parameters(), lr=cfg.lr), cfg, torch.Generator().manual_seed(0))
    assert surrogate() > s0


def test_log_std_bounds():
    pol = small_policy()
    with torch.no_grad():
        pol.log_std.fill_(5.0)
    assert torch.all(pol.std() <= math.exp(1.0))


MODEL = RobotModel()
SIM = SimConfig()


def make_env(n, seed=0):
    return BipedEnv(n, MODEL, SIM, RewardConfig(), standing_reference(MODEL.leg), Command(0.4), seed=seed)


def make_policy(seed=0):
    torch.manual_seed(seed)
    return ActorCritic(26, 6, (32, 32), 0.25, standing_reference(MODEL.leg).initial_pose()).double()


def test_rollout_shapes_and_determinism():
    def run():
        env = make_env(3)
        return collect_rollouts(env, make_policy(), 12, WeightStrategy.adaptive(), torch.Generator().manual_seed(1))

    a, b = run(), run()
    for name in ("obs", "actions", "log_probs", "rewards", "values", "dones", "r_imitation", "r_performance",
                 "omega_p"):
        arr = getattr(a, name)
        assert arr.shape[:2] == (3, 12), name
        assert np.array_equal(arr, getattr(b, name)), name
    assert np.all((a.omega_p >= 0) & (a.omega_p <= 1.5))


def test_rollout_rewards_match_single_env_replay():
    env = make_env(2, seed=4)
    start = env.state.take([0])
    strategy = WeightStrategy.fixed(0.5)
    batch = collect_rollouts(env, make_policy(), 80, strategy, torch.Generator().manual_seed(2))
    done_at = np.flatnonzero(batch.dones[0])
    end = done_at[0] + 1 if len(done_at) else 80
    replay = make_env(1)
    replay.state = start
    total = 0.0
    for t in range(end):
        _, terms, _, _ = replay.step(batch.actions[0, t][None])
        total += float(combine(strategy, terms, replay.reward_cfg).total[0])
    assert abs(total - batch.rewards[0, :end].sum()) <= 1e-10


def test_episode_tracker():
    tr = EpisodeTracker(2)
    assert tr.summary()["mean_ep_len"] == 0.0
    tr.add(np.array([1.0, 2.0]), np.array([0.5, 0.5]), np.array([0.1, 0.2]), np.array([False, True]),
           np.array([False, True]))
    s = tr.summary()
    assert s["episode_reward"] == 2.0 and s["mean_ep_len"] == 1.0 and s["fall_rate"] == 1.0
