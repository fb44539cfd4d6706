"""PPO with a clipped surrogate and GAE, for a diagonal-Gaussian MLP policy.

The actor outputs target joint positions directly; the critic is a separate
MLP of the same width. Arrays from the environment stay in numpy; only the
networks and the update live in torch.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from adamimic.rewards import RewardTerms, WeightStrategy, combine

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0


@dataclass(frozen=True)
class PPOConfig:
    n_envs: int = 256
    n_steps: int = 96
    hidden: tuple = (128, 128)
    init_std: float = 0.25
    # "nominal": actor output bias starts at the reference's first pose; "zero": at 0 rad
    action_offset: str = "nominal"
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 5
    minibatches: int = 4
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    max_grad_norm: float = 1.0
    normalize_advantages: bool = True


def mlp(sizes, activation=nn.ELU) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(activation())
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden=(128, 128), init_std: float = 0.25,
                 action_bias=None):
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.actor = mlp((obs_dim, *hidden, act_dim))
        self.critic = mlp((obs_dim, *hidden, 1))
        self.log_std = nn.Parameter(torch.full((act_dim,), math.log(init_std)))
        with torch.no_grad():
            last = self.actor[-1]
            last.weight.mul_(0.01)
            last.bias.zero_()
            if action_bias is not None:
                last.bias.copy_(torch.as_tensor(action_bias, dtype=last.bias.dtype))

    def mean(self, obs: torch.Tensor) -> torch.Tensor:
        return self.actor(obs)

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)

    def std(self) -> torch.Tensor:
        return self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()

    def log_prob(self, obs, actions):
        return gaussian_log_prob(actions, self.mean(obs), self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def entropy(self) -> torch.Tensor:
        ls = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        return (ls + 0.5 * math.log(2 * math.pi * math.e)).sum()


def gaussian_log_prob(x, mean, log_std):
    var = torch.exp(2 * log_std)
    return (-(x - mean) ** 2 / (2 * var) - log_std - 0.5 * math.log(2 * math.pi)).sum(-1)


def gaussian_policy_eval(policy: ActorCritic, obs, mode: str = "sample", generator: torch.Generator | None = None):
    """Action and its log-density for a batch of observations.

    ``mode="mean"`` returns the deterministic mean action.
    """
    dtype = next(policy.parameters()).dtype
    obs_t = torch.as_tensor(obs, dtype=dtype)
    if obs_t.shape[-1] != policy.obs_dim:
        raise ValueError(f"observation length {obs_t.shape[-1]} != {policy.obs_dim}")
    with torch.no_grad():
        mean = policy.mean(obs_t)
        log_std = policy.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        if mode == "mean":
            action = mean
        elif mode == "sample":
            noise = torch.randn(mean.shape, generator=generator, dtype=dtype)
            action = mean + log_std.exp() * noise
        else:
            raise ValueError(f"unknown mode {mode!r}")
        logp = gaussian_log_prob(action, mean, log_std)
    if not torch.isfinite(action).all():
        raise FloatingPointError("policy produced a non-finite action")
    return action.numpy(), logp.numpy()


def clipped_surrogate(ratio, adv, clip: float):
    """Per-sample PPO objective ``min(r A, clip(r, 1 - eps, 1 + eps) A)`` (to be maximised)."""
    return torch.min(ratio * adv, ratio.clamp(1 - clip, 1 + clip) * adv)


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Generalised advantage estimates along the last axis.

    ``dones[t]`` marks that the episode ended at step ``t``, which cuts both the
    bootstrap and the recursion. Returns ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    notdone = 1.0 - np.asarray(dones, dtype=float)
    T = rewards.shape[-1]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[:-1])
    next_value = np.asarray(bootstrap_value, dtype=float)
    for t in range(T - 1, -1, -1):
        delta = rewards[..., t] + gamma * notdone[..., t] * next_value - values[..., t]
        last = delta + gamma * lam * notdone[..., t] * last
        adv[..., t] = last
        next_value = values[..., t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    """Rollout data indexed ``[env, step]``."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    r_imitation: np.ndarray | None = None
    r_performance: np.ndarray | None = None
    omega_p: np.ndarray | None = None
    bootstrap_value: np.ndarray | None = None
    stats: dict = field(default_factory=dict)


class EpisodeTracker:
    """Running per-env episode sums and a window of finished-episode statistics."""

    def __init__(self, n_envs: int, window: int = 100):
        self.total = np.zeros(n_envs)
        self.perf = np.zeros(n_envs)
        self.imit = np.zeros(n_envs)
        self.length = np.zeros(n_envs, dtype=np.int64)
        self.done_total = deque(maxlen=window)
        self.done_perf = deque(maxlen=window)
        self.done_imit = deque(maxlen=window)
        self.done_len = deque(maxlen=window)
        self.falls = deque(maxlen=window)

    def add(self, total, perf, imit, dones, fallen):
        self.total += total
        self.perf += perf
        self.imit += imit
        self.length += 1
        for i in np.flatnonzero(dones):
            self.done_total.append(self.total[i])
            self.done_perf.append(self.perf[i])
            self.done_imit.append(self.imit[i])
            self.done_len.append(self.length[i])
            self.falls.append(bool(fallen[i]))
            self.total[i] = self.perf[i] = self.imit[i] = 0.0
            self.length[i] = 0

    def summary(self) -> dict:
        if self.done_total:
            return {
                "episode_reward": float(np.mean(self.done_total)),
                "perf_reward_sum": float(np.mean(self.done_perf)),
                "imit_reward_sum": float(np.mean(self.done_imit)),
                "mean_ep_len": float(np.mean(self.done_len)),
                "fall_rate": float(np.mean(self.falls)),
            }
        # nothing finished yet: report the episodes in progress
        return {
            "episode_reward": float(np.mean(self.total)),
            "perf_reward_sum": float(np.mean(self.perf)),
            "imit_reward_sum": float(np.mean(self.imit)),
            "mean_ep_len": float(np.mean(self.length)),
            "fall_rate": 0.0,
        }


def _to_tensor(x, dtype):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def collect_rollouts(env, policy: ActorCritic, n_steps: int, strategy: WeightStrategy,
                     generator: torch.Generator, gamma: float = 0.99,
                     tracker: EpisodeTracker | None = None, obs=None) -> RolloutBatch:
    """Step every environment ``n_steps`` times with sampled actions.

    Rewards are the weighted sum of the environment's reward terms under
    ``strategy``. Horizon truncations are bootstrapped with the critic's value
    of the final observation before the episode is cut.
    """
    dtype = next(policy.parameters()).dtype
    n = env.n
    if obs is None:
        obs = env.observe()
    shape = (n, n_steps)
    obs_buf = np.zeros(shape + (obs.shape[-1],))
    act_buf = np.zeros(shape + (policy.act_dim,))
    logp_buf = np.zeros(shape)
    rew_buf = np.zeros(shape)
    val_buf = np.zeros(shape)
    done_buf = np.zeros(shape, dtype=bool)
    ri_buf = np.zeros(shape)
    rp_buf = np.zeros(shape)
    om_buf = np.zeros(shape)
    clamps = 0
    for t in range(n_steps):
        action, logp = gaussian_policy_eval(policy, obs, "sample", generator)
        with torch.no_grad():
            value = policy.value(_to_tensor(obs, dtype)).numpy()
        obs_buf[:, t] = obs
        act_buf[:, t] = action
        logp_buf[:, t] = logp
        val_buf[:, t] = value
        obs, terms, dones, info = env.step(action)
        br = combine(strategy, terms, env.reward_cfg)
        clamps += br.clamp_count
        reward = np.asarray(br.total, dtype=float).copy()
        if info["timeouts"].any():
            idx = np.flatnonzero(info["timeouts"])
            with torch.no_grad():
                v_final = policy.value(_to_tensor(info["final_obs"][idx], dtype)).numpy()
            reward[idx] += gamma * v_final
        rew_buf[:, t] = reward
        done_buf[:, t] = dones
        ri_buf[:, t] = terms.r_imitation
        rp_buf[:, t] = terms.r_performance
        om_buf[:, t] = br.omega_p_applied
        if tracker is not None:
            tracker.add(np.asarray(br.total), np.asarray(terms.r_performance),
                        np.asarray(terms.r_imitation), dones, info["fallen"])
    with torch.no_grad():
        boot = policy.value(_to_tensor(obs, dtype)).numpy()
    batch = RolloutBatch(obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf,
                         r_imitation=ri_buf, r_performance=rp_buf, omega_p=om_buf, bootstrap_value=boot)
    batch.stats = {"clamp_count": clamps, "last_obs": obs}
    return batch


def ppo_update(batch: RolloutBatch, policy: ActorCritic, optimizer: torch.optim.Optimizer,
               cfg: PPOConfig, generator: torch.Generator) -> dict:
    """Clipped-surrogate epochs over shuffled minibatches.

    Returns mean losses, approximate KL and ``aborted`` (True when a non-finite
    loss was hit; parameters are then restored to their values on entry).
    """
    dtype = next(policy.parameters()).dtype
    obs = _to_tensor(batch.obs.reshape(-1, batch.obs.shape[-1]), dtype)
    act = _to_tensor(batch.actions.reshape(-1, batch.actions.shape[-1]), dtype)
    old_logp = _to_tensor(batch.log_probs.reshape(-1), dtype)
    adv = _to_tensor(batch.advantages.reshape(-1), dtype)
    ret = _to_tensor(batch.returns.reshape(-1), dtype)
    if cfg.normalize_advantages and adv.numel() > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = obs.shape[0]
    mb = max(1, n // cfg.minibatches)
    backup = {k: v.clone() for k, v in policy.state_dict().items()}
    opt_backup = optimizer.state_dict()
    stats = {"policy_loss": [], "value_loss": [], "entropy": [], "approx_kl": [], "clip_frac": []}
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=generator)
        for start in range(0, mb * cfg.minibatches, mb):
            idx = perm[start:start + mb]
            logp = policy.log_prob(obs[idx], act[idx])
            ratio = torch.exp(logp - old_logp[idx])
            a = adv[idx]
            policy_loss = -clipped_surrogate(ratio, a, cfg.clip).mean()
            value_loss = (policy.value(obs[idx]) - ret[idx]).pow(2).mean()
            entropy = policy.entropy()
            loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
            if not torch.isfinite(loss):
                policy.load_state_dict(backup)
                optimizer.load_state_dict(opt_backup)
                return {"aborted": True}
            optimizer.zero_grad()
            loss.backward()
            if cfg.max_grad_norm > 0:
                nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            with torch.no_grad():
                policy.log_std.clamp_(LOG_STD_MIN, LOG_STD_MAX)
                log_ratio = logp - old_logp[idx]
                stats["approx_kl"].append(((ratio - 1) - log_ratio).mean().item())
                stats["clip_frac"].append(((ratio - 1).abs() > cfg.clip).to(dtype).mean().item())
            stats["policy_loss"].append(policy_loss.item())
            stats["value_loss"].append(value_loss.item())
            stats["entropy"].append(entropy.item())
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["aborted"] = False
    return out
