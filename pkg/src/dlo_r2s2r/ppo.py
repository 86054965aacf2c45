"""Proximal policy optimization with a diagonal Gaussian policy.

Clipped surrogate objective, generalized advantage estimation, and
synchronous rollout collection over a vectorized environment. Actions are
sampled unbounded and clamped at the environment boundary; log-probs are
taken pre-clamp.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .task_env import ACTION_BOUND, HORIZON, OBS_DIM

_INIT_LOG_STD = math.log(0.03)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    n_steps: int = 16          # one episode horizon per env per update
    batch_size: int = 16
    total_steps: int = 30000   # desk scale; paper scale is 120000
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")


def _mlp(sizes):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


class PolicyModel(nn.Module):
    """Actor (12-64-64-2) + state-independent log-std + critic (12-64-64-1)."""

    def __init__(self, seed: int = 0, dtype=torch.float64):
        super().__init__()
        torch.manual_seed(seed)
        self.actor = _mlp([OBS_DIM, 64, 64, 2])
        self.critic = _mlp([OBS_DIM, 64, 64, 1])
        self.log_std = nn.Parameter(torch.full((2,), _INIT_LOG_STD))
        self.to(dtype)

    def forward(self, obs: torch.Tensor):
        """(mean action, log_std, value)."""
        return self.actor(obs), self.log_std, self.critic(obs)[..., 0]

    def log_prob(self, obs: torch.Tensor, actions: torch.Tensor):
        mean, log_std, value = self.forward(obs)
        var = torch.exp(2 * log_std)
        lp = (-0.5 * ((actions - mean) ** 2 / var)
              - log_std - 0.5 * math.log(2 * math.pi)).sum(-1)
        entropy = (log_std + 0.5 * (1 + math.log(2 * math.pi))).sum()
        return lp, entropy, value

    # policy protocol used by env.rollout / evaluation
    def act(self, obs, t, deterministic: bool = True):
        with torch.no_grad():
            mean, log_std, _ = self.forward(
                torch.as_tensor(obs, dtype=self.log_std.dtype))
        a = mean.numpy()
        return np.clip(a, -ACTION_BOUND, ACTION_BOUND)


class RolloutBuffer:
    """Per-update storage of (obs, action, log_prob, reward, value, done)."""

    def __init__(self, n_steps, n_envs, dtype=np.float64):
        self.obs = np.zeros((n_steps, n_envs, OBS_DIM), dtype)
        self.actions = np.zeros((n_steps, n_envs, 2), dtype)
        self.log_probs = np.zeros((n_steps, n_envs), dtype)
        self.rewards = np.zeros((n_steps, n_envs), dtype)
        self.values = np.zeros((n_steps, n_envs), dtype)
        self.dones = np.zeros((n_steps, n_envs), dtype)  # done after step t
        self.advantages = None
        self.returns = None


def compute_gae(buffer: RolloutBuffer, last_values: np.ndarray,
                gamma: float, lam: float):
    """Reverse GAE recursion; terminal states bootstrap with value 0."""
    t_max, n = buffer.rewards.shape
    adv = np.zeros((t_max, n))
    next_adv = np.zeros(n)
    next_value = last_values
    for t in reversed(range(t_max)):
        nonterminal = 1.0 - buffer.dones[t]
        delta = (buffer.rewards[t] + gamma * next_value * nonterminal
                 - buffer.values[t])
        next_adv = delta + gamma * lam * nonterminal * next_adv
        adv[t] = next_adv
        next_value = buffer.values[t]
    buffer.advantages = adv
    buffer.returns = adv + buffer.values
    return adv, buffer.returns


def ppo_loss(model: PolicyModel, obs, actions, old_log_probs, advantages,
             returns, cfg: PpoConfig):
    """Clipped surrogate + value MSE + entropy bonus. Returns (loss, stats)."""
    lp, entropy, values = model.log_prob(obs, actions)
    ratio = torch.exp(lp - old_log_probs)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * advantages
    actor_loss = -torch.min(unclipped, clipped).mean()
    value_loss = ((values - returns) ** 2).mean()
    loss = (actor_loss + cfg.value_coef * value_loss
            - cfg.entropy_coef * entropy)
    stats = {
        "actor_loss": float(actor_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "mean_ratio": float(ratio.detach().mean()),
        "entropy": float(entropy.detach()),
    }
    return loss, stats


def ppo_update(model: PolicyModel, buffer: RolloutBuffer, cfg: PpoConfig,
               optimizer, generator: torch.Generator):
    """Multiple epochs of minibatch updates over the flattened buffer."""
    t_max, n_envs = buffer.rewards.shape
    total = t_max * n_envs
    dtype = model.log_std.dtype

    adv = buffer.advantages.reshape(total)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    obs = torch.as_tensor(buffer.obs.reshape(total, OBS_DIM), dtype=dtype)
    actions = torch.as_tensor(buffer.actions.reshape(total, 2), dtype=dtype)
    old_lp = torch.as_tensor(buffer.log_probs.reshape(total), dtype=dtype)
    advantages = torch.as_tensor(adv, dtype=dtype)
    returns = torch.as_tensor(buffer.returns.reshape(total), dtype=dtype)

    stats = None
    for _ in range(cfg.epochs):
        perm = torch.randperm(total, generator=generator)
        for start in range(0, total, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, stats = ppo_loss(model, obs[idx], actions[idx],
                                   old_lp[idx], advantages[idx],
                                   returns[idx], cfg)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite PPO loss: {stats}")
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
            optimizer.step()
    return stats


def train(env, cfg: PpoConfig = None, seed: int = 0):
    """Alternate rollout collection and PPO updates on a VecEnv.

    Returns (model, curve) where curve rows are
    (global_step, mean_episode_reward, episodes_seen_this_update).
    """
    cfg = cfg or PpoConfig()
    model = PolicyModel(seed=seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(seed + 1)
    dtype = model.log_std.dtype

    n_envs = env.n
    steps_per_update = cfg.n_steps * n_envs
    n_updates = max(1, cfg.total_steps // steps_per_update)

    obs = env.reset()
    env.completed.clear()
    curve = []
    global_step = 0
    for _ in range(n_updates):
        buf = RolloutBuffer(cfg.n_steps, n_envs)
        for t in range(cfg.n_steps):
            obs_t = torch.as_tensor(obs, dtype=dtype)
            with torch.no_grad():
                mean, log_std, value = model.forward(obs_t)
                std = torch.exp(log_std)
                noise = torch.randn(mean.shape, generator=gen, dtype=dtype)
                action = mean + std * noise
                lp = (-0.5 * ((action - mean) ** 2 / std ** 2)
                      - log_std - 0.5 * math.log(2 * math.pi)).sum(-1)
            act_np = action.numpy()
            buf.obs[t] = obs
            buf.actions[t] = act_np
            buf.log_probs[t] = lp.numpy()
            buf.values[t] = value.numpy()
            obs, rewards, dones, infos = env.step(act_np)
            buf.rewards[t] = rewards
            buf.dones[t] = dones.astype(np.float64)
            global_step += n_envs
        with torch.no_grad():
            _, _, last_values = model.forward(torch.as_tensor(obs, dtype=dtype))
        compute_gae(buf, last_values.numpy(), cfg.gamma, cfg.gae_lambda)
        ppo_update(model, buf, cfg, optimizer, gen)

        episodes = env.completed
        env.completed = []
        if episodes:
            mean_ep = float(np.mean([e.total_reward() for e in episodes]))
            curve.append((global_step, mean_ep, len(episodes)))
    return model, curve


def evaluate(policy, env, repetitions: int = 4):
    """Deterministic-mean-action rollouts; returns the full episode records."""
    return [env.rollout(policy, deterministic=True)
            for _ in range(repetitions)]


def grad_check(model: PolicyModel, cfg: PpoConfig = None, n: int = 8,
               seed: int = 0, h: float = 1e-6) -> float:
    """Max relative error of the PPO loss gradient vs central differences.

    Uses a synthetic batch with ratios kept away from the clip kinks so the
    objective is locally smooth.
    """
    cfg = cfg or PpoConfig()
    model64 = copy.deepcopy(model).double()
    gen = torch.Generator().manual_seed(seed)
    obs = torch.rand((n, OBS_DIM), generator=gen, dtype=torch.float64) * 2 - 1
    actions = (torch.rand((n, 2), generator=gen, dtype=torch.float64)
               * 2 - 1) * ACTION_BOUND
    with torch.no_grad():
        lp0, _, _ = model64.log_prob(obs, actions)
    old_lp = lp0 + 0.05 * (torch.rand(n, generator=gen, dtype=torch.float64)
                           - 0.5)
    advantages = torch.randn((n,), generator=gen, dtype=torch.float64)
    returns = torch.randn((n,), generator=gen, dtype=torch.float64)

    def loss_value():
        loss, _ = ppo_loss(model64, obs, actions, old_lp, advantages,
                           returns, cfg)
        return loss

    loss = loss_value()
    params = [p for p in model64.parameters()]
    grads = torch.autograd.grad(loss, params)
    max_rel = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat, gflat = p.view(-1), g.view(-1)
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + h
                lp_ = float(loss_value())
                flat[j] = orig - h
                lm_ = float(loss_value())
                flat[j] = orig
                fd = (lp_ - lm_) / (2 * h)
                denom = max(abs(fd), abs(float(gflat[j])), 1e-6)
                max_rel = max(max_rel, abs(fd - float(gflat[j])) / denom)
    return max_rel


def save_checkpoint(path, model: PolicyModel):
    torch.save({"state_dict": model.state_dict()}, path)


def load_checkpoint(path) -> PolicyModel:
    d = torch.load(path, weights_only=False)
    model = PolicyModel()
    model.load_state_dict(d["state_dict"])
    return model
