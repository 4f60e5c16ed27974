"""Restart-aware proximal policy optimization.

Rollouts are fixed 24-step windows per agent; episodes may end anywhere
inside the window. Advantage estimation distinguishes true terminations
(bootstrap 0, recursion cut) from artificial timeouts (bootstrap through the
horizon with the value of the final state, recursion cut), so agents are not
penalized for the fixed episode cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ACT_DIM, OBS_DIM, VecEnv
from .policy import ActorCritic, LOG_STD_MAX, LOG_STD_MIN, entropy, log_prob, sample_actions


@dataclass
class PpoConfig:
    steps_per_iteration: int = 24
    num_minibatches: int = 4
    epochs: int = 5
    clip_ratio: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    # 3e-4 destabilizes both backends here (quadratic penalties explode once
    # a large update escapes the clip region); 1e-4 trains cleanly.
    learning_rate: float = 1e-4
    value_coef: float = 1.0
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0

    def validate(self) -> None:
        if self.steps_per_iteration <= 0:
            raise ValueError("steps_per_iteration must be positive")
        if self.num_minibatches <= 0 or self.epochs <= 0:
            raise ValueError("num_minibatches and epochs must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.clip_ratio <= 0:
            raise ValueError(f"clip_ratio must be > 0, got {self.clip_ratio}")


class RolloutBuffer:
    """Fixed (steps, agents) window of transitions with restart flags.

    `timeout_value` holds V(final state) on timed-out steps so GAE can
    bootstrap through the artificial horizon; `bootstrap_value` holds V of
    the post-window states.
    """

    def __init__(self, num_steps: int, num_agents: int):
        self.num_steps = num_steps
        self.num_agents = num_agents
        shape = (num_steps, num_agents)
        self.obs = np.zeros((*shape, OBS_DIM), dtype=np.float32)
        self.actions = np.zeros((*shape, ACT_DIM), dtype=np.float32)
        self.log_prob = np.zeros(shape, dtype=np.float32)
        self.value = np.zeros(shape, dtype=np.float32)
        self.reward = np.zeros(shape, dtype=np.float32)
        self.terminated = np.zeros(shape, dtype=bool)
        self.timed_out = np.zeros(shape, dtype=bool)
        self.timeout_value = np.zeros(shape, dtype=np.float32)
        self.bootstrap_value = np.zeros(num_agents, dtype=np.float32)
        self.filled = False

    @property
    def size(self) -> int:
        return self.num_steps * self.num_agents


def collect_rollout(
    policy: ActorCritic,
    env: VecEnv,
    buffer: RolloutBuffer,
    action_rng: np.random.Generator,
) -> list[float]:
    """Fill the buffer with one window of experience from the live policy.

    The environment auto-resets agents mid-window; restart boundaries are
    recorded via the terminated/timed_out flags. Returns the episode totals
    of every episode that terminated or timed out inside the window.
    """
    if env.current_obs is None:
        raise RuntimeError("environment must be reset before collection")
    episode_returns: list[float] = []
    for t in range(buffer.num_steps):
        obs = env.current_obs
        mean, value = policy.forward(obs)
        actions = sample_actions(mean, policy.log_std, action_rng)
        buffer.obs[t] = obs
        buffer.actions[t] = actions
        buffer.log_prob[t] = log_prob(mean, policy.log_std, actions)
        buffer.value[t] = value
        result = env.step(actions)
        buffer.reward[t] = result.reward
        buffer.terminated[t] = result.terminated
        buffer.timed_out[t] = result.timed_out
        buffer.timeout_value[t] = 0.0
        if result.done_indices.size:
            episode_returns.extend(
                float(r) for r in result.episode_return[result.done_indices]
            )
            to_idx = np.flatnonzero(result.timed_out)
            if to_idx.size:
                rows = np.searchsorted(result.done_indices, to_idx)
                final_obs = result.final_obs[rows]
                _, v_final = policy.forward(final_obs)
                buffer.timeout_value[t, to_idx] = v_final
    _, v_boot = policy.forward(env.current_obs)
    buffer.bootstrap_value[:] = v_boot
    buffer.filled = True
    return episode_returns


def compute_gae(buffer: RolloutBuffer, cfg: PpoConfig) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and return targets from a filled window.

    Backward recursion A_t = delta_t + gamma * lambda * (1 - reset_t) * A_{t+1}
    with delta_t = r_t + gamma * v_boot - v_t, where v_boot is 0 on a
    terminated step, V(final state) on a timed-out step, and the next stored
    value (or the post-window bootstrap) otherwise.
    """
    if not buffer.filled:
        raise RuntimeError("rollout buffer is not filled")
    gamma = cfg.gamma
    lam = cfg.gae_lambda
    T = buffer.num_steps
    value = buffer.value.astype(np.float64)
    reward = buffer.reward.astype(np.float64)
    timeout_value = buffer.timeout_value.astype(np.float64)
    adv = np.zeros((T, buffer.num_agents), dtype=np.float64)
    running = np.zeros(buffer.num_agents, dtype=np.float64)
    next_value = buffer.bootstrap_value.astype(np.float64)
    for t in range(T - 1, -1, -1):
        term = buffer.terminated[t]
        tout = buffer.timed_out[t]
        reset = term | tout
        v_boot = np.where(term, 0.0, np.where(tout, timeout_value[t], next_value))
        delta = reward[t] + gamma * v_boot - value[t]
        running = delta + gamma * lam * np.where(reset, 0.0, running)
        adv[t] = running
        next_value = value[t]
    returns = adv + value
    return adv.astype(np.float32), returns.astype(np.float32)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    flat = adv.astype(np.float64)
    # Non-finite inputs flow through as NaN and trip the update's fault path.
    with np.errstate(invalid="ignore"):
        std = flat.std()
        return ((flat - flat.mean()) / (std + 1e-8)).astype(np.float32)


class Adam:
    """Adaptive-moment optimizer over a list of parameter arrays.

    Moments live in flat vectors; each step gathers the gradients once, does
    the moment math in a handful of full-width passes, and scatters one
    increment back per parameter.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        dtype = params[0].dtype
        bounds = np.cumsum([0] + [p.size for p in params])
        self._bounds = bounds
        total = int(bounds[-1])
        self.m = np.zeros(total, dtype=dtype)
        self.v = np.zeros(total, dtype=dtype)
        self._g = np.empty(total, dtype=dtype)
        self._s = np.empty(total, dtype=dtype)
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        g, s, m, v = self._g, self._s, self.m, self.v
        for grad, lo, hi in zip(grads, self._bounds, self._bounds[1:]):
            g[lo:hi] = grad.reshape(-1)
        m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=s)
        m += s
        v *= self.beta2
        g *= g
        g *= 1.0 - self.beta2
        v += g
        np.divide(v, b2c, out=g)
        np.sqrt(g, out=g)
        g += self.eps
        np.divide(m, g, out=s)
        s *= lr / b1c
        for p, lo, hi in zip(params, self._bounds, self._bounds[1:]):
            p -= s[lo:hi].reshape(p.shape)

    def state_copy(self):
        return (self.m.copy(), self.v.copy(), self.t)

    def state_restore(self, state):
        m, v, t = state
        self.m = m.copy()
        self.v = v.copy()
        self.t = t


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        flat = np.ascontiguousarray(g).ravel()
        total += float(np.dot(flat, flat))
    return float(np.sqrt(total))


def clip_grads(grads, max_norm: float) -> float:
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class UpdateStats:
    loss_actor: float = 0.0
    loss_value: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    grad_norm: float = 0.0
    fault: bool = False


def ppo_loss_and_grads(
    policy: ActorCritic,
    obs: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
):
    """Clipped-surrogate loss and exact parameter gradients for one batch.

    Returns (stats dict, gradient list aligned with policy.parameters()).
    """
    B = obs.shape[0]
    mean, value, caches = policy.forward_cached(obs)
    log_std = policy.log_std.astype(np.float64)
    inv_var = np.exp(-2.0 * log_std)
    diff = actions.astype(np.float64) - mean.astype(np.float64)
    logp_new = (
        -0.5 * (diff**2 * inv_var).sum(axis=1)
        - log_std.sum()
        - 0.5 * np.log(2.0 * np.pi) * actions.shape[1]
    )
    ratio = np.exp(logp_new - logp_old.astype(np.float64))
    adv = advantages.astype(np.float64)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv
    loss_actor = -np.minimum(surr1, surr2).mean()

    v64 = value.astype(np.float64)
    verr = v64 - returns.astype(np.float64)
    loss_value = (verr**2).mean()

    ent = entropy(log_std)
    total = loss_actor + cfg.value_coef * loss_value - cfg.entropy_coef * ent

    # Head gradients. The min() passes gradient to the unclipped branch
    # exactly when surr1 <= surr2; in the clipped branch clamp() is constant.
    active = surr1 <= surr2
    d_ratio = np.where(active, -adv / B, 0.0)
    d_logp = d_ratio * ratio
    d_mean = (d_logp[:, None] * diff * inv_var).astype(policy.dtype)
    d_log_std_policy = (d_logp[:, None] * (diff**2 * inv_var - 1.0)).sum(axis=0)
    d_log_std = d_log_std_policy - cfg.entropy_coef * 1.0
    d_value = (cfg.value_coef * 2.0 * verr / B).astype(policy.dtype)

    grads = policy.backward(caches, d_mean, d_value)
    grads[-1] = (grads[-1].astype(np.float64) + d_log_std).astype(policy.dtype)

    stats = {
        "loss_actor": float(loss_actor),
        "loss_value": float(loss_value),
        "entropy": float(ent),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio)),
        "approx_kl": float(np.mean(logp_old.astype(np.float64) - logp_new)),
        "total": float(total),
    }
    return stats, grads


def update(
    policy: ActorCritic,
    adam: Adam,
    buffer: RolloutBuffer,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
    shuffle_rng: np.random.Generator,
) -> UpdateStats:
    """Optimize the clipped surrogate for epochs x minibatches.

    The sample-level partition is reshuffled every epoch and covers each
    sample exactly once. A non-finite loss aborts the whole update and
    restores the pre-update parameters and optimizer state.
    """
    B = buffer.size
    obs = buffer.obs.reshape(B, -1)
    actions = buffer.actions.reshape(B, -1)
    logp_old = buffer.log_prob.reshape(B)
    adv_norm = normalize_advantages(advantages).reshape(B)
    ret = returns.reshape(B)

    params_backup = [p.copy() for p in policy.parameters()]
    adam_backup = adam.state_copy()

    agg = UpdateStats()
    weight_total = 0
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(B)
        for mb in np.array_split(perm, cfg.num_minibatches):
            stats, grads = ppo_loss_and_grads(
                policy,
                obs[mb],
                actions[mb],
                logp_old[mb],
                adv_norm[mb],
                ret[mb],
                cfg,
            )
            if not np.isfinite(stats["total"]):
                policy.set_parameters(params_backup)
                adam.state_restore(adam_backup)
                return UpdateStats(fault=True)
            norm = clip_grads(grads, cfg.max_grad_norm)
            adam.step(policy.parameters(), grads, cfg.learning_rate)
            np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX, out=policy.log_std)
            w = mb.size
            weight_total += w
            agg.loss_actor += stats["loss_actor"] * w
            agg.loss_value += stats["loss_value"] * w
            agg.entropy += stats["entropy"] * w
            agg.clip_fraction += stats["clip_fraction"] * w
            agg.approx_kl += stats["approx_kl"] * w
            agg.grad_norm += norm * w
    agg.loss_actor /= weight_total
    agg.loss_value /= weight_total
    agg.entropy /= weight_total
    agg.clip_fraction /= weight_total
    agg.approx_kl /= weight_total
    agg.grad_norm /= weight_total
    return agg
