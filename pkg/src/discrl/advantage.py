"""TD residuals, GAE, GAE with truncated IS traces, and V-trace value targets.

The recursions run along the last axis, so a stack of equal-length batches
of shape ``(L, N)`` is processed in one backward sweep.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .nets import PolicyParams, ValueParams, log_prob_per_dim, policy_forward, value_forward

LOG_RATIO_CLAMP = 30.0


@dataclass(frozen=True)
class AdvantageTable:
    delta: np.ndarray
    adv: np.ndarray
    vtarg: np.ndarray
    rho: np.ndarray
    rho_d: np.ndarray
    episode_end: np.ndarray

    def __post_init__(self):
        for arr in (self.delta, self.adv, self.vtarg, self.rho, self.rho_d, self.episode_end):
            arr.setflags(write=False)


def td_residuals(rewards, values, next_values, terminals, gamma: float) -> np.ndarray:
    """delta_t = r_t + gamma * V(s_{t+1}) - V(s_t), with V(s_{t+1}) := 0 at true terminals.

    Time-limit truncations are not terminals: they bootstrap from ``next_values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    alive = 1.0 - np.asarray(terminals, dtype=np.float64)
    return rewards + gamma * alive * np.asarray(next_values) - np.asarray(values)


def gae(deltas, gamma: float, lam: float, episode_ends=None) -> np.ndarray:
    deltas = np.asarray(deltas, dtype=np.float64)
    ends = np.zeros(deltas.shape, bool) if episode_ends is None else np.asarray(episode_ends, bool)
    coef = gamma * lam * (1.0 - ends)
    adv = np.empty_like(deltas)
    running = np.zeros(deltas.shape[:-1])
    for t in range(deltas.shape[-1] - 1, -1, -1):
        running = deltas[..., t] + coef[..., t] * running
        adv[..., t] = running
    return adv


def gae_v(deltas, rhos, gamma: float, lam: float, episode_ends=None) -> np.ndarray:
    """A_t = delta_t + gamma*lam*min(1, rho_{t+1}) * A_{t+1}; the trace resets at episode ends."""
    deltas = np.asarray(deltas, dtype=np.float64)
    rhos = np.asarray(rhos, dtype=np.float64)
    if np.any(rhos <= 0):
        raise ValueError("IS weights must be positive")
    ends = np.zeros(deltas.shape, bool) if episode_ends is None else np.asarray(episode_ends, bool)
    trace_next = np.ones_like(rhos)
    trace_next[..., :-1] = np.minimum(1.0, rhos[..., 1:])
    coef = gamma * lam * (1.0 - ends) * trace_next
    adv = np.empty_like(deltas)
    running = np.zeros(deltas.shape[:-1])
    for t in range(deltas.shape[-1] - 1, -1, -1):
        running = deltas[..., t] + coef[..., t] * running
        adv[..., t] = running
    return adv


def vtrace_targets(adv, rhos, values) -> np.ndarray:
    return np.minimum(1.0, np.asarray(rhos)) * np.asarray(adv) + np.asarray(values)


def full_is_weights(logp_new, logp_behavior) -> tuple[np.ndarray, np.ndarray]:
    """Overall and per-dimension IS weights from per-dimension log densities.

    Both are exponentiated from log space with exponents clamped to +-30.
    """
    log_ratio = np.asarray(logp_new) - np.asarray(logp_behavior)
    rho_d = np.exp(np.clip(log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    rho = np.exp(np.clip(log_ratio.sum(axis=-1), -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    return rho, rho_d


def batch_is_weights(batch, policy: PolicyParams) -> tuple[np.ndarray, np.ndarray]:
    dist = policy_forward(policy, batch.obs)
    return full_is_weights(log_prob_per_dim(dist, batch.actions), batch.logp)


def compute_tables(batches: Sequence, policy: PolicyParams, value: ValueParams,
                   gamma: float, lam: float, estimator: str = "gae_v") -> list[AdvantageTable]:
    """Advantage tables for equally long batches, evaluated with one stacked forward pass.

    ``estimator`` is ``"gae_v"`` (truncated IS traces and V-trace targets) or
    ``"gae"`` (IS weights are still reported but ignored by the estimate).
    """
    if estimator not in ("gae", "gae_v"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if not batches:
        return []
    n = len(batches[0])
    obs = np.concatenate([b.obs for b in batches])
    next_obs = np.concatenate([b.next_obs for b in batches])
    acts = np.concatenate([b.actions for b in batches])
    logp_b = np.concatenate([b.logp for b in batches])
    shape = (len(batches), n)
    dim = acts.shape[-1]

    rho, rho_d = full_is_weights(log_prob_per_dim(policy_forward(policy, obs), acts), logp_b)
    rho, rho_d = rho.reshape(shape), rho_d.reshape(shape + (dim,))
    values = value_forward(value, obs).reshape(shape)
    next_values = value_forward(value, next_obs).reshape(shape)
    rewards = np.stack([b.rewards for b in batches])
    terminals = np.stack([b.terminals for b in batches])
    ends = np.stack([b.episode_ends for b in batches])

    delta = td_residuals(rewards, values, next_values, terminals, gamma)
    if estimator == "gae_v":
        adv = gae_v(delta, rho, gamma, lam, ends)
        vtarg = vtrace_targets(adv, rho, values)
    else:
        adv = gae(delta, gamma, lam, ends)
        vtarg = adv + values
    return [
        AdvantageTable(delta[k], adv[k], vtarg[k], rho[k], rho_d[k], ends[k].copy())
        for k in range(len(batches))
    ]
