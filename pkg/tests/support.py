"""Shared test helpers: finite differences and small random fixtures."""

from __future__ import annotations

import numpy as np

from discrl.autodiff import ParamStore
from discrl.nets import init_policy, init_value
from discrl.objectives import Minibatch
from discrl.replay import Batch

FD_STEP = 1e-6


def central_diff(f, params: ParamStore, name: str, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of the scalar ``f(params)`` w.r.t. one tensor."""
    base = params[name].copy()
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += step
        minus[idx] -= step
        params.set_unchecked(name, plus)
        fp = f(params)
        params.set_unchecked(name, minus)
        fm = f(params)
        grad[idx] = (fp - fm) / (2 * step)
    params.set_unchecked(name, base)
    return grad


def rel_err(a, b, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|), treating both-tiny entries as matching."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    ok = diff <= floor
    ratio = np.where(ok, 0.0, diff / np.maximum(scale, 1e-300))
    return float(ratio.max()) if ratio.size else 0.0


def small_policy(obs_dim=3, action_dim=2, seed=0, hidden=(5, 4), out_scale=1.0):
    rng = np.random.default_rng(seed)
    pol = init_policy(obs_dim, action_dim, rng, hidden=hidden)
    # undo the 0.01 head scaling so ratios move noticeably in tests
    last = f"pi/w{len(hidden)}"
    pol[last] = pol[last] * 100 * out_scale
    pol["pi/log_std"] = rng.normal(0, 0.3, action_dim)
    return pol


def small_value(obs_dim=3, seed=0, hidden=(5, 4)):
    return init_value(obs_dim, np.random.default_rng(seed), hidden=hidden)


def perturbed(params: ParamStore, scale: float, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    out = params.copy()
    for k in out:
        out[k] = out[k] + scale * rng.standard_normal(out[k].shape)
    return out


def random_minibatch(policy, m=6, seed=1, behavior=None, adv=None) -> Minibatch:
    """Minibatch whose behavior densities come from ``behavior`` (default: a perturbed policy)."""
    from discrl.nets import log_prob_per_dim, policy_forward

    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(m, policy.obs_dim))
    beh = behavior if behavior is not None else perturbed(policy, 0.05, seed + 100)
    dist = policy_forward(beh, obs)
    actions = dist.mean + np.exp(dist.log_std) * rng.standard_normal((m, policy.action_dim))
    logp = log_prob_per_dim(dist, actions)
    a = rng.normal(size=m) if adv is None else np.asarray(adv, float)
    return Minibatch(obs, actions, logp, a, rng.normal(size=m), np.zeros(m, int), True)


def make_batch(policy, n=40, seed=0, iteration=0, cap=15) -> Batch:
    """Rollout-shaped batch sampled from ``policy`` on random states, episodes of length ``cap``."""
    from discrl.nets import log_prob_per_dim, policy_forward

    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n + 1, policy.obs_dim))
    dist = policy_forward(policy, obs[:-1])
    acts = dist.mean + dist.std * rng.normal(size=dist.mean.shape)
    ends = (np.arange(n) + 1) % cap == 0
    return Batch(obs[:-1], obs[1:], acts, rng.normal(size=n), np.zeros(n, bool), ends,
                 log_prob_per_dim(dist, acts), iteration)
