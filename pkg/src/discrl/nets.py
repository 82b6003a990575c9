"""Policy/value MLPs, the diagonal Gaussian policy head and the observation filter."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore, Tape

LOG_2PI = math.log(2.0 * math.pi)
HIDDEN = (64, 64)


class PolicyParams(ParamStore):
    """Mean network ``pi/w{k}``, ``pi/b{k}`` plus the state-independent ``pi/log_std``."""

    prefix = "pi"

    @property
    def action_dim(self) -> int:
        return self[f"{self.prefix}/w{self.depth - 1}"].shape[1]

    @property
    def obs_dim(self) -> int:
        return self[f"{self.prefix}/w0"].shape[0]

    @property
    def depth(self) -> int:
        return sum(1 for k in self if k.startswith(f"{self.prefix}/w"))


class ValueParams(PolicyParams):
    prefix = "vf"


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_mlp(store: ParamStore, prefix: str, sizes, rng, out_scale: float) -> None:
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = _glorot(rng, n_in, n_out)
        if k == len(sizes) - 2:
            w = w * out_scale
        store[f"{prefix}/w{k}"] = w
        store[f"{prefix}/b{k}"] = np.zeros(n_out)


def init_policy(obs_dim: int, action_dim: int, rng: np.random.Generator,
                hidden=HIDDEN, shared_std: bool = False) -> PolicyParams:
    if action_dim < 1:
        raise ValueError("action_dim must be >= 1")
    params = PolicyParams()
    _init_mlp(params, "pi", (obs_dim, *hidden, action_dim), rng, out_scale=0.01)
    params["pi/log_std"] = np.zeros(1 if shared_std else action_dim)
    return params


def init_value(obs_dim: int, rng: np.random.Generator, hidden=HIDDEN) -> ValueParams:
    params = ValueParams()
    _init_mlp(params, "vf", (obs_dim, *hidden, 1), rng, out_scale=1.0)
    return params


@dataclass
class GaussianDiag:
    """Factorized Gaussian; ``mean`` and ``log_std`` are arrays or tape nodes."""

    mean: np.ndarray | Node
    log_std: np.ndarray | Node

    @property
    def std(self) -> np.ndarray:
        ls = self.log_std.value if isinstance(self.log_std, Node) else self.log_std
        mu = self.mean.value if isinstance(self.mean, Node) else self.mean
        return np.broadcast_to(np.exp(ls), mu.shape[-1:]).copy()

    @property
    def action_dim(self) -> int:
        mu = self.mean.value if isinstance(self.mean, Node) else self.mean
        return mu.shape[-1]


def _mlp_numpy(params: ParamStore, x: np.ndarray) -> np.ndarray:
    prefix, depth = params.prefix, params.depth
    if x.shape[-1] != params.obs_dim:
        raise ValueError(f"state dimension {x.shape[-1]} != network input {params.obs_dim}")
    h = x
    for k in range(depth):
        h = h @ params[f"{prefix}/w{k}"] + params[f"{prefix}/b{k}"]
        if k < depth - 1:
            h = np.tanh(h)
    return h


def _mlp_tape(params: ParamStore, x: np.ndarray, tape: Tape) -> Node:
    prefix, depth = params.prefix, params.depth
    if x.shape[-1] != params.obs_dim:
        raise ValueError(f"state dimension {x.shape[-1]} != network input {params.obs_dim}")
    h = tape.constant(x)
    for k in range(depth):
        h = ad.affine(h, tape.param(params, f"{prefix}/w{k}"), tape.param(params, f"{prefix}/b{k}"))
        if k < depth - 1:
            h = ad.tanh(h)
    return h


def policy_forward(params: PolicyParams, state: np.ndarray, tape: Tape | None = None) -> GaussianDiag:
    state = np.asarray(state, dtype=np.float64)
    if tape is None:
        return GaussianDiag(_mlp_numpy(params, state), params["pi/log_std"])
    mean = _mlp_tape(params, state, tape)
    return GaussianDiag(mean, tape.param(params, "pi/log_std"))


def value_forward(params: ValueParams, state: np.ndarray, tape: Tape | None = None):
    """Scalar value per state; returns shape () for one state, (M,) for a stack."""
    state = np.asarray(state, dtype=np.float64)
    if tape is None:
        return _mlp_numpy(params, state)[..., 0]
    out = _mlp_tape(params, state, tape)
    return ad.sum(out, axis=-1)


def log_prob_per_dim(dist: GaussianDiag, action):
    """Per-dimension log N(a_d; mean_d, std_d^2). Sum over the last axis is the joint."""
    if isinstance(dist.mean, Node) or isinstance(dist.log_std, Node):
        tape = dist.mean.tape if isinstance(dist.mean, Node) else dist.log_std.tape
        mean = dist.mean if isinstance(dist.mean, Node) else tape.constant(dist.mean)
        log_std = dist.log_std if isinstance(dist.log_std, Node) else tape.constant(dist.log_std)
        z = (tape.constant(action) - mean) * ad.exp(-log_std)
        return ad.square(z) * -0.5 - log_std - 0.5 * LOG_2PI
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != dist.action_dim:
        raise ValueError(f"action length {action.shape[-1]} != {dist.action_dim}")
    log_std = np.asarray(dist.log_std, dtype=np.float64)
    if not np.all(np.isfinite(np.exp(log_std))) or np.any(np.exp(log_std) <= 0.0):
        raise ValueError("standard deviation must be positive")
    z = (action - dist.mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def sample_action(dist: GaussianDiag, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw a = mean + std * z; returns the action and its per-dimension log densities."""
    z = rng.standard_normal(np.shape(dist.mean))
    action = dist.mean + np.exp(dist.log_std) * z
    return action, log_prob_per_dim(dist, action)


def kl_diag(mean_p, log_std_p, mean_q, log_std_q):
    """KL(p || q) between diagonal Gaussians, summed over the last axis (numpy)."""
    var_p = np.exp(2.0 * log_std_p)
    var_q = np.exp(2.0 * log_std_q)
    terms = log_std_q - log_std_p + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5
    return np.sum(np.broadcast_to(terms, np.broadcast_shapes(np.shape(terms), np.shape(mean_p))), axis=-1)


class RunningMeanStd:
    """Running mean/variance filter for observations (parallel-merge update)."""

    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.eps = eps

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.size)
        b_mean, b_var, b_count = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_count
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.mean = self.mean + delta * b_count / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + self.eps), -self.clip, self.clip)

    def snapshot(self) -> "RunningMeanStd":
        snap = RunningMeanStd(self.mean.size, self.clip, self.eps)
        snap.mean, snap.var, snap.count = self.mean.copy(), self.var.copy(), self.count
        return snap


class RewardScaler:
    """Divides rewards by the running std of the discounted return (no centering)."""

    def __init__(self, gamma: float, eps: float = 1e-8):
        self.gamma = gamma
        self.stats = RunningMeanStd(1, clip=np.inf, eps=eps)
        self.ret = 0.0

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.stats.var[0] + self.stats.eps))

    def update(self, rewards: np.ndarray, episode_ends: np.ndarray) -> None:
        rets = np.empty(len(rewards))
        ret = self.ret
        for t, (r, end) in enumerate(zip(rewards, episode_ends)):
            ret = ret * self.gamma + r
            rets[t] = ret
            if end:
                ret = 0.0
        self.ret = ret
        self.stats.update(rets[:, None])
