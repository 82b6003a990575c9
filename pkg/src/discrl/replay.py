"""Whole-batch replay: storage, IS-deviation inclusion test and minibatch draws."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .advantage import AdvantageTable, batch_is_weights
from .nets import PolicyParams, RunningMeanStd
from .objectives import Minibatch

DEV_MODES = ("overall", "per_dim")


@dataclass
class Batch:
    """One on-policy rollout of fixed length.

    ``obs``/``next_obs``/``rewards`` are the normalized views everything
    downstream reads. They start out in the normalization frozen at collection
    (``obs_filter``, ``reward_scale``); when the raw arrays are kept,
    :meth:`renormalize` re-expresses an old batch in a newer one.
    """

    obs: np.ndarray
    next_obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray
    episode_ends: np.ndarray
    logp: np.ndarray
    iteration: int
    obs_filter: RunningMeanStd | None = None
    reward_scale: float = 1.0
    table: AdvantageTable | None = field(default=None, repr=False)
    raw_obs: np.ndarray | None = field(default=None, repr=False)
    raw_next_obs: np.ndarray | None = field(default=None, repr=False)
    raw_rewards: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.obs)
        for name in ("next_obs", "actions", "rewards", "terminals", "episode_ends", "logp"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"batch field {name} has length {len(getattr(self, name))} != {n}")
        if not np.all(np.isfinite(self.logp)):
            raise ValueError("behavior log densities must be finite")

    def __len__(self) -> int:
        return len(self.obs)

    def renormalize(self, obs_filter: RunningMeanStd, reward_scale: float) -> None:
        """Rebuild the normalized views from the raw arrays; behavior densities are untouched."""
        if self.raw_obs is None or self.raw_next_obs is None or self.raw_rewards is None:
            raise ValueError(f"batch from iteration {self.iteration} kept no raw data")
        self.obs = obs_filter.normalize(self.raw_obs)
        self.next_obs = obs_filter.normalize(self.raw_next_obs)
        self.rewards = self.raw_rewards / reward_scale
        self.obs_filter, self.reward_scale = obs_filter, reward_scale


class ReplayBuffer:
    """FIFO of at most ``capacity`` batches; index 0 is the newest."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay length must be >= 1")
        self.capacity = capacity
        self._batches: deque[Batch] = deque(maxlen=capacity)

    def push(self, batch: Batch) -> Batch | None:
        if any(b.iteration == batch.iteration for b in self._batches):
            raise ValueError(f"iteration {batch.iteration} already buffered")
        evicted = self._batches[-1] if len(self._batches) == self.capacity else None
        self._batches.appendleft(batch)
        return evicted

    def __len__(self) -> int:
        return len(self._batches)

    def __iter__(self):
        return iter(self._batches)

    def __getitem__(self, k: int) -> Batch:
        return self._batches[k]

    @property
    def newest(self) -> Batch:
        return self._batches[0]


def push_batch(buffer: ReplayBuffer, batch: Batch) -> None:
    buffer.push(batch)


def mean_dev(rho: np.ndarray, rho_d: np.ndarray, mode: str) -> float:
    """Mean of |1 - rho| + 1 over samples (overall) or over samples and dimensions (per_dim)."""
    if mode == "overall":
        return float(np.mean(np.abs(1.0 - rho) + 1.0))
    if mode == "per_dim":
        return float(np.mean(np.abs(1.0 - rho_d) + 1.0))
    raise ValueError(f"unknown deviation mode {mode!r}; expected one of {DEV_MODES}")


def batch_mean_dev(batch: Batch, policy: PolicyParams | None, mode: str) -> float:
    """Left-hand side of the inclusion test for ``batch`` under ``policy``.

    With ``policy=None`` the IS weights cached in the batch's advantage table
    are used.
    """
    if policy is None:
        if batch.table is None:
            raise ValueError("batch has no advantage table; pass the policy")
        rho, rho_d = batch.table.rho, batch.table.rho_d
    else:
        rho, rho_d = batch_is_weights(batch, policy)
    return mean_dev(rho, rho_d, mode)


def select_batches(buffer: ReplayBuffer, policy: PolicyParams | None, eps_b: float,
                   mode: str) -> list[Batch]:
    """Newest batch always, plus every older batch whose mean deviation is < 1 + eps_b."""
    selected = [buffer.newest]
    for batch in list(buffer)[1:]:
        if batch_mean_dev(batch, policy, mode) < 1.0 + eps_b:
            selected.append(batch)
    return selected


@dataclass
class Pool:
    """Concatenated transitions of the selected batches, with frozen targets."""

    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    adv: np.ndarray
    vtarg: np.ndarray
    age: np.ndarray
    batch_index: np.ndarray
    on_policy: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)

    def take(self, idx: np.ndarray) -> Minibatch:
        return Minibatch(self.obs[idx], self.actions[idx], self.logp[idx], self.adv[idx],
                         self.vtarg[idx], self.age[idx], bool(np.all(self.on_policy[idx])))


def build_pool(batches: list[Batch], current_iteration: int) -> Pool:
    for b in batches:
        if b.table is None:
            raise ValueError(f"batch from iteration {b.iteration} has no advantage table")
    n = [len(b) for b in batches]
    return Pool(
        obs=np.concatenate([b.obs for b in batches]),
        actions=np.concatenate([b.actions for b in batches]),
        logp=np.concatenate([b.logp for b in batches]),
        adv=np.concatenate([b.table.adv for b in batches]),
        vtarg=np.concatenate([b.table.vtarg for b in batches]),
        age=np.concatenate([np.full(k, current_iteration - b.iteration) for k, b in zip(n, batches)]),
        batch_index=np.concatenate([np.full(k, j) for j, k in enumerate(n)]),
        on_policy=np.concatenate([np.full(k, b.iteration == current_iteration) for k, b in zip(n, batches)]),
    )


def sample_minibatch(selected: list[Batch] | Pool, m: int, rng: np.random.Generator,
                     current_iteration: int | None = None) -> Minibatch:
    """Uniform draw of ``m`` transitions without replacement from the selected batches."""
    pool = selected if isinstance(selected, Pool) else build_pool(
        selected, selected[0].iteration if current_iteration is None else current_iteration)
    if m > len(pool):
        raise ValueError(f"minibatch size {m} exceeds pool of {len(pool)} transitions")
    if m < 1:
        raise ValueError("minibatch size must be >= 1")
    return pool.take(rng.choice(len(pool), size=m, replace=False))
