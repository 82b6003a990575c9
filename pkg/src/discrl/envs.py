"""Synthetic continuous-control tasks with a configurable action dimension.

Both families are damped point masses in D dimensions. ``coupled_chain``
routes the clipped action through a fixed orthogonal mixing matrix, so each
action coordinate moves every velocity coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("point_mass", "coupled_chain")

VELOCITY_DECAY = 0.9
ACTION_GAIN = 0.1
DT = 0.1
ACTION_COST = 0.1
# mixing matrices depend on D only, never on the run seed
MIXING_ENTROPY = 0x5EED_C4A1


@dataclass(frozen=True)
class EnvSpec:
    family: str = "point_mass"
    action_dim: int = 4
    episode_cap: int = 200
    noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown env family {self.family!r}; expected one of {FAMILIES}")
        if self.action_dim < 1:
            raise ValueError("action_dim must be >= 1")
        if self.episode_cap < 1:
            raise ValueError("episode_cap must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @property
    def obs_dim(self) -> int:
        return 2 * self.action_dim


def mixing_matrix(action_dim: int) -> np.ndarray:
    rng = np.random.default_rng([MIXING_ENTROPY, action_dim])
    q, r = np.linalg.qr(rng.standard_normal((action_dim, action_dim)))
    return q * np.sign(np.diag(r))


class EpisodeDone(RuntimeError):
    """step() called on a finished episode."""


class Env:
    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.mix = mixing_matrix(spec.action_dim) if spec.family == "coupled_chain" else None
        self.p = np.zeros(spec.action_dim)
        self.v = np.zeros(spec.action_dim)
        self.t = 0
        self.done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.p = self.rng.uniform(-1.0, 1.0, size=self.spec.action_dim)
        self.v = np.zeros(self.spec.action_dim)
        self.t = 0
        self.done = False
        return self.observation()

    def set_state(self, p, v=None) -> np.ndarray:
        """Place the mass at (p, v) and start a fresh episode there."""
        self.p = np.array(p, dtype=np.float64)
        self.v = np.zeros_like(self.p) if v is None else np.array(v, dtype=np.float64)
        self.t = 0
        self.done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EpisodeDone("step() after episode end; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (self.spec.action_dim,):
            raise ValueError(f"action shape {a.shape} != ({self.spec.action_dim},)")
        # reward is charged on the pre-transition state
        reward = -float(self.p @ self.p) - ACTION_COST * float(a @ a)
        force = a if self.mix is None else self.mix @ a
        self.v = VELOCITY_DECAY * self.v + ACTION_GAIN * force
        # noise perturbs the velocity that is integrated over this step
        drift = self.v
        if self.spec.noise > 0:
            drift = drift + self.spec.noise * self.rng.standard_normal(self.spec.action_dim)
        self.p = self.p + DT * drift
        self.t += 1
        self.done = self.t >= self.spec.episode_cap
        return self.observation(), reward, self.done


def make_env(spec: EnvSpec) -> Env:
    return Env(spec)
