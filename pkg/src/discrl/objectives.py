"""Clipped surrogates (overall and dimension-wise), IS/KL penalties, value loss.

All builders record onto a caller-supplied :class:`~discrl.autodiff.Tape`
and return the scalar node together with the bookkeeping the trainer logs.
The surrogates are maximization objectives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .advantage import LOG_RATIO_CLAMP
from .autodiff import Node, Tape
from .nets import PolicyParams, ValueParams, log_prob_per_dim, policy_forward, value_forward

MODES = ("ppo", "ppo_amber", "disc")
PENALTIES = ("is", "kl")
ALPHA_MIN = 2.0**-20
ALPHA_MAX = 2.0**20


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray  # behavior log densities, (M, D)
    adv: np.ndarray
    vtarg: np.ndarray
    age: np.ndarray
    on_policy: bool = False

    def __post_init__(self):
        if len(self.obs) < 1:
            raise ValueError("empty minibatch")

    def __len__(self) -> int:
        return len(self.obs)

    def with_normalized_advantages(self, eps: float = 1e-8) -> "Minibatch":
        if len(self.adv) < 2:
            return self
        adv = (self.adv - self.adv.mean()) / (self.adv.std() + eps)
        return Minibatch(self.obs, self.actions, self.logp, adv, self.vtarg, self.age, self.on_policy)


@dataclass
class SurrogateInfo:
    value: float
    clip_flags: np.ndarray  # (M, D) for DISC, (M, 1) for PPO
    fully_clipped: np.ndarray  # (M,)
    rho: np.ndarray
    rho_d: np.ndarray


@dataclass
class LossReport:
    surrogate: float
    j_is: float
    j_kl: float | None
    value_loss: float | None
    objective: float
    clip_flags: np.ndarray
    fully_clipped: np.ndarray
    rho: np.ndarray
    rho_d: np.ndarray

    @property
    def fraction_clipped(self) -> float:
        return float(np.mean(self.fully_clipped))


def clip_eps(x, eps: float):
    if eps <= 0:
        raise ValueError("clip factor must be > 0")
    return np.minimum(np.maximum(x, 1.0 - eps), 1.0 + eps)


def kappa(adv) -> np.ndarray:
    """sgn(A) with sgn(0) := +1."""
    return np.where(np.asarray(adv) >= 0.0, 1.0, -1.0)


def _log_ratio(mb: Minibatch, params: PolicyParams, tape: Tape) -> Node:
    dist = policy_forward(params, mb.obs, tape)
    return log_prob_per_dim(dist, mb.actions) - tape.constant(mb.logp)


def _clipped_factor(tape: Tape, rho: Node, k: np.ndarray, eps: float) -> Node:
    # kappa * min(kappa*rho, kappa*clip(rho)): min for A >= 0, max for A < 0
    kc = tape.constant(k)
    return ad.minimum(kc * rho, kc * ad.clip(rho, 1.0 - eps, 1.0 + eps)) * kc


def ppo_surrogate(mb: Minibatch, params: PolicyParams, eps: float, tape: Tape) -> tuple[Node, SurrogateInfo]:
    """Mean over samples of min(rho*A, clip(rho)*A) (written in kappa form)."""
    clip_eps(1.0, eps)
    log_ratio = _log_ratio(mb, params, tape)
    log_rho = ad.clip(ad.sum(log_ratio, axis=-1), -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
    rho = ad.exp(log_rho)
    k = kappa(mb.adv)
    term = _clipped_factor(tape, rho, k, eps) * tape.constant(mb.adv)
    out = ad.mean(term)

    r = rho.value
    flags = (k * r > k * clip_eps(r, eps))[:, None]
    rho_d = np.exp(np.clip(log_ratio.value, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    return out, SurrogateInfo(float(out.value), flags, flags[:, 0].copy(), r.copy(), rho_d)


def disc_surrogate(mb: Minibatch, params: PolicyParams, eps: float, tape: Tape) -> tuple[Node, SurrogateInfo]:
    """Dimension-wise clipped surrogate: mean of A * prod_d kappa*min(kappa*rho_d, kappa*clip(rho_d)).

    A sample's gradient vanishes only when every dimension picks its clipped
    branch.
    """
    clip_eps(1.0, eps)
    log_ratio = _log_ratio(mb, params, tape)
    rho_d = ad.exp(ad.clip(log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    k = kappa(mb.adv)[:, None]
    factors = _clipped_factor(tape, rho_d, k, eps)
    term = ad.prod(factors, axis=-1) * tape.constant(mb.adv)
    out = ad.mean(term)

    rd = rho_d.value
    flags = k * rd > k * clip_eps(rd, eps)
    rho = np.exp(np.clip(log_ratio.value.sum(axis=-1), -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    return out, SurrogateInfo(float(out.value), flags, flags.all(axis=1), rho, rd.copy())


def is_loss(mb: Minibatch, params: PolicyParams, tape: Tape) -> Node:
    """J_IS = mean((log rho)^2) / 2 with rho the overall (product) IS weight."""
    log_rho = ad.sum(_log_ratio(mb, params, tape), axis=-1)
    return ad.mean(ad.square(log_rho)) * 0.5


def kl_loss(mb: Minibatch, params: PolicyParams, snapshot: PolicyParams, tape: Tape) -> Node:
    """Mean over states of KL(pi_snapshot || pi_params) for diagonal Gaussians."""
    old = policy_forward(snapshot, mb.obs)
    new = policy_forward(params, mb.obs, tape)
    old_log_std = np.broadcast_to(old.log_std, old.mean.shape)
    old_var = np.exp(2.0 * old_log_std)
    inv_var = ad.exp(new.log_std * -2.0)
    diff = tape.constant(old.mean) - new.mean
    terms = (new.log_std - tape.constant(old_log_std)
             + (ad.square(diff) + tape.constant(old_var)) * inv_var * 0.5 - 0.5)
    return ad.mean(ad.sum(terms, axis=-1))


def update_alpha_is(alpha: float, j_is: float, j_targ: float,
                    lo: float = ALPHA_MIN, hi: float = ALPHA_MAX) -> float:
    """Halve below j_targ/1.5, double above 1.5*j_targ, otherwise keep; then clamp."""
    if alpha <= 0:
        raise ValueError("alpha_is must be > 0")
    if j_is < j_targ / 1.5:
        alpha = alpha / 2.0
    elif j_is > j_targ * 1.5:
        alpha = alpha * 2.0
    return min(max(alpha, lo), hi)


def value_loss(mb: Minibatch, params: ValueParams, tape: Tape) -> Node:
    pred = value_forward(params, mb.obs, tape)
    return ad.mean(ad.square(pred - tape.constant(mb.vtarg)))


def total_policy_loss(mb: Minibatch, on_policy_mb: Minibatch | None, params: PolicyParams,
                      alpha_is: float, mode: str, eps: float, tape: Tape,
                      penalty: str = "is", snapshot: PolicyParams | None = None) -> tuple[Node, LossReport]:
    """Objective the trainer ascends.

    ppo and ppo_amber use the overall clipped surrogate and ignore the penalty;
    disc uses the dimension-wise surrogate minus ``alpha_is`` times J_IS (or
    J_KL when ``penalty == "kl"``). J_IS is evaluated on ``on_policy_mb`` in
    every mode so it can be logged.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if penalty not in PENALTIES:
        raise ValueError(f"unknown penalty {penalty!r}")
    if mode == "disc":
        surr, info = disc_surrogate(mb, params, eps, tape)
    else:
        surr, info = ppo_surrogate(mb, params, eps, tape)

    j_is = j_kl = None
    objective = surr
    if on_policy_mb is not None:
        j_is = is_loss(on_policy_mb, params, tape)
        if penalty == "kl":
            if snapshot is None:
                raise ValueError("kl penalty needs the iteration snapshot policy")
            j_kl = kl_loss(on_policy_mb, params, snapshot, tape)
        if mode == "disc" and alpha_is != 0.0:
            objective = surr - (j_kl if penalty == "kl" else j_is) * alpha_is

    report = LossReport(
        surrogate=info.value,
        j_is=float(j_is.value) if j_is is not None else 0.0,
        j_kl=float(j_kl.value) if j_kl is not None else None,
        value_loss=None,
        objective=float(objective.value),
        clip_flags=info.clip_flags,
        fully_clipped=info.fully_clipped,
        rho=info.rho,
        rho_d=info.rho_d,
    )
    return objective, report
