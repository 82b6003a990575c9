"""Training loop for PPO, PPO-AMBER and DISC.

One iteration: snapshot the networks, collect a batch, re-express older
batches in the new batch's normalization, recompute advantage
tables for everything in the buffer, pick the batches to reuse, run
``epochs x steps_per_epoch`` Adam steps, adapt alpha_is, then evaluate the
mean policy deterministically.
"""

from __future__ import annotations

import logging
from dataclasses import astuple, dataclass, fields

import numpy as np

from .advantage import compute_tables
from .autodiff import GradStore, NonFiniteGradientError, ParamStore, Tape
from .config import TrainConfig
from .envs import Env, EnvSpec
from .nets import (PolicyParams, RewardScaler, RunningMeanStd, init_policy, init_value,
                   log_prob_per_dim, policy_forward)
from .objectives import LossReport, total_policy_loss, update_alpha_is, value_loss
from .replay import Batch, ReplayBuffer, build_pool, mean_dev, select_batches

log = logging.getLogger(__name__)

# child-stream tags for np.random.SeedSequence([seed, tag])
INIT_STREAM, ACTION_STREAM, ENV_STREAM, MINIBATCH_STREAM, IS_STREAM, EVAL_STREAM = range(6)


class TrainingError(RuntimeError):
    pass


@dataclass
class IterationMetrics:
    iteration: int
    env_steps: int
    eval_return: float
    mean_rho_dev: float
    mean_rho_dev_dim: float
    frac_clipped: float
    batches_selected: int
    alpha_is: float
    j_is: float
    policy_loss: float
    value_loss: float
    lr: float

    def as_row(self) -> tuple:
        return astuple(self)


METRIC_COLUMNS = tuple(f.name for f in fields(IterationMetrics))


def stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def stream_seeds(seed: int, tag: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence([seed, tag]).generate_state(count)]


def lr_schedule(progress: float, lr_max: float = 0.0003, lr_min: float = 0.0001) -> float:
    """Linear anneal from lr_max to 0, floored at lr_min."""
    return max(lr_min, lr_max * (1.0 - progress))


class Adam:
    """Bias-corrected adaptive-moment update over a ParamStore."""

    def __init__(self, params: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: ParamStore, grads: GradStore, lr: float, ascent: bool = False) -> None:
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {name} {params[name].shape}")
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for {name}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        sign = 1.0 if ascent else -1.0
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            params.set_unchecked(name, params[name] + sign * lr * update)


def optimizer_step(params: ParamStore, grads: GradStore, opt: Adam, lr: float, ascent: bool = False) -> None:
    opt.step(params, grads, lr, ascent)


def clip_grad_norm(grads: GradStore, max_norm: float) -> GradStore:
    if max_norm <= 0:
        return grads
    norm = grads.global_norm()
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    out = GradStore()
    for k, v in grads.items():
        out.set_unchecked(k, v * scale)
    return out


def collect_rollout(env: Env, policy: PolicyParams, obs_filter: RunningMeanStd, n: int,
                    rng: np.random.Generator, iteration: int = 0,
                    obs: np.ndarray | None = None,
                    reward_scaler: RewardScaler | None = None) -> tuple[Batch, np.ndarray]:
    """Run the stochastic policy for ``n`` steps, resetting at episode ends.

    Returns the batch and the observation to continue from. Observations are
    normalized with a snapshot of ``obs_filter`` (rewards with the current
    ``reward_scaler`` scale); both are updated from the new data afterwards.
    """
    snap = obs_filter.snapshot()
    scale = reward_scaler.scale if reward_scaler is not None else 1.0
    if obs is None or env.done:
        obs = env.reset()
    dim = env.spec.action_dim
    raw_obs = np.empty((n, env.spec.obs_dim))
    raw_next = np.empty((n, env.spec.obs_dim))
    actions = np.empty((n, dim))
    rewards = np.empty(n)
    ends = np.zeros(n, bool)
    for t in range(n):
        raw_obs[t] = obs
        dist = policy_forward(policy, snap.normalize(obs))
        a = dist.mean + np.exp(dist.log_std) * rng.standard_normal(dim)
        next_obs, r, done = env.step(a)
        actions[t], rewards[t], raw_next[t], ends[t] = a, r, next_obs, done
        obs = env.reset() if done else next_obs
    norm_obs = snap.normalize(raw_obs)
    # behavior densities for the whole batch under the same (frozen) policy
    logp = log_prob_per_dim(policy_forward(policy, norm_obs), actions)
    obs_filter.update(raw_obs)
    if reward_scaler is not None:
        reward_scaler.update(rewards, ends)
    batch = Batch(norm_obs, snap.normalize(raw_next), actions, rewards / scale,
                  terminals=np.zeros(n, bool), episode_ends=ends, logp=logp,
                  iteration=iteration, obs_filter=snap, reward_scale=scale,
                  raw_obs=raw_obs, raw_next_obs=raw_next, raw_rewards=rewards)
    return batch, obs


def deterministic_eval(spec: EnvSpec, policy: PolicyParams, obs_filter: RunningMeanStd,
                       episodes: int, seed: int) -> tuple[float, list[float]]:
    """Mean episodic return of the mean action; episode ``k`` uses its own env seed."""
    returns = []
    for env_seed in stream_seeds(seed, EVAL_STREAM, episodes):
        env = Env(EnvSpec(spec.family, spec.action_dim, spec.episode_cap, spec.noise, env_seed))
        obs, done, total = env.reset(), False, 0.0
        while not done:
            action = policy_forward(policy, obs_filter.normalize(obs)).mean
            obs, r, done = env.step(action)
            total += r
        returns.append(total)
    return float(sum(returns) / len(returns)), returns


def compute_clip_metrics(reports: list[LossReport]) -> tuple[float, float, float]:
    """(mean rho', mean per-dimension rho', fully-clipped fraction) over the given reports."""
    if not reports:
        return 1.0, 1.0, 0.0
    dev = np.mean([mean_dev(r.rho, r.rho_d, "overall") for r in reports])
    dev_d = np.mean([mean_dev(r.rho, r.rho_d, "per_dim") for r in reports])
    clipped = sum(int(r.fully_clipped.sum()) for r in reports)
    total = sum(len(r.fully_clipped) for r in reports)
    return float(dev), float(dev_d), clipped / total


class Trainer:
    def __init__(self, config: TrainConfig, seed: int | None = None):
        self.config = config if seed is None else config.replace(seed=seed)
        cfg = self.config
        self.spec = cfg.env_spec(stream_seeds(cfg.seed, ENV_STREAM, 1)[0])
        init_rng = stream(cfg.seed, INIT_STREAM)
        self.policy = init_policy(self.spec.obs_dim, self.spec.action_dim, init_rng,
                                  shared_std=cfg.shared_std)
        self.value = init_value(self.spec.obs_dim, init_rng)
        self.policy_opt = Adam(self.policy)
        self.value_opt = Adam(self.value)
        self.obs_filter = RunningMeanStd(self.spec.obs_dim)
        self.reward_scaler = RewardScaler(cfg.gamma) if cfg.normalize_rewards else None
        self.buffer = ReplayBuffer(1 if cfg.mode == "ppo" else cfg.replay_length)
        self.env = Env(self.spec)
        self.obs: np.ndarray | None = None
        self.action_rng = stream(cfg.seed, ACTION_STREAM)
        self.minibatch_rng = stream(cfg.seed, MINIBATCH_STREAM)
        self.is_rng = stream(cfg.seed, IS_STREAM)
        self.alpha_is = cfg.alpha_is_init
        self.iteration = 0
        self.env_steps = 0
        self.last_reports: list[LossReport] = []

    def lr(self) -> float:
        cfg = self.config
        return lr_schedule(self.iteration / cfg.total_iterations, cfg.lr_max, cfg.lr_min)

    def evaluate(self, episodes: int | None = None) -> tuple[float, list[float]]:
        return deterministic_eval(self.spec, self.policy, self.obs_filter,
                                  episodes or self.config.eval_episodes, self.config.seed)

    def _select(self) -> list[Batch]:
        cfg = self.config
        if cfg.mode == "ppo":
            return [self.buffer.newest]
        return select_batches(self.buffer, None, cfg.eps_b, cfg.inclusion)

    def train_iteration(self) -> IterationMetrics:
        cfg = self.config
        i = self.iteration
        snapshot = self.policy.copy()
        value_snapshot = self.value.copy()

        batch, self.obs = collect_rollout(self.env, snapshot, self.obs_filter, cfg.horizon,
                                          self.action_rng, i, self.obs, self.reward_scaler)
        self.env_steps += cfg.horizon
        self.buffer.push(batch)
        batches = list(self.buffer)
        if cfg.renormalize_replay:
            # replayed batches are read through this iteration's frozen normalization
            for b in batches[1:]:
                b.renormalize(batch.obs_filter, batch.reward_scale)
        for b, table in zip(batches, compute_tables(batches, snapshot, value_snapshot,
                                                    cfg.gamma, cfg.lam, cfg.estimator)):
            b.table = table

        selected = self._select()
        pool = build_pool(selected, i)
        on_pool = build_pool([batch], i)
        m = len(pool) // cfg.steps_per_epoch
        m_on = min(m, len(on_pool))
        lr = self.lr()

        final_reports: list[LossReport] = []
        final_vloss: list[float] = []
        for epoch in range(cfg.epochs):
            perm = self.minibatch_rng.permutation(len(pool))
            last = epoch == cfg.epochs - 1
            for step in range(cfg.steps_per_epoch):
                mb = pool.take(perm[step * m:(step + 1) * m])
                if cfg.normalize_advantages:
                    mb = mb.with_normalized_advantages()
                on_mb = on_pool.take(self.is_rng.choice(len(on_pool), size=m_on, replace=False))
                report, vloss = self._gradient_step(mb, on_mb, snapshot, lr)
                if last:
                    final_reports.append(report)
                    final_vloss.append(vloss)

        j_is = float(np.mean([r.j_is for r in final_reports]))
        if cfg.mode == "disc" and cfg.adapt_alpha_is:
            stat = j_is if cfg.penalty == "is" else float(np.mean([r.j_kl for r in final_reports]))
            self.alpha_is = update_alpha_is(self.alpha_is, stat, cfg.j_targ)

        self.iteration += 1
        eval_return, _ = self.evaluate()
        dev, dev_d, frac = compute_clip_metrics(final_reports)
        self.last_reports = final_reports
        metrics = IterationMetrics(
            iteration=self.iteration,
            env_steps=self.env_steps,
            eval_return=eval_return,
            mean_rho_dev=dev,
            mean_rho_dev_dim=dev_d,
            frac_clipped=frac,
            batches_selected=len(selected),
            alpha_is=self.alpha_is if cfg.mode == "disc" else 0.0,
            j_is=j_is,
            policy_loss=float(np.mean([r.objective for r in final_reports])),
            value_loss=float(np.mean(final_vloss)),
            lr=lr,
        )
        log.debug("iteration %d: %s", self.iteration, metrics)
        return metrics

    def _gradient_step(self, mb, on_mb, snapshot: PolicyParams, lr: float) -> tuple[LossReport, float]:
        cfg = self.config
        try:
            tape = Tape()
            objective, report = total_policy_loss(mb, on_mb, self.policy, self.alpha_is, cfg.mode,
                                                  cfg.clip_eps, tape, cfg.penalty, snapshot)
            pgrad = tape.backward(objective, self.policy)
            vtape = Tape()
            vloss = value_loss(mb, self.value, vtape)
            vgrad = vtape.backward(vloss, self.value)
        except NonFiniteGradientError as exc:
            raise TrainingError(f"iteration {self.iteration}: {exc}") from exc
        self.policy_opt.step(self.policy, clip_grad_norm(pgrad, cfg.grad_clip), lr, ascent=True)
        self.value_opt.step(self.value, clip_grad_norm(vgrad, cfg.grad_clip), lr, ascent=False)
        return report, float(vloss.value)

    def train(self, iterations: int | None = None, callback=None) -> list[IterationMetrics]:
        rows = []
        for _ in range(iterations or self.config.total_iterations):
            row = self.train_iteration()
            rows.append(row)
            if callback is not None:
                callback(row)
        return rows
