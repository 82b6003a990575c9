"""Training configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .envs import FAMILIES, EnvSpec
from .objectives import MODES, PENALTIES


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key."""


# Table of mode-dependent defaults; everything else is shared.
MODE_DEFAULTS = {
    "ppo": dict(clip_eps=0.2, replay_length=1, eps_b=0.0, estimator="gae", inclusion="overall"),
    "ppo_amber": dict(clip_eps=0.2, replay_length=64, eps_b=0.1, estimator="gae", inclusion="overall"),
    "disc": dict(clip_eps=0.4, replay_length=64, eps_b=0.1, estimator="gae_v", inclusion="per_dim"),
}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "disc"
    clip_eps: float = 0.4
    horizon: int = 2048
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 10
    steps_per_epoch: int = 32
    eps_b: float = 0.1
    replay_length: int = 64
    inclusion: str = "per_dim"
    estimator: str = "gae_v"
    j_targ: float = 0.0001
    alpha_is_init: float = 1.0
    adapt_alpha_is: bool = True
    penalty: str = "is"
    lr_max: float = 0.0003
    lr_min: float = 0.0001
    total_iterations: int = 500
    normalize_advantages: bool = True
    normalize_rewards: bool = True
    renormalize_replay: bool = True
    grad_clip: float = 0.5
    shared_std: bool = False
    env_family: str = "point_mass"
    env_action_dim: int = 4
    env_episode_cap: int = 200
    env_noise: float = 0.01
    seed: int = 0
    eval_episodes: int = 10

    def __post_init__(self):
        validate(self)

    def env_spec(self, seed: int | None = None) -> EnvSpec:
        return EnvSpec(self.env_family, self.env_action_dim, self.env_episode_cap,
                       self.env_noise, self.seed if seed is None else seed)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _check(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: TrainConfig) -> None:
    _check(cfg.mode in MODES, "mode", f"must be one of {MODES}")
    _check(cfg.clip_eps > 0, "clip_eps", "must be > 0")
    _check(cfg.horizon >= 1, "horizon", "must be >= 1")
    _check(0 < cfg.gamma <= 1, "gamma", "must be in (0, 1]")
    _check(0 <= cfg.lam <= 1, "lam", "must be in [0, 1]")
    _check(cfg.epochs >= 1, "epochs", "must be >= 1")
    _check(cfg.steps_per_epoch >= 1, "steps_per_epoch", "must be >= 1")
    _check(cfg.steps_per_epoch <= cfg.horizon, "steps_per_epoch", "must not exceed horizon")
    _check(cfg.eps_b >= 0, "eps_b", "must be >= 0")
    _check(cfg.replay_length >= 1, "replay_length", "must be >= 1")
    _check(cfg.inclusion in ("overall", "per_dim"), "inclusion", "must be overall or per_dim")
    _check(cfg.estimator in ("gae", "gae_v"), "estimator", "must be gae or gae_v")
    _check(cfg.j_targ > 0, "j_targ", "must be > 0")
    _check(cfg.alpha_is_init >= 0, "alpha_is_init", "must be >= 0")
    _check(cfg.alpha_is_init > 0 or not cfg.adapt_alpha_is, "alpha_is_init",
           "must be > 0 when adapt_alpha_is is on")
    _check(cfg.penalty in PENALTIES, "penalty", f"must be one of {PENALTIES}")
    _check(cfg.lr_min > 0, "lr_min", "must be > 0")
    _check(cfg.lr_max >= cfg.lr_min, "lr_max", "must be >= lr_min")
    _check(cfg.total_iterations >= 1, "total_iterations", "must be >= 1")
    _check(cfg.grad_clip >= 0, "grad_clip", "must be >= 0 (0 disables)")
    _check(cfg.env_family in FAMILIES, "env_family", f"must be one of {FAMILIES}")
    _check(cfg.env_action_dim >= 1, "env_action_dim", "must be >= 1")
    _check(cfg.env_episode_cap >= 1, "env_episode_cap", "must be >= 1")
    _check(cfg.env_noise >= 0, "env_noise", "must be >= 0")
    _check(cfg.eval_episodes >= 1, "eval_episodes", "must be >= 1")


def _field_types() -> dict[str, type]:
    defaults = TrainConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(TrainConfig)}


def _coerce(key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def defaults_for(mode: str) -> dict:
    if mode not in MODE_DEFAULTS:
        raise ConfigError(f"mode: must be one of {MODES}")
    base = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    base.update(MODE_DEFAULTS[mode], mode=mode)
    return base


def parse_text(text: str, mode: str | None = None, source: str = "<config>") -> TrainConfig:
    """Parse ``key=value`` lines; ``mode`` (e.g. from the command line) overrides the file."""
    types = _field_types()
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace(".", "_")
        if key not in types:
            raise ConfigError(f"{key}: unknown key ({source}:{lineno})")
        values[key] = _coerce(key, raw, types[key])
    chosen = mode or values.get("mode") or "disc"
    merged = defaults_for(str(chosen))
    merged.update(values)
    merged["mode"] = chosen
    return TrainConfig(**merged)


def parse_config(path: str | Path, mode: str | None = None) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file {path} does not exist")
    return parse_text(path.read_text(), mode, source=str(path))


def to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
