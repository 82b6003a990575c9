"""Binary checkpoints.

Layout::

    DISC-CKPT v1
    meta <nbytes>
    <nbytes of utf-8 config text>
    tensor <name> <ndim> <dim0> ... <dimk>
    <prod(dims) little-endian float64>
    ...
    end

Tensors cover both networks, the observation filter, the reward scaler and
alpha_is. Reading parses and validates the whole file before anything is
constructed, so a damaged file never yields a half-loaded state.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, parse_text, to_text
from .nets import PolicyParams, RewardScaler, RunningMeanStd, ValueParams

MAGIC = b"DISC-CKPT v1"
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    policy: PolicyParams
    value: ValueParams
    obs_filter: RunningMeanStd
    alpha_is: float
    iteration: int = 0
    reward_scaler: RewardScaler | None = None


def _tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {k: v for k, v in ckpt.policy.items()}
    out.update(ckpt.value.items())
    out["obs_filter/mean"] = ckpt.obs_filter.mean
    out["obs_filter/var"] = ckpt.obs_filter.var
    out["obs_filter/count"] = np.array([ckpt.obs_filter.count])
    out["alpha_is"] = np.array([ckpt.alpha_is])
    out["iteration"] = np.array([float(ckpt.iteration)])
    if ckpt.reward_scaler is not None:
        st = ckpt.reward_scaler.stats
        out["reward/mean"], out["reward/var"] = st.mean, st.var
        out["reward/count"] = np.array([st.count])
        out["reward/ret"] = np.array([ckpt.reward_scaler.ret])
    return out


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = to_text(ckpt.config).encode("utf-8")
    parts = [MAGIC + b"\n", b"meta %d\n" % len(meta), meta]
    for name, arr in _tensors(ckpt).items():
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        parts.append(f"tensor {name} {arr.ndim} {dims}".rstrip().encode() + b"\n")
        parts.append(arr.astype(_LE_F64).tobytes())
    parts.append(b"end\n")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def _readline(data: bytes, pos: int) -> tuple[str, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("truncated checkpoint: missing line terminator")
    try:
        return data[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise CheckpointError("corrupted checkpoint: non-ascii record line") from None


def _parse(data: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if not data.startswith(MAGIC + b"\n"):
        if data.startswith(b"DISC-CKPT "):
            version = data[10:data.find(b"\n", 10) if b"\n" in data[:64] else 64]
            raise CheckpointError(f"unsupported checkpoint version {version!r} (expected v1)")
        raise CheckpointError("not a checkpoint: bad header")
    line, pos = _readline(data, len(MAGIC) + 1)
    kind, _, n = line.partition(" ")
    if kind != "meta" or not n.isdigit():
        raise CheckpointError("corrupted checkpoint: missing meta block")
    n = int(n)
    if pos + n > len(data):
        raise CheckpointError("truncated checkpoint: meta block")
    try:
        meta = data[pos:pos + n].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError("corrupted checkpoint: meta block is not utf-8") from None
    pos += n
    tensors: dict[str, np.ndarray] = {}
    while True:
        line, pos = _readline(data, pos)
        if line == "end":
            break
        fields = line.split(" ")
        if len(fields) < 3 or fields[0] != "tensor":
            raise CheckpointError(f"corrupted checkpoint: bad record {line!r}")
        name = fields[1]
        try:
            ndim = int(fields[2])
            shape = tuple(int(d) for d in fields[3:])
        except ValueError:
            raise CheckpointError(f"corrupted checkpoint: bad shape in {line!r}") from None
        if len(shape) != ndim or any(d < 0 for d in shape):
            raise CheckpointError(f"corrupted checkpoint: bad shape in {line!r}")
        if name in tensors:
            raise CheckpointError(f"corrupted checkpoint: duplicate tensor {name}")
        nbytes = 8 * math.prod(shape)
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated checkpoint: tensor {name}")
        tensors[name] = np.frombuffer(data, _LE_F64, math.prod(shape), pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError("corrupted checkpoint: trailing bytes after end")
    return meta, tensors


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    meta, t = _parse(data)
    try:
        config = parse_text(meta, source=f"{path}:meta")
        policy, value = PolicyParams(), ValueParams()
        for name, arr in t.items():
            if name.startswith("pi/"):
                policy[name] = arr
            elif name.startswith("vf/"):
                value[name] = arr
        obs_filter = RunningMeanStd(t["obs_filter/mean"].size)
        obs_filter.mean, obs_filter.var = t["obs_filter/mean"].copy(), t["obs_filter/var"].copy()
        obs_filter.count = float(t["obs_filter/count"][0])
        scaler = None
        if "reward/var" in t:
            scaler = RewardScaler(config.gamma)
            scaler.stats.mean, scaler.stats.var = t["reward/mean"].copy(), t["reward/var"].copy()
            scaler.stats.count = float(t["reward/count"][0])
            scaler.ret = float(t["reward/ret"][0])
        ckpt = Checkpoint(config, policy, value, obs_filter, float(t["alpha_is"][0]),
                          int(t["iteration"][0]), scaler)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing tensor {exc.args[0]}") from None
    except ValueError as exc:
        raise CheckpointError(f"invalid checkpoint contents: {exc}") from exc
    if policy.obs_dim != obs_filter.mean.size or value.obs_dim != obs_filter.mean.size:
        raise CheckpointError("checkpoint networks disagree with the observation filter size")
    if policy.action_dim != config.env_action_dim:
        raise CheckpointError("checkpoint policy width disagrees with env_action_dim in its config")
    return ckpt


def from_trainer(trainer) -> Checkpoint:
    return Checkpoint(trainer.config, trainer.policy.copy(), trainer.value.copy(),
                      trainer.obs_filter.snapshot(), trainer.alpha_is, trainer.iteration,
                      copy.deepcopy(trainer.reward_scaler))
