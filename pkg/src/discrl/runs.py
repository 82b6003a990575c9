"""Run directories: manifest, per-seed metrics CSVs and checkpoints, cross-seed summary.

Layout of ``<out>``::

    manifest.txt
    seeds.csv                   seed, initial and final deterministic return
    seed_<s>/metrics.csv        one row per iteration, raw (no smoothing)
    seed_<s>/final.ckpt
    summary.csv                 per-iteration mean/std across seeds + 10-iteration moving average
    summary.txt                 max average return, improvement over the initial policy
    figures/*.png               written by ``summarize``
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .checkpoint import from_trainer, save_checkpoint
from .config import TrainConfig, parse_text, to_text
from .trainer import METRIC_COLUMNS, IterationMetrics, Trainer

log = logging.getLogger(__name__)

MA_WINDOW = 10
INT_COLUMNS = ("iteration", "env_steps", "batches_selected")


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


class MetricsWriter:
    """CSV sink for IterationMetrics: header once, one flushed line per row."""

    def __init__(self, stream: IO[str], columns: Sequence[str] = METRIC_COLUMNS):
        self.stream = stream
        self.columns = tuple(columns)
        self.stream.write(",".join(self.columns) + "\n")
        self.stream.flush()
        self.rows = 0

    def write(self, row: IterationMetrics | Sequence) -> None:
        values = row.as_row() if isinstance(row, IterationMetrics) else tuple(row)
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, expected {len(self.columns)}")
        self.stream.write(",".join(format_value(v) for v in values) + "\n")
        self.stream.flush()
        self.rows += 1


def write_metrics(writer: MetricsWriter, row) -> None:
    writer.write(row)


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = list(reader)
    return {c: np.array([float(r[c]) for r in rows]) for c in METRIC_COLUMNS}


@dataclass(frozen=True)
class RunManifest:
    config: TrainConfig
    seeds: tuple[int, ...]

    @property
    def run_id(self) -> str:
        text = to_text(self.config) + "seeds=" + ",".join(map(str, self.seeds))
        return hashlib.sha1(text.encode()).hexdigest()[:12]

    def to_text(self) -> str:
        return (f"run_id={self.run_id}\n"
                f"seeds={','.join(map(str, self.seeds))}\n"
                "layout=manifest.txt seeds.csv seed_<s>/metrics.csv seed_<s>/final.ckpt summary.csv summary.txt\n"
                "[config]\n" + to_text(self.config))

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        head, sep, body = text.partition("[config]\n")
        if not sep:
            raise ValueError("manifest has no [config] section")
        fields = dict(line.split("=", 1) for line in head.splitlines() if "=" in line)
        if "seeds" not in fields:
            raise ValueError("manifest has no seeds line")
        return cls(parse_text(body, source="manifest"), parse_seeds(fields["seeds"]))


def parse_seeds(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("at least one seed is required")
    try:
        seeds = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"seeds must be integers, got {text!r}") from None
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate seeds in {text!r}")
    if any(s < 0 for s in seeds):
        raise ValueError("seeds must be non-negative")
    return seeds


def train_seed(config: TrainConfig, seed: int, out: Path, iterations: int | None = None) -> tuple[float, float]:
    """Train one seed into ``out/seed_<seed>``; returns (initial, final) deterministic return."""
    seed_dir = out / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, seed=seed)
    initial, _ = trainer.evaluate()
    final = initial
    with open(seed_dir / "metrics.csv", "w", newline="") as fh:
        writer = MetricsWriter(fh)
        for _ in range(iterations or config.total_iterations):
            row = trainer.train_iteration()
            writer.write(row)
            final = row.eval_return
    save_checkpoint(seed_dir / "final.ckpt", from_trainer(trainer))
    return initial, final


def run_train(config: TrainConfig, seeds: Sequence[int], out: str | Path,
              iterations: int | None = None, figures: bool = True) -> RunManifest:
    if not seeds:
        raise ValueError("at least one seed is required")
    manifest = RunManifest(config, tuple(seeds))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(manifest.to_text())
    results = []
    for seed in manifest.seeds:
        log.info("seed %d: training %s", seed, config.mode)
        results.append((seed, *train_seed(config, seed, out, iterations)))
    with open(out / "seeds.csv", "w", newline="") as fh:
        fh.write("seed,initial_return,final_return\n")
        for seed, initial, final in results:
            fh.write(f"{seed},{format_value(initial)},{format_value(final)}\n")
    summarize(out, figures=figures)
    return manifest


def moving_average(x: np.ndarray, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` values (shorter at the start)."""
    c = np.cumsum(np.concatenate([[0.0], x]))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def improvement_factor(initial: float, best: float) -> float:
    """How many times better ``best`` is than ``initial``: >1 means improvement.

    Returns here are costs (negative), so the ratio is initial/best; for
    positive returns it is best/initial. Mixed signs have no ratio (nan).
    """
    if initial < 0 and best < 0:
        return initial / best
    if initial > 0 and best > 0:
        return best / initial
    return math.nan


@dataclass
class Summary:
    run_id: str
    mode: str
    seeds: tuple[int, ...]
    iterations: int
    initial_return: float
    initial_return_std: float
    max_average_return: float
    max_average_return_std: float
    max_average_iteration: int
    improvement: float
    improvement_factor: float
    per_seed_max_average: tuple[float, ...]

    def to_text(self) -> str:
        lines = []
        for k, v in self.__dict__.items():
            if isinstance(v, tuple):
                v = ",".join(format_value(x) for x in v)
            elif not isinstance(v, str):
                v = format_value(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"


def _seed_dirs(run_dir: Path) -> list[tuple[int, Path]]:
    found = []
    for p in run_dir.glob("seed_*/metrics.csv"):
        try:
            found.append((int(p.parent.name[5:]), p))
        except ValueError:
            continue
    return sorted(found)


def _initial_returns(run_dir: Path) -> dict[int, float]:
    path = run_dir / "seeds.csv"
    if not path.exists():
        return {}
    with open(path, newline="") as fh:
        return {int(r["seed"]): float(r["initial_return"]) for r in csv.DictReader(fh)}


def summarize(run_dir: str | Path, figures: bool = True) -> Summary:
    """Reduce the per-seed CSVs of a run directory into summary.csv and summary.txt."""
    run_dir = Path(run_dir)
    found = _seed_dirs(run_dir)
    if not found:
        raise FileNotFoundError(f"no seed_*/metrics.csv under {run_dir}")
    per_seed = {seed: read_metrics(p) for seed, p in found}
    lengths = {len(m["iteration"]) for m in per_seed.values()}
    n = min(lengths)
    if n == 0:
        raise ValueError(f"{run_dir}: a seed has no metric rows")
    if len(lengths) > 1:
        log.warning("seeds have unequal lengths %s; summarizing the first %d iterations", sorted(lengths), n)
    stacked = {c: np.stack([m[c][:n] for m in per_seed.values()]) for c in METRIC_COLUMNS}
    ma = np.stack([moving_average(r) for r in stacked["eval_return"]])

    columns = ["iteration"]
    data = [stacked["iteration"][0]]
    for c in METRIC_COLUMNS[1:]:
        columns += [f"{c}_mean", f"{c}_std"]
        data += [stacked[c].mean(axis=0), stacked[c].std(axis=0)]
    columns += ["eval_return_ma_mean", "eval_return_ma_std"]
    data += [ma.mean(axis=0), ma.std(axis=0)]
    with open(run_dir / "summary.csv", "w", newline="") as fh:
        writer = MetricsWriter(fh, columns)
        for row in zip(*data):
            writer.write([int(v) if c == "iteration" else v for c, v in zip(columns, row)])

    ma_mean = ma.mean(axis=0)
    best = int(np.argmax(ma_mean))
    seeds = tuple(per_seed)
    inits = _initial_returns(run_dir)
    init_vals = np.array([inits[s] for s in seeds if s in inits])
    init_mean = float(init_vals.mean()) if len(init_vals) else math.nan
    init_std = float(init_vals.std()) if len(init_vals) else math.nan
    mode = "unknown"
    manifest = run_dir / "manifest.txt"
    if manifest.exists():
        try:
            mode = RunManifest.from_text(manifest.read_text()).config.mode
        except ValueError:
            log.warning("%s is unreadable; mode left unknown", manifest)
    summary = Summary(
        run_id=_run_id(run_dir),
        mode=mode,
        seeds=seeds,
        iterations=n,
        initial_return=init_mean,
        initial_return_std=init_std,
        max_average_return=float(ma_mean[best]),
        max_average_return_std=float(ma[:, best].std()),
        max_average_iteration=int(stacked["iteration"][0][best]),
        improvement=float(ma_mean[best] - init_mean),
        improvement_factor=improvement_factor(init_mean, float(ma_mean[best])),
        per_seed_max_average=tuple(float(v) for v in ma.max(axis=1)),
    )
    (run_dir / "summary.txt").write_text(summary.to_text())
    if figures:
        from .report import render_run
        render_run(run_dir, stacked, ma, summary)
    return summary


def _run_id(run_dir: Path) -> str:
    manifest = run_dir / "manifest.txt"
    if manifest.exists():
        for line in manifest.read_text().splitlines():
            if line.startswith("run_id="):
                return line[7:]
    return "unknown"


def read_summary(path: str | Path) -> dict[str, str]:
    return dict(line.split("=", 1) for line in Path(path).read_text().splitlines() if "=" in line)


def iter_rows(metrics: dict[str, np.ndarray]) -> Iterable[dict[str, float]]:
    n = len(metrics["iteration"])
    for i in range(n):
        yield {c: metrics[c][i] for c in METRIC_COLUMNS}
