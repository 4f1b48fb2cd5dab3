"""Hyperparameter grids: train, evaluate and aggregate one run per cell.

On-disk layout under ``out_dir``::

    runs/<run_id>/config.json       TrainConfig of the cell
    runs/<run_id>/checkpoint.npz    best-validation network
    runs/<run_id>/log.csv           epoch, train_loss, val_loss, neg_mi0
    runs/<run_id>/diagnostics.json  per-observation C2ST and partition estimates
    runs/<run_id>/record.json       RunRecord (config, version, metrics, paths)
    grid_summary.csv                one row per run plus mean-over-tasks rows
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import subprocess
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .diagnostics import c2st
from .errors import ConfigError, SamplingError
from .posterior import Surrogate, estimate_partition, rejection_sample, slice_sample
from .tasks import benchmark_observations, get_task
from .trainer import TrainConfig, train

SUMMARY_COLUMNS = (
    "task", "variant", "gamma", "K", "arch", "regime", "budget", "seed",
    "c2st_mean", "neg_mi0_best", "z_hat_med", "best_val_loss", "status",
)
GROUP_KEYS = ("variant", "gamma", "K", "arch", "regime", "budget", "seed")
NUMERIC = ("c2st_mean", "neg_mi0_best", "z_hat_med", "best_val_loss")


def version_stamp() -> str:
    from . import __version__

    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


@dataclass
class EvalSettings:
    """How a trained cell is scored."""

    n_obs: int = 10
    n_samples: int = 10_000
    sampler: str = "rejection"
    partition_M: int = 100_000
    c2st_folds: int = 5

    @classmethod
    def from_dict(cls, data: dict) -> "EvalSettings":
        return cls(**data)


@dataclass
class GridSpec:
    """Axes of the grid; every combination of the lists is one cell.

    ``train`` holds TrainConfig overrides shared by all cells.  Variant ``B``
    ignores ``gammas`` and variant ``A`` ignores both ``gammas`` and ``Ks``.
    A ``None`` budget keeps the TrainConfig batch size and budget.
    """

    tasks: List[str] = field(default_factory=list)
    gammas: List[float] = field(default_factory=lambda: [1.0])
    Ks: List[int] = field(default_factory=lambda: [1])
    archs: List[str] = field(default_factory=lambda: ["small"])
    regimes: List[str] = field(default_factory=lambda: ["bootstrap"])
    seeds: List[int] = field(default_factory=lambda: [0])
    budgets: List[Optional[int]] = field(default_factory=lambda: [None])
    variants: List[str] = field(default_factory=lambda: ["C"])
    train: dict = field(default_factory=dict)
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self):
        if isinstance(self.evaluation, dict):
            self.evaluation = EvalSettings.from_dict(self.evaluation)
        self.configs()  # every cell must be valid

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def configs(self) -> List[TrainConfig]:
        out = []
        seen = set()
        for task, variant, gamma, K, arch, regime, budget, seed in itertools.product(
            self.tasks, self.variants, self.gammas, self.Ks, self.archs,
            self.regimes, self.budgets, self.seeds,
        ):
            if variant == "A":
                gamma, K = 1.0, 1
            elif variant == "B":
                gamma = math.inf
            key = (task, variant, gamma, K, arch, regime, budget, seed)
            if key in seen:
                continue
            seen.add(key)
            kwargs = dict(self.train)
            kwargs.update(task=task, variant=variant, gamma=1.0 if variant == "B" else gamma,
                          K=K, arch=arch, regime=regime, seed=seed)
            if budget is not None:
                if regime == "fresh_joint":
                    raise ConfigError("budgets apply to the fixed-data regimes only")
                out.append(TrainConfig.for_budget(int(budget), **kwargs))
            else:
                out.append(TrainConfig(**kwargs))
        return out


@dataclass
class RunRecord:
    run_id: str
    config: dict
    version: str
    seed: int
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)

    def write(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)
        return path

    @classmethod
    def read(cls, path) -> "RunRecord":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def summary_row(self) -> dict:
        c = self.config
        m = self.metrics
        gamma = math.inf if c["variant"] == "B" else c["gamma"]
        return {
            "task": c["task"],
            "variant": c["variant"],
            "gamma": gamma,
            "K": c["K"],
            "arch": c["arch"],
            "regime": c["regime"],
            "budget": c["simulation_budget"] if c["regime"] != "fresh_joint" else "",
            "seed": self.seed,
            "c2st_mean": m.get("c2st_mean", math.nan),
            "neg_mi0_best": m.get("neg_mi0_best", math.nan),
            "z_hat_med": m.get("z_hat_med", math.nan),
            "best_val_loss": m.get("best_val_loss", math.nan),
            "status": "ok" if self.error is None else "failed",
        }


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def run_id(index: int, cfg: TrainConfig) -> str:
    gamma = "inf" if cfg.variant == "B" else f"{cfg.gamma:g}"
    budget = f"_b{cfg.simulation_budget}" if cfg.fixed_data else ""
    return (f"{index:04d}_{cfg.task}_{cfg.variant}_g{gamma}_K{cfg.K}_{cfg.arch}_"
            f"{cfg.regime}{budget}_s{cfg.seed}")


def evaluate_run(net, cfg: TrainConfig, settings: EvalSettings, rng: np.random.Generator) -> dict:
    """C2ST against the reference posterior and ``Z(x)`` at each benchmark observation."""
    task = get_task(cfg.task, **cfg.task_kwargs)
    surrogate = Surrogate.from_net(net, task)
    obs = benchmark_observations(task, settings.n_obs)
    per_obs = []
    for x_o in obs.x:
        entry = {"x_o": x_o.tolist()}
        z = estimate_partition(surrogate, x_o, settings.partition_M, rng)
        entry["z_hat"] = z.z_hat
        entry["log_z_hat"] = z.log_z_hat
        if task.has_reference_posterior and settings.n_samples > 0:
            if settings.sampler == "slice":
                samples = slice_sample(surrogate, x_o, settings.n_samples, rng=rng)
            else:
                try:
                    samples, entry["acceptance"] = rejection_sample(surrogate, x_o, settings.n_samples, rng)
                except SamplingError:
                    samples = slice_sample(surrogate, x_o, settings.n_samples, rng=rng)
                    entry["sampler"] = "slice"
            ref = task.reference_posterior(x_o, settings.n_samples, rng)
            entry["c2st"] = c2st(ref, samples, rng, folds=settings.c2st_folds,
                                 min_samples=min(500, settings.n_samples))
        per_obs.append(entry)
    c2s = [e["c2st"] for e in per_obs if "c2st" in e]
    return {
        "per_observation": per_obs,
        "c2st_mean": float(np.mean(c2s)) if c2s else math.nan,
        "z_hat_med": float(np.median([e["z_hat"] for e in per_obs])) if per_obs else math.nan,
    }


def run_cell(index: int, cfg: TrainConfig, settings: EvalSettings, out_dir=None,
             eval_seed: int = 0) -> RunRecord:
    """Train and score one cell; failures are captured in ``RunRecord.error``."""
    rid = run_id(index, cfg)
    record = RunRecord(run_id=rid, config=cfg.to_dict(), version=version_stamp(), seed=cfg.seed)
    run_dir = None if out_dir is None else Path(out_dir) / "runs" / rid
    try:
        net, report = train(cfg, out_dir=run_dir)
        record.metrics.update(
            best_epoch=report.best_epoch,
            best_val_loss=report.best_val_loss,
            neg_mi0_best=report.best_neg_mi0,
            wall_time=report.wall_time,
        )
        rng = np.random.default_rng(np.random.SeedSequence([eval_seed, index]))
        diag = evaluate_run(net, cfg, settings, rng)
        record.metrics.update(c2st_mean=diag["c2st_mean"], z_hat_med=diag["z_hat_med"])
        record.metrics["c2st"] = [e.get("c2st") for e in diag["per_observation"]]
        record.metrics["z_hat"] = [e["z_hat"] for e in diag["per_observation"]]
        if run_dir is not None:
            with open(run_dir / "diagnostics.json", "w") as fh:
                json.dump(diag, fh, indent=2, default=_json_default)
            record.artifacts = {
                name: str(run_dir / name)
                for name in ("config.json", "checkpoint.npz", "log.csv", "diagnostics.json")
            }
    except Exception as exc:  # grid continues past failing cells
        record.error = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        record.write(run_dir / "record.json")
    return record


def _run_cell_args(args):
    return run_cell(*args)


def run_grid(spec: GridSpec, out_dir=None, jobs: int = 1, eval_seed: Optional[int] = None):
    """Run every cell of ``spec``; returns ``(records, summary_rows)``.

    Cells use their own seed for training and ``(eval_seed, cell index)`` for
    scoring, so results do not depend on ``jobs``.
    """
    configs = spec.configs()
    if eval_seed is None:
        eval_seed = spec.seeds[0] if spec.seeds else 0
    args = [(i, cfg, spec.evaluation, out_dir, eval_seed) for i, cfg in enumerate(configs)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_cell_args, args))
    else:
        records = [run_cell(*a) for a in args]
    rows = aggregate(records)
    if out_dir is not None:
        write_summary(Path(out_dir) / "grid_summary.csv", rows)
    return records, rows


def _nanmean(values):
    arr = np.array([v for v in values if v is not None], dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(np.mean(arr)) if arr.size else math.nan


def aggregate(records: Sequence[RunRecord]) -> List[Dict]:
    """Per-run summary rows followed by rows averaged over tasks (``task == "mean"``).

    A pure function of the records, so re-aggregating is idempotent.
    """
    rows = [r.summary_row() for r in records]
    rows.sort(key=lambda r: tuple(str(r[k]) for k in ("task", *GROUP_KEYS)))
    if len({r["task"] for r in rows}) < 2:
        return rows
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in GROUP_KEYS), []).append(r)
    means = []
    for key, members in groups.items():
        row = {"task": "mean", **dict(zip(GROUP_KEYS, key))}
        for col in NUMERIC:
            row[col] = _nanmean(m[col] for m in members)
        row["status"] = "ok" if all(m["status"] == "ok" for m in members) else "partial"
        means.append(row)
    return rows + means


def write_summary(path, rows: Sequence[Dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in SUMMARY_COLUMNS})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_summary(path) -> List[Dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_records(out_dir) -> List[RunRecord]:
    return [RunRecord.read(p) for p in sorted(Path(out_dir).glob("runs/*/record.json"))]


def report(out_dir) -> Dict[str, Path]:
    """Re-aggregate saved runs into ``grid_summary.csv`` and a tidy ``curves.csv``.

    ``curves.csv`` has one row per (run, epoch) with the cell's axes attached,
    ready for plotting learning curves against ``gamma`` and ``K``.
    """
    out_dir = Path(out_dir)
    records = load_records(out_dir)
    summary = write_summary(out_dir / "grid_summary.csv", aggregate(records))
    curves = out_dir / "curves.csv"
    axes = ("task", "variant", "gamma", "K", "arch", "regime", "budget", "seed")
    with open(curves, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", *axes, "epoch", "train_loss", "val_loss", "neg_mi0"])
        for rec in records:
            log = Path(rec.artifacts.get("log.csv", out_dir / "runs" / rec.run_id / "log.csv"))
            if not log.exists():
                continue
            row = rec.summary_row()
            with open(log, newline="") as lf:
                for entry in csv.DictReader(lf):
                    writer.writerow([rec.run_id, *(row[a] for a in axes), entry["epoch"],
                                     entry["train_loss"], entry["val_loss"], entry["neg_mi0"]])
    return {"summary": summary, "curves": curves}


def rank_correlation(rows: Sequence[Dict], a: str = "c2st_mean", b: str = "neg_mi0_best") -> float:
    """Spearman correlation between two summary columns over per-run rows."""
    from scipy.stats import spearmanr

    pairs = [(float(r[a]), float(r[b])) for r in rows if r["task"] != "mean"]
    pairs = [p for p in pairs if all(map(math.isfinite, p))]
    if len(pairs) < 3:
        return math.nan
    return float(spearmanr(*zip(*pairs)).statistic)
