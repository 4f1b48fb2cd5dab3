"""Command-line front end: ``python -m cnre <subcommand> ...``.

Subcommands
-----------
simulate  draw a JointBatch and write ``<out>/joint.csv``
train     train one network; writes ``checkpoint.npz``, ``log.csv``, ``config.json``
sample    draw surrogate posterior samples into ``<out>/samples.csv``
diagnose  partition function, importance ROC, MI bounds (and C2ST) into ``<out>/diagnostics.json``
grid      run a GridSpec; writes ``runs/`` and ``grid_summary.csv``
report    re-aggregate ``runs/`` into ``grid_summary.csv`` and ``curves.csv``

``--seed``, ``--config`` (JSON file) and ``--out`` (directory) are accepted
before or after the subcommand.  Flags given on the command line override
values from ``--config``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diagnostics import run_diagnostics
from .errors import ConfigError, DiagnosticError, SamplingError, ShapeError, UnsupportedError
from .grid import GridSpec, report, run_grid, write_summary
from .nn import load_checkpoint
from .posterior import Surrogate, rejection_sample, slice_sample
from .tasks import TASKS, benchmark_observations, get_task, read_joint_csv, sample_joint, write_joint_csv, write_matrix_csv
from .trainer import TrainConfig, train

USER_ERRORS = (ConfigError, ShapeError, UnsupportedError, SamplingError, DiagnosticError,
               OSError, KeyError, ValueError, json.JSONDecodeError)


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else None,
                        help="random seed (default: the config file's seed, else 0)")
    parser.add_argument("--config", type=Path, default=default, help="JSON config file")
    parser.add_argument("--out", type=Path, default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnre", description=__doc__.split("\n\n")[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("simulate", help="simulate (theta, x) pairs to CSV")
    _global_flags(p, suppress=True)
    p.add_argument("--task", choices=sorted(TASKS), default=None)
    p.add_argument("--n", type=int, default=1000)

    p = sub.add_parser("train", help="train a ratio estimator")
    _global_flags(p, suppress=True)
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--variant", choices=["A", "B", "C"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--k", dest="K", type=int)
    p.add_argument("--arch", choices=["small", "large"])
    p.add_argument("--regime", choices=["fresh_joint", "fresh_prior", "bootstrap"])
    p.add_argument("--epochs", dest="max_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--budget", type=int, help="simulation budget; sets batch size to fill one epoch")
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--fixed-val-loss", dest="fixed_val_loss", action="store_const", const=True)

    p = sub.add_parser("sample", help="sample the surrogate posterior")
    _global_flags(p, suppress=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--x-file", dest="x_file", type=Path, required=True,
                   help="CSV with header; x_* columns (or all columns) of the first row are used")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--method", choices=["rejection", "slice"], default="rejection")
    p.add_argument("--task", choices=sorted(TASKS))

    p = sub.add_parser("diagnose", help="run the diagnostic suite on a checkpoint")
    _global_flags(p, suppress=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--n-x", dest="n_x", type=int, default=10)
    p.add_argument("--M", dest="M", type=int, default=10_000)
    p.add_argument("--n-theta", dest="n_theta", type=int, default=1)
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=2000)
    p.add_argument("--c2st-obs", dest="c2st_obs", type=int, default=0,
                   help="benchmark observations to score with C2ST (needs a reference posterior)")
    p.add_argument("--c2st-samples", dest="c2st_samples", type=int, default=2000)

    p = sub.add_parser("grid", help="run a hyperparameter grid")
    _global_flags(p, suppress=True)
    p.add_argument("--tasks", nargs="+")
    p.add_argument("--variants", nargs="+")
    p.add_argument("--gammas", nargs="+", type=float)
    p.add_argument("--ks", dest="Ks", nargs="+", type=int)
    p.add_argument("--archs", nargs="+")
    p.add_argument("--regimes", nargs="+")
    p.add_argument("--budgets", nargs="+", type=int)
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-obs", dest="n_obs", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="aggregate a grid output directory")
    _global_flags(p, suppress=True)
    return parser


def _load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def _seed(args, cfg: Optional[dict] = None) -> int:
    if args.seed is not None:
        return args.seed
    return int((cfg or {}).get("seed", 0))


def _out(args, default: str) -> Path:
    out = Path(args.out) if args.out is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _task_for_checkpoint(ckpt, name: Optional[str]):
    if name is None:
        name = ckpt.metadata.get("train_config", {}).get("task")
        if name is None:
            raise ConfigError("checkpoint does not record its task; pass --task")
        kwargs = ckpt.metadata["train_config"].get("task_kwargs", {})
        return get_task(name, **kwargs)
    return get_task(name)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    name = args.task or cfg.get("task", "conjugate_gaussian")
    n = args.n if args.n is not None else cfg.get("n", 1000)
    task = get_task(name, **cfg.get("task_kwargs", {}))
    batch = sample_joint(task, n, np.random.default_rng(_seed(args, cfg)))
    path = write_joint_csv(_out(args, ".") / "joint.csv", batch)
    print(path)
    return 0


def cmd_train(args) -> int:
    data = _load_config(args.config)
    for key in ("task", "variant", "gamma", "K", "arch", "regime", "max_epochs", "batch_size",
                "patience", "lr", "fixed_val_loss"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    data["seed"] = _seed(args, data)
    budget = args.budget if args.budget is not None else None
    if budget is not None:
        data.pop("batch_size", None)
        data.setdefault("regime", "bootstrap")
        cfg = TrainConfig.for_budget(budget, **data)
    else:
        cfg = TrainConfig.from_dict(data)
    out = _out(args, "runs/train")
    _, rep = train(cfg, out_dir=out)
    print(json.dumps({"out": str(out), "best_epoch": rep.best_epoch,
                      "best_val_loss": rep.best_val_loss, "best_neg_mi0": rep.best_neg_mi0}))
    return 0


def _read_x(path: Path, dim_x: int) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = [i for i, h in enumerate(header) if h.startswith("x_")] or list(range(len(header)))
    x = data[0, cols]
    if x.size != dim_x:
        raise ShapeError(f"{path}: expected {dim_x} x columns, found {x.size}")
    return x


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    task = _task_for_checkpoint(ckpt, args.task)
    x = _read_x(args.x_file, task.dim_x)
    surrogate = Surrogate.from_net(ckpt.net, task)
    rng = np.random.default_rng(_seed(args))
    if args.method == "rejection":
        draws, rate = rejection_sample(surrogate, x, args.n, rng)
        print(f"acceptance rate {rate:.4g}", file=sys.stderr)
    else:
        draws = slice_sample(surrogate, x, args.n, rng=rng)
    path = write_matrix_csv(_out(args, ".") / "samples.csv", draws.reshape(-1, task.dim_theta))
    print(path)
    return 0


def cmd_diagnose(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    task = _task_for_checkpoint(ckpt, args.task)
    surrogate = Surrogate.from_net(ckpt.net, task)
    rng = np.random.default_rng(_seed(args))
    reference = None
    if args.c2st_obs > 0:
        if not task.has_reference_posterior:
            raise UnsupportedError(f"{task.name} has no reference posterior for C2ST")
        obs = benchmark_observations(task, args.c2st_obs)
        reference = [
            (x_o, task.reference_posterior(x_o, args.c2st_samples, rng),
             rejection_sample(surrogate, x_o, args.c2st_samples, rng)[0])
            for x_o in obs.x
        ]
    rep = run_diagnostics(
        surrogate, rng, n_x=args.n_x, M=args.M, n_theta=args.n_theta,
        n_per_class=args.n_per_class, reference=reference,
        metadata={"checkpoint": str(args.checkpoint), "task": task.name, "seed": _seed(args)},
    )
    path = _out(args, ".") / "diagnostics.json"
    with open(path, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2)
    print(path)
    return 0


def cmd_grid(args) -> int:
    data = _load_config(args.config)
    for key in ("tasks", "variants", "gammas", "Ks", "archs", "regimes", "budgets", "seeds"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.epochs is not None:
        data.setdefault("train", {})["max_epochs"] = args.epochs
    for key in ("n_obs", "n_samples"):
        val = getattr(args, key)
        if val is not None:
            data.setdefault("evaluation", {})[key] = val
    spec = GridSpec.from_dict(data)
    out = _out(args, "grid_out")
    with open(out / "grid_spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, default=str)
    records, rows = run_grid(spec, out_dir=out, jobs=args.jobs, eval_seed=_seed(args))
    failed = [r.run_id for r in records if r.error]
    print(f"{len(records)} runs, {len(failed)} failed -> {out / 'grid_summary.csv'}")
    if not records:
        write_summary(out / "grid_summary.csv", rows)
    return 0


def cmd_report(args) -> int:
    if args.out is None:
        raise ConfigError("report needs --out <grid directory>")
    paths = report(args.out)
    for p in paths.values():
        print(p)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "sample": cmd_sample,
    "diagnose": cmd_diagnose,
    "grid": cmd_grid,
    "report": cmd_report,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return the process exit code (2 for usage errors)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except USER_ERRORS as exc:
        print(f"cnre {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
