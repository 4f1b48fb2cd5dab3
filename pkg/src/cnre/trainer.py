"""Epoch-based training of ratio classifiers with validation tracking.

An epoch is ``batches_per_epoch`` gradient steps followed by
``val_batches_per_epoch`` validation mini-batches.  Two numbers are logged per
epoch on the validation data: the training objective itself and ``-I0``, the
negative Monte Carlo mutual-information lower bound, which unlike the loss
does not shift with ``gamma`` and ``K``.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError
from .losses import REGIMES, LossConfig, assemble_contrastive_batch, loss_and_grad, loss_value
from .nn import ARCHITECTURES, AdamState, RatioNet, adam_step, fit_standardizer, save_checkpoint
from .tasks import JointBatch, Task, get_task, sample_joint

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "neg_mi0")


@dataclass
class TrainConfig:
    """Everything that determines a training run.

    ``simulation_budget`` only matters for the fixed-data regimes
    (``fresh_prior`` and ``bootstrap``), where it must cover one epoch:
    ``(batches_per_epoch + val_batches_per_epoch) * batch_size``.
    """

    task: str = "conjugate_gaussian"
    regime: str = "fresh_joint"
    variant: str = "C"
    gamma: float = 1.0
    K: int = 1
    arch: str = "small"
    batch_size: int = 1024
    batches_per_epoch: int = 20
    val_batches_per_epoch: int = 2
    max_epochs: int = 1000
    seed: int = 0
    simulation_budget: int = 22528
    lr: float = 5e-4
    patience: Optional[int] = None
    mi_samples: int = 128
    fixed_val_loss: bool = False
    task_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {sorted(ARCHITECTURES)}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.batches_per_epoch < 1 or self.val_batches_per_epoch < 1:
            raise ConfigError("an epoch needs at least one training and one validation batch")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.mi_samples < 1:
            raise ConfigError("mi_samples must be >= 1")
        self.loss_config  # validates variant/gamma/K
        if self.regime != "fresh_prior" and 2 * self.K > self.batch_size:
            raise ConfigError(
                f"in-batch contrastive sampling needs K <= B/2 (K={self.K}, B={self.batch_size})"
            )
        if self.fixed_data and self.simulation_budget < self.samples_per_epoch:
            raise ConfigError(
                f"simulation_budget {self.simulation_budget} cannot fill one epoch of "
                f"{self.samples_per_epoch} samples"
            )

    @property
    def loss_config(self) -> LossConfig:
        if self.variant == "A":
            return LossConfig("A")
        if self.variant == "B":
            return LossConfig("B", K=self.K)
        return LossConfig(self.variant, gamma=self.gamma, K=self.K)

    @property
    def fixed_data(self) -> bool:
        return self.regime != "fresh_joint"

    @property
    def samples_per_epoch(self) -> int:
        return (self.batches_per_epoch + self.val_batches_per_epoch) * self.batch_size

    @classmethod
    def for_budget(cls, budget: int, **kwargs) -> "TrainConfig":
        """Fixed-data config whose batch size spends ``budget`` in one epoch."""
        bpe = kwargs.get("batches_per_epoch", 20)
        vb = kwargs.get("val_batches_per_epoch", 2)
        kwargs.setdefault("regime", "bootstrap")
        return cls(batch_size=budget // (bpe + vb), simulation_budget=budget, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainReport:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    neg_mi0: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    wall_time: float = 0.0
    stopped_early: bool = False

    @property
    def best_val_loss(self) -> Optional[float]:
        return None if self.best_epoch is None else self.val_loss[self.best_epoch]

    @property
    def best_neg_mi0(self) -> Optional[float]:
        return None if self.best_epoch is None else self.neg_mi0[self.best_epoch]

    def rows(self):
        for i, row in enumerate(zip(self.train_loss, self.val_loss, self.neg_mi0)):
            yield (i, *row)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for row in self.rows():
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return path

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "neg_mi0": self.neg_mi0,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "best_neg_mi0": self.best_neg_mi0,
            "wall_time": self.wall_time,
            "stopped_early": self.stopped_early,
        }


def read_log_csv(path) -> TrainReport:
    report = TrainReport()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            report.train_loss.append(float(row["train_loss"]))
            report.val_loss.append(float(row["val_loss"]))
            report.neg_mi0.append(float(row["neg_mi0"]))
    if report.val_loss:
        report.best_epoch = int(np.argmin(report.val_loss))
    return report


def validate_mi0(net, val_store: JointBatch, M: int, task: Task, rng: np.random.Generator) -> float:
    """Negative Monte Carlo mutual-information bound ``-I0`` on validation pairs.

    ``I0 = mean_n h(theta_n, x_n) - mean_n log((1/M) sum_m exp h(theta_nm, x_n))``
    with ``theta_nm`` drawn from the prior independently for every ``x_n``.

    Parameters
    ----------
    net : callable
        Log-ratio ``h(theta, x)`` evaluated row-wise.
    val_store : JointBatch
        Dependent pairs ``(theta_n, x_n)``.
    M : int
        Marginal prior draws per ``x_n``.
    """
    if M < 1:
        raise ConfigError("M must be >= 1")
    N = len(val_store)
    if N == 0:
        return float("nan")
    joint = np.asarray(net(val_store.theta, val_store.x), dtype=float)
    theta_m = task.sample_prior(N * M, rng)
    x_rep = np.repeat(val_store.x, M, axis=0)
    marg = np.asarray(net(theta_m, x_rep), dtype=float).reshape(N, M)
    log_z = logsumexp(marg, axis=1) - np.log(M)
    return -float(np.mean(joint) - np.mean(log_z))


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def _make_net(cfg: TrainConfig, task: Task, rng) -> RatioNet:
    return RatioNet.from_preset(cfg.arch, task.dim_theta, task.dim_x, rng=rng)


def _epoch_loss(net, batches, cfg_loss, task) -> float:
    vals = [loss_value(net, ind, dep, cfg_loss) for ind, dep in batches]
    return float(np.mean(vals))


def train(cfg: TrainConfig, out_dir=None, task: Optional[Task] = None) -> Tuple[RatioNet, TrainReport]:
    """Train a ratio classifier and return the best-validation network.

    Parameters
    ----------
    cfg : TrainConfig
    out_dir : path-like, optional
        If given, ``checkpoint.npz`` (best epoch), ``log.csv`` and
        ``config.json`` are written there.
    task : Task, optional
        Overrides ``cfg.task`` (useful for custom simulators).

    Returns
    -------
    net : RatioNet
        Eval-mode network with the weights of the epoch with the lowest
        validation loss (the initial weights when ``max_epochs == 0``).
    report : TrainReport
    """
    task = task if task is not None else get_task(cfg.task, **cfg.task_kwargs)
    init_rng, data_rng, train_rng, val_rng = _streams(cfg.seed)
    B, K = cfg.batch_size, cfg.K
    loss_cfg = cfg.loss_config
    val_cfg = LossConfig("C", gamma=1.0, K=1) if cfg.fixed_val_loss else loss_cfg
    val_K = val_cfg.K
    n_train = cfg.batches_per_epoch * B
    n_val = cfg.val_batches_per_epoch * B

    net = _make_net(cfg, task, init_rng)
    adam = AdamState(lr=cfg.lr)

    if cfg.fixed_data:
        store = sample_joint(task, cfg.simulation_budget, data_rng)
        train_store = store[: len(store) - n_val]
        val_store = store[len(store) - n_val:]
        first = train_store[:B]
    else:
        train_store = val_store = None
        first = sample_joint(task, B, data_rng)
    net.standardizer = fit_standardizer(first.theta, first.x)

    report = TrainReport()
    best_state = net.state_dict()
    best_val = np.inf
    since_best = 0
    start = time.perf_counter()

    def contrastive(batch, rng, k=K):
        if cfg.regime == "fresh_joint":
            return assemble_contrastive_batch(task, "fresh_joint", B, k, rng)
        return assemble_contrastive_batch(batch, cfg.regime, B, k, rng, task=task)

    for epoch in range(cfg.max_epochs):
        net.train()
        losses = []
        if cfg.fixed_data:
            order = train_rng.permutation(len(train_store))[:n_train]
        for b in range(cfg.batches_per_epoch):
            if cfg.regime == "fresh_joint" and epoch == 0 and b == 0:
                mini = first
                ind, dep = assemble_contrastive_batch(first, "bootstrap", B, K, train_rng)
            elif cfg.fixed_data:
                mini = train_store[order[b * B:(b + 1) * B]]
                ind, dep = contrastive(mini, train_rng)
            else:
                ind, dep = contrastive(None, train_rng)
            loss, grads = loss_and_grad(net, ind, dep, loss_cfg)
            adam_step(net.parameters(), grads, adam)
            losses.append(loss)

        net.eval()
        if cfg.fixed_data:
            # Same contrastive draws every epoch so validation losses are comparable.
            epoch_val_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
            val_pairs = val_store
            batches = [
                contrastive(val_store[i * B:(i + 1) * B], epoch_val_rng, val_K)
                for i in range(cfg.val_batches_per_epoch)
            ]
        else:
            epoch_val_rng = val_rng
            val_pairs = sample_joint(task, n_val, epoch_val_rng)
            batches = [
                assemble_contrastive_batch(val_pairs[i * B:(i + 1) * B], "bootstrap", B, val_K,
                                           epoch_val_rng)
                for i in range(cfg.val_batches_per_epoch)
            ]
        val = _epoch_loss(net, batches, val_cfg, task)
        nmi = validate_mi0(net, val_pairs, cfg.mi_samples, task, epoch_val_rng)

        report.train_loss.append(float(np.mean(losses)))
        report.val_loss.append(val)
        report.neg_mi0.append(nmi)
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            best_state = net.state_dict()
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                report.stopped_early = True
                break

    net.load_state_dict(best_state)
    net.eval()
    report.wall_time = time.perf_counter() - start

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out / "checkpoint.npz",
            net,
            adam=adam,
            rng=train_rng,
            epoch=-1 if report.best_epoch is None else report.best_epoch,
            metadata={"train_config": cfg.to_dict()},
        )
        report.write_csv(out / "log.csv")
        with open(out / "config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2)
    return net, report
