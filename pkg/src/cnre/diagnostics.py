"""Checks on a trained ratio estimator.

* :func:`importance_diagnostic` -- can a classifier tell ``x ~ p(x|theta)``
  from ``x ~ p(x)`` reweighted by the estimated ratio?  AUC near 0.5 means no.
* :func:`mi_bounds` -- Monte Carlo lower bounds ``I0 >= I1`` on ``I(theta; x)``.
* :func:`c2st` -- classifier two-sample test between sample sets.
* :func:`nreb_illposedness_demo` -- self-normalized importance weights do not
  cancel an ``x``-dependent scale on the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp
from sklearn.metrics import roc_curve
from sklearn.model_selection import KFold, cross_val_score
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .errors import ConfigError, DiagnosticError, ShapeError
from .posterior import Surrogate, estimate_partition
from .tasks import JointBatch, Task, sample_joint


def _ratio_fn(ratio) -> Callable:
    if isinstance(ratio, Surrogate):
        return ratio.log_ratio
    return ratio


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31 - 1))


def _mlp(dim: int, seed: int, max_iter: int) -> MLPClassifier:
    return MLPClassifier(
        hidden_layer_sizes=(10 * dim, 10 * dim),
        activation="relu",
        solver="adam",
        max_iter=max_iter,
        random_state=seed,
    )


@dataclass
class RocReport:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    n_per_class: int = 0
    weighted: bool = True
    theta: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return 0.45 <= self.auc <= 0.55

    def roc_points(self, max_points: int = 101):
        idx = np.unique(np.linspace(0, len(self.fpr) - 1, min(max_points, len(self.fpr))).astype(int))
        return [[float(self.fpr[i]), float(self.tpr[i])] for i in idx]

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "roc_points": self.roc_points(),
            "n_per_class": self.n_per_class,
            "weighted": self.weighted,
            "theta": None if self.theta is None else np.ravel(self.theta).tolist(),
        }


def roc_from_scores(labels, scores, sample_weight=None) -> RocReport:
    """Weighted ROC curve with its trapezoidal area."""
    fpr, tpr, thr = roc_curve(labels, scores, sample_weight=sample_weight)
    return RocReport(thresholds=thr, tpr=tpr, fpr=fpr, auc=float(np.trapezoid(tpr, fpr)))


def importance_diagnostic(
    ratio,
    theta,
    task: Task,
    n_per_class: int = 2000,
    rng: Optional[np.random.Generator] = None,
    weighted: bool = True,
    max_iter: int = 1000,
) -> RocReport:
    """Held-out ROC of a classifier separating ``p(x|theta)`` from reweighted ``p(x)``.

    The positive class is ``x ~ p(x|theta)``.  The negative class is
    ``x ~ p(x)`` with per-example training weights ``r_hat(x|theta)``
    normalized to mean 1.  Half of each class trains a fresh MLP; the other
    half gives the ROC, again weighting the negatives.  With an exact ratio the
    two weighted classes coincide and the AUC is 0.5 up to noise.

    Parameters
    ----------
    ratio : Surrogate or callable
        Log-ratio ``(theta, x) -> (N,)``.
    weighted : bool
        ``False`` drops the weights, which measures whether the classifier
        can separate ``p(x|theta)`` from ``p(x)`` at all (a power check).
    """
    if n_per_class < 100:
        raise ConfigError("n_per_class must be >= 100")
    if rng is None:
        raise ConfigError("importance_diagnostic needs an explicit rng")
    fn = _ratio_fn(ratio)
    theta = np.asarray(theta, dtype=float).reshape(1, task.dim_theta)
    x_pos = task.simulate(np.repeat(theta, n_per_class, axis=0), rng)
    x_neg = sample_joint(task, n_per_class, rng).x
    if weighted:
        log_w = np.asarray(fn(np.repeat(theta, n_per_class, axis=0), x_neg), dtype=float)
        if not np.all(np.isfinite(log_w) | (log_w == -np.inf)) or np.all(log_w == -np.inf):
            raise DiagnosticError("importance weights are non-finite or all zero")
        w = np.exp(log_w - logsumexp(log_w) + np.log(n_per_class))
        if not np.all(np.isfinite(w)) or np.sum(w) <= 0:
            raise DiagnosticError("importance weights are degenerate")
    else:
        w = np.ones(n_per_class)

    half = n_per_class // 2
    perm_pos = rng.permutation(n_per_class)
    perm_neg = rng.permutation(n_per_class)
    tr_p, te_p = perm_pos[:half], perm_pos[half:]
    tr_n, te_n = perm_neg[:half], perm_neg[half:]

    def split(ip, ineg):
        X = np.concatenate([x_pos[ip], x_neg[ineg]])
        y = np.concatenate([np.ones(len(ip)), np.zeros(len(ineg))])
        sw = np.concatenate([np.ones(len(ip)), w[ineg] / np.mean(w[ineg])])
        return X, y, sw

    X_tr, y_tr, w_tr = split(tr_p, tr_n)
    X_te, y_te, w_te = split(te_p, te_n)
    if np.all(w_tr[half:] < 1e-12):
        raise DiagnosticError("all negative-class training weights are ~0")
    scaler = StandardScaler().fit(X_tr)
    clf = _mlp(task.dim_x, _seed(rng), max_iter)
    clf.fit(scaler.transform(X_tr), y_tr, sample_weight=w_tr)
    scores = clf.predict_proba(scaler.transform(X_te))[:, 1]
    report = roc_from_scores(y_te, scores, sample_weight=w_te)
    report.n_per_class = n_per_class
    report.weighted = weighted
    report.theta = theta[0]
    return report


@dataclass
class MIBoundReport:
    i0_hat: float
    i1_hat: float
    N: int
    M: int
    i0_stderr: float = float("nan")
    i1_stderr: float = float("nan")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mi_bounds(ratio, task: Task, N: int, M: int, rng: np.random.Generator,
              store: Optional[JointBatch] = None) -> MIBoundReport:
    """Monte Carlo mutual-information bounds from one shared sample set.

    ``I0 = mean h(theta_n, x_n) - mean_n log z_n`` and
    ``I1 = mean h(theta_n, x_n) - mean_n (z_n - 1)`` with
    ``z_n = (1/M) sum_m exp h(theta_nm, x_n)`` and ``theta_nm`` from the prior.
    Since ``log z <= z - 1`` the first is never below the second.

    Parameters
    ----------
    store : JointBatch, optional
        Dependent pairs to use instead of simulating ``N`` fresh ones.
    """
    if N < 2 or M < 2:
        raise ConfigError("N and M must be >= 2")
    fn = _ratio_fn(ratio)
    pairs = store[:N] if store is not None else sample_joint(task, N, rng)
    N = len(pairs)
    h_joint = np.asarray(fn(pairs.theta, pairs.x), dtype=float)
    theta_m = task.sample_prior(N * M, rng)
    h_marg = np.asarray(fn(theta_m, np.repeat(pairs.x, M, axis=0)), dtype=float).reshape(N, M)
    with np.errstate(over="ignore"):
        s = np.mean(np.expm1(h_marg), axis=1)
    log_z = logsumexp(h_marg, axis=1) - np.log(M)
    # Clamp keeps log z_n <= z_n - 1 exact in floating point.
    log_z = np.minimum(log_z, s)
    t0 = h_joint - log_z
    t1 = h_joint - s
    with np.errstate(invalid="ignore"):
        se0 = float(np.std(t0, ddof=1) / np.sqrt(N))
        se1 = float(np.std(t1, ddof=1) / np.sqrt(N))
    i0 = float(np.mean(h_joint) - np.mean(log_z))
    i1 = float(np.mean(h_joint) - np.mean(s))
    return MIBoundReport(i0_hat=i0, i1_hat=i1, N=N, M=M, i0_stderr=se0, i1_stderr=se1)


def c2st(
    samples_p,
    samples_q,
    rng: np.random.Generator,
    folds: int = 5,
    min_samples: int = 500,
    max_iter: int = 10000,
) -> float:
    """Classifier two-sample test accuracy (0.5 means indistinguishable).

    A fresh MLP with two hidden layers of ``10 * dim`` units is scored by
    ``folds``-fold cross-validated accuracy on z-scored inputs.
    """
    p = np.atleast_2d(np.asarray(samples_p, dtype=float))
    q = np.atleast_2d(np.asarray(samples_q, dtype=float))
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
        raise ShapeError(f"sample dimensions differ: {p.shape} vs {q.shape}")
    if p.shape[0] != q.shape[0]:
        raise ShapeError("c2st needs equal sample counts on both sides")
    if p.shape[0] < min_samples:
        raise ConfigError(f"c2st needs at least {min_samples} samples per side")
    X = np.concatenate([p, q])
    y = np.concatenate([np.zeros(len(p)), np.ones(len(q))])
    seed = _seed(rng)
    model = make_pipeline(StandardScaler(), _mlp(p.shape[1], seed, max_iter))
    cv = KFold(n_splits=folds, shuffle=True, random_state=seed)
    return float(np.mean(cross_val_score(model, X, y, cv=cv, scoring="accuracy")))


def nreb_illposedness_demo(ratio_fn, bias_fn, theta, task: Task, n: int,
                           rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, float]:
    """Self-normalized weights of ``r`` and ``r / C(x)`` over the same ``x ~ p(x)``.

    The two weight sets coincide only when ``C`` is constant on the draws, so
    normalizing over samples does not remove an ``x``-dependent scale.

    Returns
    -------
    weights_1, weights_2 : ndarray, shape (n,)
    max_abs_diff : float
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    fn = _ratio_fn(ratio_fn)
    theta = np.asarray(theta, dtype=float).reshape(1, task.dim_theta)
    x = sample_joint(task, n, rng).x
    log_r = np.asarray(fn(np.repeat(theta, n, axis=0), x), dtype=float)
    log_c = np.log(np.asarray(bias_fn(x), dtype=float).reshape(n))
    w1 = np.exp(log_r - logsumexp(log_r))
    log_r2 = log_r - log_c
    w2 = np.exp(log_r2 - logsumexp(log_r2))
    return w1, w2, float(np.max(np.abs(w1 - w2)))


@dataclass
class DiagnosticsReport:
    """All diagnostics for one surrogate, JSON-serializable via :meth:`to_dict`."""

    z_hat: list
    roc: list
    mi: MIBoundReport
    c2st: Optional[list] = None
    metadata: dict = field(default_factory=dict)

    @property
    def z_hat_stats(self) -> dict:
        z = np.array([e.z_hat for e in self.z_hat])
        if z.size == 0:
            return {}
        return {
            "median": float(np.median(z)),
            "min": float(np.min(z)),
            "max": float(np.max(z)),
            "mean": float(np.mean(z)),
            "values": z.tolist(),
        }

    def to_dict(self) -> dict:
        aucs = [r.auc for r in self.roc]
        return {
            "auc": float(np.mean(aucs)) if aucs else None,
            "roc_points": [r.roc_points() for r in self.roc],
            "roc": [r.to_dict() for r in self.roc],
            "i0_hat": self.mi.i0_hat,
            "i1_hat": self.mi.i1_hat,
            "mi": self.mi.to_dict(),
            "z_hat_stats": self.z_hat_stats,
            "z_hat": [e.to_dict() for e in self.z_hat],
            "c2st": self.c2st,
            "metadata": self.metadata,
        }


def run_diagnostics(
    surrogate: Surrogate,
    rng: np.random.Generator,
    n_x: int = 10,
    M: int = 10_000,
    n_theta: int = 1,
    n_per_class: int = 2000,
    mi_N: int = 1000,
    mi_M: int = 128,
    reference: Optional[list] = None,
    metadata: Optional[dict] = None,
) -> DiagnosticsReport:
    """Partition function, importance ROC, MI bounds and optional C2ST.

    Parameters
    ----------
    reference : list of (x_o, reference_samples, surrogate_samples), optional
        When given, one C2ST accuracy per entry is included.
    """
    task = surrogate.task
    xs = sample_joint(task, n_x, rng).x
    z = [estimate_partition(surrogate, x, M, rng) for x in xs]
    thetas = task.sample_prior(n_theta, rng)
    roc = [importance_diagnostic(surrogate, th, task, n_per_class, rng) for th in thetas]
    mi = mi_bounds(surrogate, task, mi_N, mi_M, rng)
    acc = None
    if reference:
        acc = [c2st(ref, sur, rng) for _, ref, sur in reference]
    return DiagnosticsReport(z_hat=z, roc=roc, mi=mi, c2st=acc, metadata=metadata or {})
