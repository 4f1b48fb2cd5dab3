"""Contrastive classification losses for likelihood-to-evidence ratio estimation.

Three variants share one classifier ``h(theta, x)``:

* ``A`` -- binary: dependent pairs vs. independent pairs.
* ``B`` -- multiclass: which of ``K`` candidates generated ``x``.
* ``C`` -- multiclass with an extra "nothing generated x" class, weighted by
  the odds ``gamma`` of a dependent draw.  ``gamma=1, K=1`` reproduces ``A``
  and ``gamma -> inf`` reproduces ``B``.

Logit arrays follow the batch layout ``(B, K)``: row ``b`` holds
``h(theta_k^(b), x^(b))`` for ``k = 1..K``.  In a dependent batch the
generating parameter always sits in the last slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NumericError, ShapeError

REGIMES = ("fresh_joint", "fresh_prior", "bootstrap")


@dataclass(frozen=True)
class LossConfig:
    """Loss variant and its class weights.

    ``p0 = 1 / (1 + gamma)`` is the weight of the independent class and
    ``pK = gamma / (K (1 + gamma))`` the weight of each dependent class.
    """

    variant: str = "C"
    gamma: float = 1.0
    K: int = 1

    def __post_init__(self):
        variant = str(self.variant).upper()
        object.__setattr__(self, "variant", variant)
        if variant not in ("A", "B", "C"):
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if variant == "A":
            if self.gamma != 1.0 or self.K != 1:
                raise ConfigError("variant A is defined only for gamma=1, K=1")
        if variant == "B":
            object.__setattr__(self, "gamma", float("inf"))
        elif not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be positive and finite, got {self.gamma}")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be an integer >= 1, got {self.K}")
        object.__setattr__(self, "K", int(self.K))

    @property
    def p0(self) -> float:
        return 0.0 if np.isinf(self.gamma) else 1.0 / (1.0 + self.gamma)

    @property
    def pK(self) -> float:
        if np.isinf(self.gamma):
            return 1.0 / self.K
        return self.gamma / (self.K * (1.0 + self.gamma))


@dataclass
class ContrastiveBatch:
    """``theta``: ``(B, K, dim_theta)`` candidates compared against ``x``: ``(B, dim_x)``."""

    theta: np.ndarray
    x: np.ndarray
    regime: str = "bootstrap"
    dependent: bool = False

    def __post_init__(self):
        if self.theta.ndim != 3 or self.x.ndim != 2:
            raise ShapeError("theta must be (B, K, d_theta) and x must be (B, d_x)")
        if self.theta.shape[0] != self.x.shape[0]:
            raise ShapeError("theta and x disagree on batch size")

    @property
    def B(self) -> int:
        return self.theta.shape[0]

    @property
    def K(self) -> int:
        return self.theta.shape[1]

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Flattened ``(B*K, d)`` arrays, row ``b*K + k`` pairs ``theta[b, k]`` with ``x[b]``."""
        B, K, d = self.theta.shape
        return self.theta.reshape(B * K, d), np.repeat(self.x, K, axis=0)


LogitFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _check_logits(h):
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite logit")
    return h


def nrec_class_log_probs(logits, gamma: float, K: Optional[int] = None) -> np.ndarray:
    """Log class probabilities ``log q(y=0..K | Theta, x)``.

    ``logits`` has shape ``(..., K)``; the result has shape ``(..., K+1)``
    with the independent class first.
    """
    h = _check_logits(logits)
    if K is None:
        K = h.shape[-1]
    if h.shape[-1] != K:
        raise ShapeError(f"expected {K} logits, got {h.shape[-1]}")
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    dep = np.log(gamma) + h
    log_k = np.full(h.shape[:-1] + (1,), np.log(K))
    scores = np.concatenate([log_k, dep], axis=-1)
    return scores - logsumexp(scores, axis=-1, keepdims=True)


def nrec_loss_from_logits(h_indep, h_dep, gamma: float):
    """Empirical NRE-C loss and its gradient w.r.t. both logit arrays.

    Returns ``(loss, d_indep, d_dep)`` with gradients shaped like the inputs.
    """
    h_indep = _check_logits(h_indep)
    h_dep = _check_logits(h_dep)
    if h_indep.shape != h_dep.shape:
        raise ShapeError(f"logit shapes differ: {h_indep.shape} vs {h_dep.shape}")
    B, K = h_dep.shape
    w0 = 1.0 / (1.0 + gamma)
    w1 = gamma / (1.0 + gamma)
    lp_i = nrec_class_log_probs(h_indep, gamma, K)
    lp_d = nrec_class_log_probs(h_dep, gamma, K)
    loss = -(w0 * lp_i[:, 0].sum() + w1 * lp_d[:, K].sum()) / B
    # d/dh_k of -log q0 is q_k;  d/dh_k of -log qK is q_k - [k == K]
    d_indep = w0 * np.exp(lp_i[:, 1:]) / B
    d_dep = np.exp(lp_d[:, 1:])
    d_dep[:, -1] -= 1.0
    d_dep *= w1 / B
    return float(loss), d_indep, d_dep


def nrea_loss_from_logits(f_indep, f_dep):
    """Binary cross-entropy with equal class weights; returns ``(loss, d_indep, d_dep)``."""
    f_indep = _check_logits(f_indep).reshape(-1)
    f_dep = _check_logits(f_dep).reshape(-1)
    if f_indep.shape != f_dep.shape:
        raise ShapeError("NRE-A needs equally many dependent and independent pairs")
    B = f_dep.shape[0]
    # log(1 - sigmoid(f)) = -log(1 + e^f);  log sigmoid(f) = -log(1 + e^-f)
    loss = (np.logaddexp(0.0, f_indep).sum() + np.logaddexp(0.0, -f_dep).sum()) / (2 * B)
    sig_i = np.exp(-np.logaddexp(0.0, -f_indep))
    sig_d = np.exp(-np.logaddexp(0.0, -f_dep))
    return float(loss), sig_i / (2 * B), (sig_d - 1.0) / (2 * B)


def nreb_loss_from_logits(g_dep):
    """Softmax cross-entropy at the last slot; returns ``(loss, d_dep)``."""
    g = _check_logits(g_dep)
    B = g.shape[0]
    logp = g - logsumexp(g, axis=1, keepdims=True)
    loss = -logp[:, -1].sum() / B
    d = np.exp(logp)
    d[:, -1] -= 1.0
    return float(loss), d / B


def _logits(fn: LogitFn, *batches: ContrastiveBatch):
    """Evaluate ``fn`` on all pairs of the batches in a single call.

    One call keeps train-mode batch statistics shared across both loss terms.
    """
    thetas, xs = zip(*(b.pairs() for b in batches))
    h = np.asarray(fn(np.concatenate(thetas), np.concatenate(xs)), dtype=float)
    out, start = [], 0
    for b in batches:
        n = b.B * b.K
        out.append(h[start:start + n].reshape(b.B, b.K))
        start += n
    return out


def _check_pair(batch_indep, batch_dep, K=None):
    if K is not None and batch_dep.K != K:
        raise ShapeError(f"batches hold K={batch_dep.K} candidates, config expects K={K}")
    if batch_indep.K != batch_dep.K:
        raise ShapeError(f"K mismatch: {batch_indep.K} vs {batch_dep.K}")
    if batch_indep.B != batch_dep.B:
        raise ShapeError(f"B mismatch: {batch_indep.B} vs {batch_dep.B}")


def loss_nrec(net: LogitFn, batch_indep: ContrastiveBatch, batch_dep: ContrastiveBatch,
              cfg: LossConfig) -> float:
    """NRE-C loss of ``net`` (or any vectorized log-ratio callable)."""
    if cfg.variant == "B":
        raise ConfigError("loss_nrec needs a finite gamma; use loss_nreb for variant B")
    _check_pair(batch_indep, batch_dep, cfg.K)
    h_i, h_d = _logits(net, batch_indep, batch_dep)
    return nrec_loss_from_logits(h_i, h_d, cfg.gamma)[0]


def loss_nrea(net: LogitFn, indep_pairs: ContrastiveBatch, dep_pairs: ContrastiveBatch) -> float:
    if indep_pairs.K != 1 or dep_pairs.K != 1:
        raise ShapeError("NRE-A compares single pairs (K=1)")
    _check_pair(indep_pairs, dep_pairs)
    f_i, f_d = _logits(net, indep_pairs, dep_pairs)
    return nrea_loss_from_logits(f_i, f_d)[0]


def loss_nreb(net: LogitFn, dep_batch: ContrastiveBatch) -> float:
    (g,) = _logits(net, dep_batch)
    return nreb_loss_from_logits(g)[0]


def loss_and_grad(net, batch_indep: ContrastiveBatch, batch_dep: ContrastiveBatch,
                  cfg: LossConfig):
    """Loss for ``cfg.variant`` and parameter gradients of a train-mode :class:`RatioNet`.

    Variant B ignores ``batch_indep``.
    """
    if cfg.variant == "B":
        (g,) = _logits(net.forward, batch_dep)
        loss, d = nreb_loss_from_logits(g)
        return loss, net.backward(d.reshape(-1))
    _check_pair(batch_indep, batch_dep, cfg.K)
    h_i, h_d = _logits(net.forward, batch_indep, batch_dep)
    if cfg.variant == "A":
        loss, d_i, d_d = nrea_loss_from_logits(h_i, h_d)
    else:
        loss, d_i, d_d = nrec_loss_from_logits(h_i, h_d, cfg.gamma)
    upstream = np.concatenate([d_i.reshape(-1), d_d.reshape(-1)])
    return loss, net.backward(upstream)


def loss_value(net, batch_indep, batch_dep, cfg: LossConfig) -> float:
    """Loss of any variant without gradients."""
    if cfg.variant == "B":
        return loss_nreb(net, batch_dep)
    if cfg.variant == "A":
        return loss_nrea(net, batch_indep, batch_dep)
    return loss_nrec(net, batch_indep, batch_dep, cfg)


def zero_logit_loss(gamma: float, K: int) -> float:
    """NRE-C loss of the constant classifier ``h = 0``."""
    return (np.log1p(gamma) + gamma * np.log(K * (1.0 + gamma) / gamma)) / (1.0 + gamma)


def _shift_indices(B: int, offsets) -> np.ndarray:
    """``(B, len(offsets))`` indices: row ``b`` gets ``(b + o) % B`` per offset."""
    return (np.arange(B)[:, None] + np.asarray(offsets, dtype=int)[None, :]) % B


def assemble_contrastive_batch(source, regime: str, B: int, K: int,
                               rng: np.random.Generator, task=None):
    """Build the independent and dependent batches for one gradient step.

    Parameters
    ----------
    source : Task or JointBatch
        A live task for ``fresh_joint`` (``B`` pairs are simulated); a
        mini-batch of exactly ``B`` stored pairs otherwise.
    regime : {"fresh_joint", "fresh_prior", "bootstrap"}
        ``fresh_joint`` and ``bootstrap`` reuse the mini-batch's own
        parameters as candidates via circular shifts: offsets ``1..K`` for
        the independent term and ``K+1..2K-1`` for the dependent term, so no
        ``x`` meets the same parameter twice and none meets its own in the
        independent term.  ``fresh_prior`` draws ``B*K`` parameters from the
        prior and reuses a reshuffled subset of them for the dependent term.
    task : Task, optional
        Prior to draw from under ``fresh_prior`` (defaults to ``source``).

    Returns
    -------
    (ContrastiveBatch, ContrastiveBatch)
        Independent and dependent batches; the dependent batch holds the
        generating parameter in slot ``K``.
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if K < 1:
        raise ConfigError("K must be >= 1")
    if regime == "fresh_joint":
        if not hasattr(source, "simulate"):
            raise ConfigError("fresh_joint needs a live task to simulate from")
        from .tasks import sample_joint

        batch = sample_joint(source, B, rng)
    else:
        batch = source
        if hasattr(batch, "simulate"):
            raise ConfigError(f"{regime} needs a fixed batch of stored pairs")
        if len(batch) != B:
            raise ShapeError(f"expected a mini-batch of {B} pairs, got {len(batch)}")
    theta, x = batch.theta, batch.x
    d = theta.shape[1]

    if regime in ("fresh_joint", "bootstrap"):
        if 2 * K > B:
            raise ConfigError(f"bootstrap contrastive sampling needs K <= B/2 (K={K}, B={B})")
        indep = theta[_shift_indices(B, range(1, K + 1))]
        dep = np.empty((B, K, d))
        dep[:, : K - 1] = theta[_shift_indices(B, range(K + 1, 2 * K))]
        dep[:, K - 1] = theta
    else:
        prior = task if task is not None else getattr(source, "task", None)
        if prior is None:
            raise ConfigError("fresh_prior needs a task to draw prior samples from")
        fresh = prior.sample_prior(B * K, rng)
        indep = fresh.reshape(B, K, d)
        dep = np.empty((B, K, d))
        if K > 1:
            dep[:, : K - 1] = fresh[rng.permutation(B * K)[: B * (K - 1)]].reshape(B, K - 1, d)
        dep[:, K - 1] = theta
    return (
        ContrastiveBatch(indep, x, regime, dependent=False),
        ContrastiveBatch(dep, x, regime, dependent=True),
    )
