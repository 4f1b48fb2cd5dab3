"""Small numpy neural-network engine for ratio estimation.

Everything here runs in float64 on the CPU.  The only model that matters is a
residual MLP with batch normalization mapping ``(theta, x)`` pairs to a scalar
logit, so the engine implements exactly the layers it needs (dense, batch
norm, ReLU, residual block) with hand-written reverse-mode gradients, plus an
Adam optimizer, an input standardizer and a checkpoint container.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from .errors import NumericError, ShapeError, StateError

logger = logging.getLogger(__name__)

#: name -> (hidden_units, n_blocks)
ARCHITECTURES = {
    "small": (50, 2),
    "large": (128, 3),
}

STD_FLOOR = 1e-8
BN_EPS = 1e-8


def _check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite activation in layer {name!r}")


class Dense:
    """Affine layer ``y = x @ W + b``."""

    def __init__(self, name, fan_in, fan_out, rng, bias=True, zero=False):
        self.name = name
        bound = np.sqrt(1.0 / fan_in)
        if zero:
            self.W = np.zeros((fan_in, fan_out))
        else:
            self.W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.b = None
        if bias:
            self.b = np.zeros(fan_out) if zero else rng.uniform(-bound, bound, size=fan_out)
        self._x = None

    def params(self):
        out = {f"{self.name}.W": self.W}
        if self.b is not None:
            out[f"{self.name}.b"] = self.b
        return out

    def forward(self, x, train):
        if train:
            self._x = x
        y = x @ self.W
        if self.b is not None:
            y += self.b
        return y

    def backward(self, g, grads):
        grads[f"{self.name}.W"] = self._x.T @ g
        if self.b is not None:
            grads[f"{self.name}.b"] = g.sum(axis=0)
        return g @ self.W.T


class BatchNorm:
    """Per-feature batch normalization with running statistics for eval mode."""

    def __init__(self, name, features, momentum=0.1, eps=BN_EPS):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(features)
        self.beta = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self._cache = None

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def normalize(self, x, train):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            self._cache = (xhat, inv_std)
            m = self.momentum
            n = x.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_mean *= 1.0 - m
            self.running_mean += m * mean
            self.running_var *= 1.0 - m
            self.running_var += m * unbiased
            return xhat
        return (x - self.running_mean) / np.sqrt(self.running_var + self.eps)

    def forward(self, x, train):
        if train:
            return self.gamma * self.normalize(x, train) + self.beta
        scale = self.gamma / np.sqrt(self.running_var + self.eps)
        x *= scale
        x += self.beta - self.running_mean * scale
        return x

    def backward(self, g, grads):
        xhat, inv_std = self._cache
        grads[f"{self.name}.gamma"] = (g * xhat).sum(axis=0)
        grads[f"{self.name}.beta"] = g.sum(axis=0)
        dxhat = g * self.gamma
        n = g.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )


class ResidualBlock:
    """``relu(h + bn2(dense2(relu(bn1(dense1(h))))))``.

    The dense layers inside the block carry no bias; the following batch norm
    shift makes one redundant.
    """

    def __init__(self, name, width, rng, momentum=0.1, eps=BN_EPS):
        self.name = name
        self.dense1 = Dense(f"{name}.dense1", width, width, rng, bias=False)
        self.bn1 = BatchNorm(f"{name}.bn1", width, momentum, eps)
        self.dense2 = Dense(f"{name}.dense2", width, width, rng, bias=False)
        self.bn2 = BatchNorm(f"{name}.bn2", width, momentum, eps)
        self._masks = None

    def params(self):
        out = {}
        for layer in (self.dense1, self.bn1, self.dense2, self.bn2):
            out.update(layer.params())
        return out

    def buffers(self):
        return {**self.bn1.buffers(), **self.bn2.buffers()}

    def forward(self, h, train):
        if not train:
            a = self.bn1.forward(self.dense1.forward(h, False), False)
            np.maximum(a, 0.0, out=a)
            z = self.bn2.forward(self.dense2.forward(a, False), False)
            z += h
            np.maximum(z, 0.0, out=z)
            _check_finite(self.name, z)
            return z
        a = self.bn1.forward(self.dense1.forward(h, train), train)
        mask1 = a > 0
        a = a * mask1
        _check_finite(self.bn1.name, a)
        z = self.bn2.forward(self.dense2.forward(a, train), train) + h
        mask2 = z > 0
        out = z * mask2
        _check_finite(self.name, out)
        if train:
            self._masks = (mask1, mask2)
        return out

    def backward(self, g, grads):
        mask1, mask2 = self._masks
        g = g * mask2
        skip = g
        g = self.dense2.backward(self.bn2.backward(g, grads), grads)
        g = g * mask1
        g = self.dense1.backward(self.bn1.backward(g, grads), grads)
        return g + skip


@dataclass
class Standardizer:
    """Per-dimension affine standardization of ``theta`` and ``x``."""

    theta_mean: np.ndarray
    theta_std: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray

    @classmethod
    def fit(cls, theta, x) -> "Standardizer":
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if theta.shape[0] == 0 or x.shape[0] == 0:
            raise ShapeError("cannot fit a standardizer on an empty batch")
        stats = []
        for label, arr in (("theta", theta), ("x", x)):
            mean = arr.mean(axis=0)
            std = arr.std(axis=0)
            low = std < STD_FLOOR
            if np.any(low):
                warnings.warn(
                    f"zero-variance {label} dimensions {np.flatnonzero(low).tolist()}; "
                    f"std floored at {STD_FLOOR}",
                    RuntimeWarning,
                    stacklevel=2,
                )
                std = np.where(low, STD_FLOOR, std)
            stats += [mean, std]
        return cls(*stats)

    def apply(self, theta, x):
        theta = (np.asarray(theta, dtype=float) - self.theta_mean) / self.theta_std
        x = (np.asarray(x, dtype=float) - self.x_mean) / self.x_std
        return theta, x

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {
            "standardizer.theta_mean": self.theta_mean,
            "standardizer.theta_std": self.theta_std,
            "standardizer.x_mean": self.x_mean,
            "standardizer.x_std": self.x_std,
        }


def fit_standardizer(batch_theta, batch_x) -> Standardizer:
    return Standardizer.fit(batch_theta, batch_x)


class RatioNet:
    """Residual MLP ``h_w(theta, x)`` returning one logit per row.

    Parameters
    ----------
    dim_theta, dim_x : int
        Dimensions of the parameter and observation vectors.
    hidden_units, n_blocks : int
        Width and depth of the residual trunk.
    rng : numpy.random.Generator, optional
        Source for weight initialization.
    zero_output : bool
        Initialize the output layer to zero so that every logit starts at 0.
    """

    def __init__(
        self,
        dim_theta: int,
        dim_x: int,
        hidden_units: int = 50,
        n_blocks: int = 2,
        rng: Optional[np.random.Generator] = None,
        zero_output: bool = False,
        bn_momentum: float = 0.1,
        bn_eps: float = BN_EPS,
    ):
        rng = np.random.default_rng() if rng is None else rng
        self.dim_theta = int(dim_theta)
        self.dim_x = int(dim_x)
        self.hidden_units = int(hidden_units)
        self.n_blocks = int(n_blocks)
        self.bn_momentum = bn_momentum
        self.bn_eps = bn_eps
        self.input_dim = self.dim_theta + self.dim_x
        self.input = Dense("input", self.input_dim, hidden_units, rng)
        self.blocks = [
            ResidualBlock(f"block{i}", hidden_units, rng, bn_momentum, bn_eps)
            for i in range(n_blocks)
        ]
        self.output = Dense("output", hidden_units, 1, rng, zero=zero_output)
        self.standardizer: Optional[Standardizer] = None
        self.training = True
        self._cached = False

    @classmethod
    def from_preset(cls, preset: str, dim_theta: int, dim_x: int, **kwargs) -> "RatioNet":
        hidden, blocks = ARCHITECTURES[preset]
        return cls(dim_theta, dim_x, hidden_units=hidden, n_blocks=blocks, **kwargs)

    @property
    def config(self) -> dict:
        return {
            "dim_theta": self.dim_theta,
            "dim_x": self.dim_x,
            "hidden_units": self.hidden_units,
            "n_blocks": self.n_blocks,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    def train(self) -> "RatioNet":
        self.training = True
        return self

    def eval(self) -> "RatioNet":
        self.training = False
        self._cached = False
        return self

    def _layers(self):
        return [self.input, *self.blocks, self.output]

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {}
        for layer in self._layers():
            out.update(layer.params())
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for block in self.blocks:
            out.update(block.buffers())
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: v.copy() for k, v in self.parameters().items()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        if self.standardizer is not None:
            state.update({k: v.copy() for k, v in self.standardizer.to_arrays().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        targets = {**self.parameters(), **self.buffers()}
        missing = set(targets) - set(state)
        if missing:
            raise ShapeError(f"state is missing entries: {sorted(missing)}")
        for key, arr in targets.items():
            src = np.asarray(state[key], dtype=float)
            if src.shape != arr.shape:
                raise ShapeError(f"{key}: expected shape {arr.shape}, got {src.shape}")
            arr[...] = src
        if "standardizer.theta_mean" in state:
            self.standardizer = Standardizer(
                *(np.array(state[f"standardizer.{k}"], dtype=float)
                  for k in ("theta_mean", "theta_std", "x_mean", "x_std"))
            )
        else:
            self.standardizer = None

    def _inputs(self, theta, x) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None] if self.dim_theta == 1 else theta[None, :]
        if x.ndim == 1:
            x = x[:, None] if self.dim_x == 1 else x[None, :]
        if theta.ndim != 2 or x.ndim != 2:
            raise ShapeError("theta and x must be 2-D (rows, dims)")
        if theta.shape[0] != x.shape[0]:
            raise ShapeError(f"row mismatch: theta has {theta.shape[0]}, x has {x.shape[0]}")
        if theta.shape[1] != self.dim_theta or x.shape[1] != self.dim_x:
            raise ShapeError(
                f"expected dims ({self.dim_theta}, {self.dim_x}), "
                f"got ({theta.shape[1]}, {x.shape[1]})"
            )
        if self.standardizer is not None:
            theta, x = self.standardizer.apply(theta, x)
        return np.concatenate([theta, x], axis=1)

    def forward(self, theta, x) -> np.ndarray:
        """Logits ``h_w(theta_i, x_i)`` for every row, shape ``(N,)``."""
        h = self._inputs(theta, x)
        train = self.training
        if train and h.shape[0] < 2:
            raise ShapeError("train-mode batch norm needs at least 2 rows")
        h = self.input.forward(h, train)
        _check_finite(self.input.name, h)
        for block in self.blocks:
            h = block.forward(h, train)
        out = self.output.forward(h, train)
        _check_finite(self.output.name, out)
        self._cached = train
        return out[:, 0]

    __call__ = forward

    def backward(self, upstream) -> Dict[str, np.ndarray]:
        """Gradients of ``sum(upstream * logits)`` for every parameter."""
        if not self._cached:
            raise StateError("backward requires a preceding train-mode forward pass")
        g = np.asarray(upstream, dtype=float).reshape(-1, 1)
        grads: Dict[str, np.ndarray] = {}
        for layer in reversed(self._layers()):
            g = layer.backward(g, grads)
        return grads


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step": self.step,
        }


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update applied in place; returns ``params``."""
    for key, p in params.items():
        if key not in grads:
            raise ShapeError(f"missing gradient for {key}")
        if grads[key].shape != p.shape:
            raise ShapeError(f"{key}: gradient shape {grads[key].shape} != {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, p in params.items():
        g = grads[key]
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class Checkpoint:
    net: RatioNet
    adam: Optional[AdamState] = None
    rng_state: Optional[dict] = None
    epoch: int = 0
    metadata: dict = field(default_factory=dict)

    def rng(self) -> Optional[np.random.Generator]:
        if self.rng_state is None:
            return None
        name = self.rng_state["bit_generator"]
        bitgen = getattr(np.random, name)()
        bitgen.state = self.rng_state
        return np.random.Generator(bitgen)


def save_checkpoint(
    path,
    net: RatioNet,
    adam: Optional[AdamState] = None,
    rng: Optional[np.random.Generator] = None,
    epoch: int = 0,
    metadata: Optional[dict] = None,
) -> Path:
    """Write ``net`` (and optional training state) to an ``.npz`` container.

    Arrays are stored under their parameter names; a JSON ``meta`` entry keeps
    the architecture, optimizer hyperparameters, RNG state and epoch.
    """
    path = Path(path)
    arrays = {f"net/{k}": v for k, v in net.state_dict().items()}
    meta = {
        "format": "cnre-checkpoint",
        "version": 1,
        "architecture": net.config,
        "epoch": int(epoch),
        "metadata": metadata or {},
        "adam": None,
        "rng_state": None,
    }
    if adam is not None:
        meta["adam"] = adam.hyperparameters()
        arrays.update({f"adam_m/{k}": v for k, v in adam.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in adam.v.items()})
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "cnre-checkpoint":
            raise ValueError(f"{path} is not a checkpoint file")
        groups: Dict[str, Dict[str, np.ndarray]] = {"net": {}, "adam_m": {}, "adam_v": {}}
        for key in data.files:
            if key == "meta":
                continue
            group, name = key.split("/", 1)
            groups[group][name] = data[key]
    net = RatioNet(**meta["architecture"], rng=np.random.default_rng(0))
    net.load_state_dict(groups["net"])
    net.eval()
    adam = None
    if meta["adam"] is not None:
        adam = AdamState(**meta["adam"], m=groups["adam_m"], v=groups["adam_v"])
    return Checkpoint(
        net=net,
        adam=adam,
        rng_state=meta["rng_state"],
        epoch=meta["epoch"],
        metadata=meta["metadata"],
    )


def numerical_gradient(
    loss_fn: Callable[[], float], params: Dict[str, np.ndarray], step: float = 1e-5
) -> Dict[str, np.ndarray]:
    """Central finite differences of ``loss_fn`` w.r.t. every entry of ``params``.

    ``loss_fn`` is re-evaluated after perturbing each entry in place.
    """
    grads = {}
    for key, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[key] = g
    return grads
