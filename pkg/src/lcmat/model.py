"""Softmax classifiers with closed-form last-layer curvature.

Two architectures share one classifier head:

* ``linear``: logits = x @ W + b
* ``mlp``: h = tanh(x @ W1 + b1), logits = h @ W + b

Last-layer vectors (gradients, Hessian diagonals, perturbations) use the
layout ``k = j * c + t`` for ``W[j, t]`` followed by ``feat_dim * c + t``
for ``b[t]``, i.e. ``p = (feat_dim + 1) * c`` entries. Hidden-layer
parameters never enter these vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DataError, Dataset
from .numerics import Rng, as_rng, log_softmax, softmax

CHECKPOINT_MAGIC = b"LCM1"
CHECKPOINT_VERSION = 1
_ARCH_TAGS = {"linear": 0, "mlp": 1}


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True, eq=False)
class ModelState:
    arch: str
    W: np.ndarray
    b: np.ndarray
    W1: np.ndarray | None = None
    b1: np.ndarray | None = None
    loss_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.arch not in _ARCH_TAGS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if (self.arch == "mlp") != (self.W1 is not None):
            raise ValueError("hidden weights are required for, and only for, the mlp")
        for name in ("W", "b", "W1", "b1"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"parameter {name} is not finite")

    @property
    def in_dim(self) -> int:
        return (self.W1 if self.arch == "mlp" else self.W).shape[0]

    @property
    def feat_dim(self) -> int:
        return self.W.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W.shape[1]

    @property
    def last_layer_dim(self) -> int:
        return (self.feat_dim + 1) * self.n_classes

    # parameter vector views -------------------------------------------------
    def last_layer_vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    def with_last_layer(self, vec) -> "ModelState":
        vec = np.asarray(vec, dtype=np.float64)
        q, c = self.feat_dim, self.n_classes
        return replace(self, W=vec[: q * c].reshape(q, c).copy(), b=vec[q * c:].copy(),
                       loss_history=())

    def param_vector(self) -> np.ndarray:
        parts = [self.W.ravel(), self.b]
        if self.arch == "mlp":
            parts = [self.W1.ravel(), self.b1] + parts
        return np.concatenate(parts)

    def with_params(self, vec) -> "ModelState":
        vec = np.asarray(vec, dtype=np.float64)
        off = 0
        kw = {}
        if self.arch == "mlp":
            n1 = self.W1.size
            kw["W1"] = vec[off:off + n1].reshape(self.W1.shape).copy()
            off += n1
            kw["b1"] = vec[off:off + self.b1.size].copy()
            off += self.b1.size
        kw["W"] = vec[off:off + self.W.size].reshape(self.W.shape).copy()
        off += self.W.size
        kw["b"] = vec[off:off + self.b.size].copy()
        return replace(self, loss_history=(), **kw)


def init_model(rng, in_dim: int, n_classes: int, arch: str = "linear",
               hidden: int = 32) -> ModelState:
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = as_rng(rng)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return (rng.uniform(-bound, bound, (fan_in, fan_out)),
                rng.uniform(-bound, bound, fan_out))

    if arch == "linear":
        W, b = layer(in_dim, n_classes)
        return ModelState("linear", W, b)
    if arch == "mlp":
        W1, b1 = layer(in_dim, hidden)
        W, b = layer(hidden, n_classes)
        return ModelState("mlp", W, b, W1, b1)
    raise ValueError(f"unknown architecture {arch!r}")


# -- forward -----------------------------------------------------------------

def _check_input(m: ModelState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != m.in_dim:
        raise ValueError(f"input dimension {X.shape[-1]} does not match model input {m.in_dim}")
    return X


def features(m: ModelState, X) -> np.ndarray:
    """Penultimate features: ``X`` itself for the linear probe."""
    X = _check_input(m, X)
    if m.arch == "mlp":
        return np.tanh(X @ m.W1 + m.b1)
    return X


def logits(m: ModelState, X) -> np.ndarray:
    return features(m, X) @ m.W + m.b


def forward(m: ModelState, x):
    """Return ``(probs, features)`` for one sample or a batch of rows."""
    H = features(m, x)
    return softmax(H @ m.W + m.b), H


def predict(m: ModelState, X) -> np.ndarray:
    return np.argmax(logits(m, X), axis=-1)


def accuracy(m: ModelState, ds: Dataset) -> float:
    if ds.n == 0:
        return float("nan")
    return float(np.mean(predict(m, ds.features) == ds.labels))


def per_sample_losses(m: ModelState, X, y) -> np.ndarray:
    ls = log_softmax(logits(m, X))
    y = np.asarray(y)
    return -ls[np.arange(len(y)), y]


def mean_loss(m: ModelState, ds: Dataset) -> float:
    """Mean cross-entropy over ``ds``."""
    return float(per_sample_losses(m, ds.features, ds.labels).mean())


# -- last-layer curvature ----------------------------------------------------

def _residual(P: np.ndarray, y) -> np.ndarray:
    R = P.copy()
    R[np.arange(len(R)), np.asarray(y)] -= 1.0
    return R


def _outer_layout(H: np.ndarray, R: np.ndarray) -> np.ndarray:
    Ht = np.concatenate([H, np.ones((H.shape[0], 1))], axis=1)
    return (Ht[:, :, None] * R[:, None, :]).reshape(H.shape[0], -1)


def per_sample_gradients(m: ModelState, X, y) -> np.ndarray:
    """Rows of last-layer gradients ``feat_j * (p_t - 1[t=y])`` in the documented layout."""
    P, H = forward(m, np.atleast_2d(X))
    return _outer_layout(H, _residual(P, np.atleast_1d(y)))


def per_sample_hessian_diags(m: ModelState, X, y) -> np.ndarray:
    """Rows of last-layer Hessian diagonals ``feat_j**2 * p_t * (1 - p_t)``.

    Independent of the label; ``y`` is accepted for symmetry with the
    gradient call.
    """
    P, H = forward(m, np.atleast_2d(X))
    out = _outer_layout(H * H, P * (1.0 - P))
    assert out.min(initial=0.0) >= 0.0
    return out


def per_sample_gradient(m: ModelState, x, y) -> np.ndarray:
    return per_sample_gradients(m, np.asarray(x)[None, :], [y])[0]


def per_sample_hessian_diag(m: ModelState, x, y) -> np.ndarray:
    return per_sample_hessian_diags(m, np.asarray(x)[None, :], [y])[0]


def last_layer_mean_gradient(m: ModelState, ds: Dataset) -> np.ndarray:
    """Gradient of :func:`mean_loss` w.r.t. the last layer, by backprop."""
    P, H = forward(m, ds.features)
    dZ = _residual(P, ds.labels) / ds.n
    return np.concatenate([(H.T @ dZ).ravel(), dZ.sum(axis=0)])


# -- full-parameter gradients and training -----------------------------------

def loss_and_grad(m: ModelState, X, y, weights=None):
    """Weighted mean cross-entropy and its gradient over every parameter.

    Returns ``(loss, grads)`` where ``grads`` matches :meth:`ModelState.param_vector`.
    ``weights`` (if given) are normalized to sum to one over the batch.
    """
    X = _check_input(m, X)
    y = np.asarray(y)
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
    if m.arch == "mlp":
        H = np.tanh(X @ m.W1 + m.b1)
    else:
        H = X
    Z = H @ m.W + m.b
    ls = log_softmax(Z)
    loss = float(-(w * ls[np.arange(n), y]).sum())
    dZ = _residual(np.exp(ls), y) * w[:, None]
    parts = [(H.T @ dZ).ravel(), dZ.sum(axis=0)]
    if m.arch == "mlp":
        dA = (dZ @ m.W.T) * (1.0 - H * H)
        parts = [(X.T @ dA).ravel(), dA.sum(axis=0)] + parts
    return loss, np.concatenate(parts)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    arch: str = "linear"
    hidden: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def train(m: ModelState, ds: Dataset, cfg: TrainConfig, weights=None) -> ModelState:
    """Minibatch SGD with heavy-ball momentum and L2 weight decay.

    Each epoch shuffles with the seeded stream. Per-epoch mean minibatch
    losses are stored on the returned state as ``loss_history``.
    """
    if ds.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.epochs == 0:
        return m
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (ds.n,) or np.any(weights < 0):
            raise ValueError("weights must be one non-negative value per row")
    rng = Rng(cfg.seed).spawn(1)
    theta = m.param_vector()
    vel = np.zeros_like(theta)
    X, y = ds.features, ds.labels
    history = []
    bs = min(cfg.batch_size, ds.n)
    for epoch in range(cfg.epochs):
        order = rng.permutation(ds.n)
        total, batches = 0.0, 0
        for start in range(0, ds.n, bs):
            idx = order[start:start + bs]
            bw = None if weights is None else weights[idx]
            if bw is not None and bw.sum() == 0:
                continue
            loss, g = loss_and_grad(m.with_params(theta), X[idx], y[idx], bw)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            g = g + cfg.weight_decay * theta
            vel = cfg.momentum * vel + g
            theta = theta - cfg.learning_rate * vel
            total += loss
            batches += 1
        mean = total / max(batches, 1)
        if not (np.isfinite(mean) and np.all(np.isfinite(theta))):
            raise DivergenceError(epoch, mean)
        history.append(mean)
    return replace(m.with_params(theta), loss_history=tuple(history))


def fit(ds: Dataset, cfg: TrainConfig, weights=None) -> ModelState:
    """Fresh seeded model trained on ``ds``."""
    m0 = init_model(Rng(cfg.seed).spawn(0), ds.d, ds.class_count, cfg.arch, cfg.hidden)
    return train(m0, ds, cfg, weights)


# -- checkpoints -------------------------------------------------------------

_CKPT_HEADER = struct.Struct("<4sHBIII")


def save_checkpoint(m: ModelState, path) -> None:
    """LCM1: magic, u16 version, u8 arch tag, u32 in_dim, u32 feat_dim, u32 classes, f64 params."""
    head = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _ARCH_TAGS[m.arch],
                             m.in_dim, m.feat_dim, m.n_classes)
    Path(path).write_bytes(head + m.param_vector().astype("<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, tag, in_dim, feat, c = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    arch = {v: k for k, v in _ARCH_TAGS.items()}.get(tag)
    if arch is None:
        raise DataError(f"{path}: unknown architecture tag {tag}")
    params = np.frombuffer(raw, dtype="<f8", offset=_CKPT_HEADER.size).astype(np.float64)
    if arch == "linear":
        shell = ModelState("linear", np.zeros((in_dim, c)), np.zeros(c))
    else:
        shell = ModelState("mlp", np.zeros((feat, c)), np.zeros(c),
                           np.zeros((in_dim, feat)), np.zeros(feat))
    if params.size != shell.param_vector().size:
        raise DataError(f"{path}: parameter payload has {params.size} values, "
                         f"expected {shell.param_vector().size}")
    return shell.with_params(params)
