"""LCMat-C: condensed synthetic sets from gradient and gradient-variance matching.

The objective at a parameter state ``theta`` is::

    sum_y D(gbar_T[y], gbar_S[y]) + rho / 2 * sum_k |Var(G_T)_k - Var(G_S)_k|

where ``gbar[y]`` is the class-``y`` mean of per-sample last-layer
gradients and ``Var`` the unbiased per-coordinate variance over the whole
set. ``theta`` follows full-batch gradient descent on ``T`` and is
re-drawn at the start of every outer loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as _model
from .curvature import gradient_variance
from .data import Dataset
from .model import ModelState, init_model
from .numerics import Rng, as_rng, softmax

DISTANCES = ("squared_l2", "per_class_cosine")


class CondensationError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class SyntheticSet:
    features: np.ndarray
    labels: np.ndarray
    per_class: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1

    def with_features(self, features) -> "SyntheticSet":
        return SyntheticSet(np.asarray(features, dtype=np.float64), self.labels, self.per_class)

    def to_dataset(self, name: str = "synthetic") -> Dataset:
        return Dataset(self.features, self.labels, self.class_count, name)


@dataclass(frozen=True)
class CondenseConfig:
    per_class: int = 5
    rho: float = 0.1
    outer_loops: int = 20
    inner_steps: int = 10
    data_lr: float = 0.1
    model_lr: float = 0.1
    distance_kind: str = "squared_l2"
    seed: int = 0
    arch: str = "linear"
    hidden: int = 32
    init_scale: float = 1.0

    def __post_init__(self):
        if self.per_class < 1 or self.inner_steps < 1 or self.outer_loops < 0:
            raise ValueError("per_class and inner_steps must be >= 1, outer_loops >= 0")
        if not (self.data_lr > 0 and self.model_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.distance_kind not in DISTANCES:
            raise ValueError(f"distance_kind must be one of {DISTANCES}")


def init_synthetic(rng, d: int, c: int, per_class: int, scale: float = 1.0) -> SyntheticSet:
    """Gaussian-noise features, ``per_class`` rows for each class in order."""
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    rng = as_rng(rng)
    X = scale * rng.normal((c * per_class, d))
    return SyntheticSet(X, np.repeat(np.arange(c), per_class), per_class)


# -- objective ---------------------------------------------------------------

@dataclass(frozen=True)
class _TargetStats:
    class_means: np.ndarray  # (c, p)
    variance: np.ndarray     # (p,)


def _target_stats(m: ModelState, T: Dataset) -> _TargetStats:
    G = _model.per_sample_gradients(m, T.features, T.labels)
    means, _ = _class_means(G, T.labels, T.class_count)
    return _TargetStats(means, gradient_variance(G))


def _class_means(G, labels, c):
    out = np.zeros((c, G.shape[1]))
    counts = np.bincount(labels, minlength=c)
    np.add.at(out, labels, G)
    return out / np.maximum(counts, 1)[:, None], counts


def _distance(u, v, kind):
    if kind == "squared_l2":
        d = u - v
        return float(np.dot(d, d))
    nu, nv = np.sqrt(np.dot(u, u)), np.sqrt(np.dot(v, v))
    if nu == 0 or nv == 0:
        return 1.0
    return float(1.0 - np.dot(u, v) / (nu * nv))


def _distance_grad(u, v, kind):
    """Gradient of ``_distance(u, v)`` with respect to ``v`` (the synthetic side)."""
    if kind == "squared_l2":
        return 2.0 * (v - u)
    nu, nv = np.sqrt(np.dot(u, u)), np.sqrt(np.dot(v, v))
    if nu == 0 or nv == 0:
        return np.zeros_like(v)
    return -(u / (nu * nv) - np.dot(u, v) * v / (nu * nv ** 3))


def _objective(m, S_X, S_y, target: _TargetStats, rho, kind):
    c = target.class_means.shape[0]
    G = _model.per_sample_gradients(m, S_X, S_y)
    means, counts = _class_means(G, S_y, c)
    grad_term = sum(_distance(target.class_means[y], means[y], kind)
                    for y in range(c) if counts[y])
    var_term = float(np.abs(target.variance - gradient_variance(G)).sum())
    return grad_term, var_term, grad_term + 0.5 * rho * var_term


def condense_objective(m: ModelState, T: Dataset, S: SyntheticSet, rho: float,
                       distance_kind: str = "squared_l2"):
    """Return ``(grad_term, var_term, total)`` at the model's parameters."""
    if S.n < 2:
        raise ValueError("the synthetic set needs at least two rows")
    return _objective(m, S.features, S.labels, _target_stats(m, T), rho, distance_kind)


def _objective_and_grad(m, S_X, S_y, target: _TargetStats, rho, kind):
    """Objective total and its gradient w.r.t. the synthetic features.

    Backpropagates through ``g_i = [h_i; 1] (p_i - e_{y_i})^T``, the
    softmax Jacobian, and the tanh hidden layer for the MLP.
    """
    c = m.n_classes
    q = m.feat_dim
    n = S_X.shape[0]
    if m.arch == "mlp":
        H = np.tanh(S_X @ m.W1 + m.b1)
    else:
        H = S_X
    P = softmax(H @ m.W + m.b)
    R = P.copy()
    R[np.arange(n), S_y] -= 1.0
    Ht = np.concatenate([H, np.ones((n, 1))], axis=1)
    G = (Ht[:, :, None] * R[:, None, :]).reshape(n, -1)

    means, counts = _class_means(G, S_y, c)
    dG = np.zeros_like(G)
    grad_term = 0.0
    for y in range(c):
        if not counts[y]:
            continue
        grad_term += _distance(target.class_means[y], means[y], kind)
        dG[S_y == y] += _distance_grad(target.class_means[y], means[y], kind) / counts[y]
    dev = G - G.mean(axis=0)
    var_S = (dev * dev).sum(axis=0) / (n - 1)
    var_term = float(np.abs(target.variance - var_S).sum())
    if rho:
        dG += 0.5 * rho * np.sign(var_S - target.variance) * (2.0 / (n - 1)) * dev
    total = grad_term + 0.5 * rho * var_term

    M = dG.reshape(n, q + 1, c)
    dR = np.einsum("njt,nj->nt", M, Ht)
    dH = np.einsum("njt,nt->nj", M[:, :q, :], R)
    dZ = P * dR - P * (P * dR).sum(axis=1, keepdims=True)
    dH = dH + dZ @ m.W.T
    if m.arch == "mlp":
        dX = (dH * (1.0 - H * H)) @ m.W1.T
    else:
        dX = dH
    return (grad_term, var_term, total), dX


def objective_grad_wrt_features(m: ModelState, T: Dataset, S: SyntheticSet, rho: float,
                                distance_kind: str = "squared_l2") -> np.ndarray:
    """Exact gradient of the condensation objective w.r.t. every synthetic feature."""
    if S.n < 2:
        raise ValueError("the synthetic set needs at least two rows")
    _, dX = _objective_and_grad(m, S.features, S.labels, _target_stats(m, T), rho, distance_kind)
    return dX


# -- main loop ---------------------------------------------------------------

def theta_trajectory(T: Dataset, cfg: CondenseConfig, outer: int):
    """Yield the ``inner_steps`` parameter states of one outer loop.

    They depend only on ``T`` and the seed; the synthetic set never enters.
    """
    m = init_model(Rng(cfg.seed).spawn(1000 + outer), T.d, T.class_count, cfg.arch, cfg.hidden)
    for _ in range(cfg.inner_steps):
        yield m
        _, g = _model.loss_and_grad(m, T.features, T.labels)
        m = m.with_params(m.param_vector() - cfg.model_lr * g)


def lcmat_c_condense(T: Dataset, cfg: CondenseConfig, init: SyntheticSet | None = None,
                     callback=None):
    """Run LCMat-C and return ``(synthetic_set, loss_trace)``.

    For each outer loop a fresh ``theta`` is drawn; at each of the
    ``inner_steps`` states the synthetic features take one gradient step
    on the objective, then ``theta`` takes one full-batch step on ``T``.
    ``callback(outer, step, theta, S)`` is invoked before each data step.
    """
    if T.n == 0:
        raise ValueError("T is empty")
    S = init if init is not None else init_synthetic(
        Rng(cfg.seed).spawn(0), T.d, T.class_count, cfg.per_class, cfg.init_scale)
    if S.n < 2:
        raise ValueError("the synthetic set needs at least two rows")
    X = S.features.copy()
    trace = []
    for outer in range(cfg.outer_loops):
        for step, m in enumerate(theta_trajectory(T, cfg, outer)):
            if callback is not None:
                callback(outer, step, m, S.with_features(X))
            target = _target_stats(m, T)
            (_, _, total), dX = _objective_and_grad(m, X, S.labels, target, cfg.rho,
                                                    cfg.distance_kind)
            if not np.isfinite(total) or not np.all(np.isfinite(dX)):
                raise CondensationError(
                    f"non-finite objective at outer loop {outer}, step {step}")
            trace.append(total)
            X = X - cfg.data_lr * dX
    return S.with_features(X), np.array(trace)
