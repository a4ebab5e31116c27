"""Curvature analytics over per-sample last-layer quantities."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as _model
from .data import DataError, Dataset
from .model import ModelState
from .numerics import as_rng, log_softmax, sample_ball

PROFILE_MAGIC = b"LCP1"


@dataclass(frozen=True, eq=False)
class CurvatureProfile:
    """Per-sample gradients ``g_i`` and Hessian diagonals for a set of rows."""

    gradients: np.ndarray
    hess_diags: np.ndarray
    sample_indices: np.ndarray

    def __post_init__(self):
        if self.gradients.shape != self.hess_diags.shape:
            raise ValueError("gradient and Hessian-diagonal matrices must have the same shape")
        if self.gradients.shape[0] != len(self.sample_indices):
            raise ValueError("one sample index per profile row is required")
        if self.hess_diags.size and self.hess_diags.min() < 0:
            raise ValueError("Hessian diagonals must be non-negative")

    @property
    def m(self) -> int:
        return self.gradients.shape[0]

    @property
    def p(self) -> int:
        return self.gradients.shape[1]

    def rows(self, positions) -> "CurvatureProfile":
        pos = np.asarray(positions, dtype=np.int64)
        return CurvatureProfile(self.gradients[pos], self.hess_diags[pos], self.sample_indices[pos])

    def mean_gradient(self) -> np.ndarray:
        return self.gradients.mean(axis=0)

    def mean_hess_diag(self) -> np.ndarray:
        return self.hess_diags.mean(axis=0)


def build_profile(m: ModelState, ds: Dataset, indices=None) -> CurvatureProfile:
    idx = np.arange(ds.n) if indices is None else np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= ds.n):
        raise IndexError("profile indices out of range")
    X, y = ds.features[idx], ds.labels[idx]
    G = _model.per_sample_gradients(m, X, y)
    L = _model.per_sample_hessian_diags(m, X, y)
    return CurvatureProfile(G, L, idx)


@dataclass(frozen=True)
class SubdimSet:
    indices: np.ndarray

    @property
    def K(self) -> int:
        return len(self.indices)


def select_subdims(profile: CurvatureProfile, K: int) -> SubdimSet:
    """The ``K`` columns of ``hess_diags`` with the largest sample variance.

    Ties go to the lower column index. Returned indices are sorted.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if profile.m == 0:
        raise ValueError("profile is empty")
    var = profile.hess_diags.var(axis=0, ddof=1) if profile.m > 1 else np.zeros(profile.p)
    order = np.lexsort((np.arange(profile.p), -var))
    return SubdimSet(np.sort(order[: min(K, profile.p)]))


def gradient_variance(gradients) -> np.ndarray:
    """Unbiased per-coordinate variance of the rows of ``gradients``."""
    G = np.asarray(gradients, dtype=np.float64)
    if G.shape[0] < 2:
        raise ValueError("gradient variance needs at least two rows")
    dev = G - G.mean(axis=0)
    return (dev * dev).sum(axis=0) / (G.shape[0] - 1)


def bias_variance_mse_check(m: ModelState, ds: Dataset) -> tuple[float, float]:
    """Second moment of the bias-block gradients vs. softmax/one-hot MSE.

    The first value comes from the profile gradients (mean over samples of
    the squared bias block); the second from forward probabilities.
    """
    prof = build_profile(m, ds)
    c = m.n_classes
    bias = prof.gradients[:, m.feat_dim * c:]
    variance_term = float((bias * bias).sum(axis=1).mean())
    P, _ = _model.forward(m, ds.features)
    onehot = np.eye(c)[ds.labels]
    mse_term = float(((P - onehot) ** 2).sum(axis=1).mean())
    return variance_term, mse_term


# -- loss gaps under last-layer perturbation ---------------------------------

def _as_dataset(T: Dataset, S) -> Dataset:
    if isinstance(S, Dataset):
        return S
    idx = getattr(S, "indices", S)
    return T.subset(idx)


def _perturbed_mean_losses(m: ModelState, ds: Dataset, E: np.ndarray) -> np.ndarray:
    """Mean loss of ``ds`` at each last-layer perturbation row of ``E``."""
    H = _model.features(m, ds.features)
    q, c = m.feat_dim, m.n_classes
    Ht = np.concatenate([H, np.ones((ds.n, 1))], axis=1)
    theta = m.last_layer_vector().reshape(q + 1, c)
    out = np.empty(E.shape[0])
    rows = np.arange(ds.n)
    for start in range(0, E.shape[0], 256):
        blk = E[start:start + 256].reshape(-1, q + 1, c) + theta
        # elementwise accumulation: bits do not depend on the block size
        Z = Ht[None, :, 0, None] * blk[:, None, 0, :]
        for j in range(1, q + 1):
            Z += Ht[None, :, j, None] * blk[:, None, j, :]
        ls = log_softmax(Z)
        picked = np.ascontiguousarray(ls[:, rows, ds.labels])
        out[start:start + 256] = -picked.sum(axis=1) / ds.n
    return out


def loss_gap(m: ModelState, T: Dataset, S) -> float:
    """``|L(T) - L(S)|`` at the model's parameters."""
    S = _as_dataset(T, S)
    return abs(_model.mean_loss(m, T) - _model.mean_loss(m, S))


def sharpness_estimate(m: ModelState, T: Dataset, S, rho: float, n_dirs: int,
                       rng=None, directions=None) -> float:
    """Monte-Carlo lower bound on the worst-case loss-gap sharpness.

    Samples ``n_dirs`` last-layer perturbations uniformly from the
    ``rho``-ball (or uses ``directions`` if given) and returns the largest
    ``(gap(theta + eps) - gap(theta)) / rho``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    S = _as_dataset(T, S)
    if directions is None:
        if n_dirs < 1:
            raise ValueError("n_dirs must be at least 1")
        E = sample_ball(as_rng(0 if rng is None else rng), n_dirs, m.last_layer_dim, rho)
    else:
        E = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    base = abs(_model.mean_loss(m, T) - _model.mean_loss(m, S))
    gaps = np.abs(_perturbed_mean_losses(m, T, E) - _perturbed_mean_losses(m, S, E))
    return float(np.max(gaps - base) / rho)


def sharpness_trace(m: ModelState, T: Dataset, S, rho: float, directions) -> np.ndarray:
    """Running maximum of the sharpness ratio over a fixed list of directions."""
    S = _as_dataset(T, S)
    E = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    base = abs(_model.mean_loss(m, T) - _model.mean_loss(m, S))
    gaps = np.abs(_perturbed_mean_losses(m, T, E) - _perturbed_mean_losses(m, S, E))
    return np.maximum.accumulate((gaps - base) / rho)


@dataclass(frozen=True)
class BoundTerms:
    grad_term: float
    eig_term: float
    total: float

    def __iter__(self):
        return iter((self.grad_term, self.eig_term, self.total))


def prop1_bound(m: ModelState | None, T_profile: CurvatureProfile,
                S_profile: CurvatureProfile, rho: float) -> BoundTerms:
    """Gradient-matching plus diagonal max-eigenvalue bound on the sharpness.

    ``grad_term = ||mean g_T - mean g_S||``;
    ``eig_term = rho / 2 * max_k |mean lambda_T[k] - mean lambda_S[k]|``.
    The model argument is unused; profiles already hold everything.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    dg = T_profile.mean_gradient() - S_profile.mean_gradient()
    grad_term = float(np.sqrt(np.dot(dg, dg)))
    dl = np.abs(T_profile.mean_hess_diag() - S_profile.mean_hess_diag())
    eig_term = float(0.5 * rho * dl.max())
    return BoundTerms(grad_term, eig_term, grad_term + eig_term)


# -- LCP1 export -------------------------------------------------------------

_PROFILE_HEADER = struct.Struct("<4sII")


def save_profile(profile: CurvatureProfile, path) -> None:
    """LCP1: magic, u32 m, u32 p, then u64 indices, f64 gradients, f64 Hessian diagonals."""
    with open(path, "wb") as fh:
        fh.write(_PROFILE_HEADER.pack(PROFILE_MAGIC, profile.m, profile.p))
        fh.write(np.asarray(profile.sample_indices, dtype="<u8").tobytes())
        fh.write(profile.gradients.astype("<f8").tobytes())
        fh.write(profile.hess_diags.astype("<f8").tobytes())


def load_profile(path) -> CurvatureProfile:
    raw = Path(path).read_bytes()
    if len(raw) < _PROFILE_HEADER.size:
        raise DataError(f"{path}: truncated profile header")
    magic, m, p = _PROFILE_HEADER.unpack_from(raw)
    if magic != PROFILE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    off = _PROFILE_HEADER.size
    if len(raw) != off + 8 * m + 16 * m * p:
        raise DataError(f"{path}: payload size does not match header")
    idx = np.frombuffer(raw, "<u8", m, off).astype(np.int64)
    off += 8 * m
    G = np.frombuffer(raw, "<f8", m * p, off).reshape(m, p).copy()
    off += 8 * m * p
    L = np.frombuffer(raw, "<f8", m * p, off).reshape(m, p).copy()
    return CurvatureProfile(G, L, idx)
