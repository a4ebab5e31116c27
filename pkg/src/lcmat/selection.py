"""Coreset selection: curvature-matching facility location and baselines."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import model as _model
from .curvature import CurvatureProfile, SubdimSet, build_profile, select_subdims
from .data import Dataset
from .model import ModelState
from .numerics import Rng

AUX_MARGIN = 1e-6

BASELINES = ("uniform", "herding", "kcenter", "least_confidence", "entropy", "margin", "craig")
METHODS = ("lcmat_s",) + BASELINES


class BudgetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Selection:
    """Selected dataset rows plus everything needed to reproduce them."""

    indices: np.ndarray
    method: str
    weights: np.ndarray | None = None
    objective_trace: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if np.unique(idx).size != idx.size:
            raise ValueError("selected indices must be distinct")
        order = np.argsort(idx, kind="stable")
        object.__setattr__(self, "indices", idx[order])
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)[order]
            if np.any(w < 0):
                raise ValueError("weights must be non-negative")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.indices)

    def dataset(self, ds: Dataset) -> Dataset:
        return ds.subset(self.indices, f"{ds.name}[{self.method}]")


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Pairwise costs inside one class; ``rows`` are the dataset rows."""

    costs: np.ndarray
    aux: float
    rows: np.ndarray

    @property
    def n(self) -> int:
        return self.costs.shape[0]

    def similarities(self) -> np.ndarray:
        return self.aux - self.costs


# -- budgets -----------------------------------------------------------------

def total_budget(fraction: float, n: int) -> int:
    if not 0 < fraction <= 1:
        raise BudgetError("fraction must lie in (0, 1]")
    return int(np.floor(fraction * n + 0.5))


def class_budgets(class_sizes, fraction: float) -> np.ndarray:
    """Split ``round(fraction * n)`` across classes in proportion to their sizes.

    Each class gets the floor of its exact share; leftover slots go to the
    largest fractional remainders, ties to the lowest class id.
    """
    sizes = np.asarray(class_sizes, dtype=np.int64)
    n = int(sizes.sum())
    total = total_budget(fraction, n)
    share = sizes * total
    base = share // n
    rem = share % n
    left = total - int(base.sum())
    order = np.lexsort((np.arange(sizes.size), -rem))
    base[order[:left]] += 1
    empty = np.flatnonzero((base == 0) & (sizes > 0))
    if empty.size:
        raise BudgetError(
            f"fraction {fraction} leaves class {int(empty[0])} with no budget; "
            "use a larger fraction"
        )
    return base


# -- costs -------------------------------------------------------------------

def pairwise_cost(profile: CurvatureProfile, subdims: SubdimSet, rho: float, i: int, j: int) -> float:
    """``||g_i - g_j|| + rho/2 * sum_{k in K} |lam_ik - lam_jk|``."""
    dg = profile.gradients[i] - profile.gradients[j]
    k = subdims.indices
    dl = np.abs(profile.hess_diags[i, k] - profile.hess_diags[j, k]).sum()
    return float(np.sqrt(np.dot(dg, dg)) + 0.5 * rho * dl)


def _pairwise_l2(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        diff = A[i + 1:] - A[i]
        out[i, i + 1:] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out + out.T


def _pairwise_l1(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        out[i, i + 1:] = np.abs(A[i + 1:] - A[i]).sum(axis=1)
    return out + out.T


def build_cost_matrix(profile: CurvatureProfile, subdims: SubdimSet, rho: float,
                      class_rows=None) -> CostMatrix:
    """Cost matrix over ``class_rows`` (profile row positions; default all).

    Each unordered pair is computed once and mirrored, so the result is
    exactly symmetric with a zero diagonal.
    """
    pos = np.arange(profile.m) if class_rows is None else np.asarray(class_rows, dtype=np.int64)
    if pos.size == 0:
        raise ValueError("class_rows is empty")
    G = profile.gradients[pos]
    C = _pairwise_l2(G)
    if rho != 0:
        C = C + 0.5 * rho * _pairwise_l1(profile.hess_diags[np.ix_(pos, subdims.indices)])
    aux = float(C.max()) * (1.0 + AUX_MARGIN)
    return CostMatrix(C, aux, np.asarray(profile.sample_indices)[pos])


def gradient_cost_matrix(profile: CurvatureProfile, class_rows=None) -> CostMatrix:
    """Pure gradient-distance costs (the Craig metric)."""
    pos = np.arange(profile.m) if class_rows is None else np.asarray(class_rows, dtype=np.int64)
    C = _pairwise_l2(profile.gradients[pos])
    return CostMatrix(C, float(C.max()) * (1.0 + AUX_MARGIN), np.asarray(profile.sample_indices)[pos])


# -- facility location -------------------------------------------------------

def facility_value(costs: CostMatrix, chosen) -> float:
    """``F(S) = sum_i max_{j in S} (aux - cost_ij)``, zero for the empty set."""
    chosen = list(chosen)
    if not chosen:
        return 0.0
    return float((costs.aux - costs.costs[:, chosen]).max(axis=1).sum())


def facility_greedy(costs: CostMatrix, m: int, lazy: bool = False):
    """Greedy maximization of the facility-location objective.

    Returns ``(positions, trace)``: positions into the cost matrix in pick
    order and ``F`` after each pick. Gains are row sums over a contiguous
    similarity row, so the plain and lazy paths compute bit-identical
    gains and pick identically (ties to the lowest position).
    """
    n = costs.n
    if not 1 <= m <= n:
        raise ValueError(f"cannot pick {m} of {n} elements")
    sim = np.ascontiguousarray(costs.similarities())  # symmetric: row e is column e
    cur = np.zeros(n)
    if lazy:
        return _lazy_greedy(sim, cur, m)
    picked, trace = [], []
    avail = np.ones(n, dtype=bool)
    for _ in range(m):
        gains = np.maximum(sim - cur, 0.0).sum(axis=1)
        gains[~avail] = -np.inf
        e = int(np.argmax(gains))
        picked.append(e)
        avail[e] = False
        cur = np.maximum(cur, sim[e])
        trace.append(float(cur.sum()))
    return np.array(picked, dtype=np.int64), np.array(trace)


def _lazy_greedy(sim, cur, m):
    n = sim.shape[0]
    gains = np.maximum(sim - cur, 0.0).sum(axis=1)
    heap = [(-g, e) for e, g in enumerate(gains)]
    heapq.heapify(heap)
    fresh = np.zeros(n, dtype=np.int64)  # round when each bound was computed
    picked, trace = [], []
    for rnd in range(m):
        while True:
            neg, e = heapq.heappop(heap)
            if fresh[e] == rnd:
                break
            g = np.maximum(sim[e] - cur, 0.0).sum()
            fresh[e] = rnd
            heapq.heappush(heap, (-g, e))
        picked.append(e)
        cur = np.maximum(cur, sim[e])
        trace.append(float(cur.sum()))
    return np.array(picked, dtype=np.int64), np.array(trace)


def nearest_assignment(costs: CostMatrix, chosen) -> np.ndarray:
    """For each class member, the position (within ``chosen``) of its cheapest selected element."""
    chosen = np.asarray(chosen, dtype=np.int64)
    return np.argmin(costs.costs[:, chosen], axis=1)


def nearest_counts(costs: CostMatrix, chosen) -> np.ndarray:
    """``gamma_j``: number of class members whose cheapest selected element is ``j``."""
    chosen = np.asarray(chosen, dtype=np.int64)
    return np.bincount(nearest_assignment(costs, chosen), minlength=chosen.size).astype(np.float64)


# -- LCMat-S -----------------------------------------------------------------

def _select_facility(m: ModelState, ds: Dataset, fraction: float, cost_fn, method: str,
                     weighted: bool, config: dict, lazy: bool = False) -> Selection:
    budgets = class_budgets(ds.class_sizes(), fraction)
    profile = build_profile(m, ds)
    chosen_rows, weights, traces = [], [], {}
    for y in range(ds.class_count):
        pos = ds.class_indices(y)
        if pos.size == 0:
            continue
        cm = cost_fn(profile, pos)
        picks, trace = facility_greedy(cm, int(budgets[y]), lazy=lazy)
        chosen_rows.append(cm.rows[picks])
        weights.append(nearest_counts(cm, picks))
        traces[y] = trace
    rows = np.concatenate(chosen_rows)
    return Selection(rows, method, np.concatenate(weights) if weighted else None, traces, config)


def lcmat_s_select(m: ModelState, ds: Dataset, fraction: float, rho: float = 0.1,
                   K: int = 100, weighted: bool = False, lazy: bool = False) -> Selection:
    """Class-balanced loss-curvature matching selection.

    Per class: profile, top-``K`` Hessian-diagonal variance dimensions,
    pairwise curvature costs, greedy facility location. With
    ``weighted=True`` each pick carries ``gamma_j`` (nearest-member counts).
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")

    def cost_fn(profile, pos):
        sub = profile.rows(pos)
        return build_cost_matrix(sub, select_subdims(sub, K), rho)

    cfg = {"fraction": fraction, "rho": rho, "K": K, "weighted": weighted}
    return _select_facility(m, ds, fraction, cost_fn, "lcmat_s", weighted, cfg, lazy)


def eq10_bound_check(profile: CurvatureProfile, subdims: SubdimSet, rho: float, selection):
    """Both sides of the facility-location upper bound for one class.

    ``selection`` holds profile row positions. ``gamma`` comes from the
    nearest-element mapping ``zeta``. Returns ``(lhs, rhs)``.
    """
    chosen = np.asarray(getattr(selection, "indices", selection), dtype=np.int64)
    if chosen.size == 0:
        raise ValueError("selection is empty")
    cm = build_cost_matrix(profile, subdims, rho)
    # sum_i (g_i - g_zeta(i)) equals sum_i g_i - sum_j gamma_j g_j exactly in
    # real arithmetic, and is exactly zero when every row maps to itself
    zeta = chosen[nearest_assignment(cm, chosen)]
    G, L = profile.gradients, profile.hess_diags[:, subdims.indices]
    dg = (G - G[zeta]).sum(axis=0)
    dl = (L - L[zeta]).sum(axis=0)
    lhs = float(np.sqrt(np.dot(dg, dg)) + 0.5 * rho * np.abs(dl).sum())
    rhs = float(cm.costs[:, chosen].min(axis=1).sum())
    return lhs, rhs


# -- baselines ---------------------------------------------------------------

def _herding(F: np.ndarray, k: int) -> list[int]:
    mu = F.mean(axis=0)
    picked: list[int] = []
    acc = np.zeros(F.shape[1])
    avail = np.ones(F.shape[0], dtype=bool)
    for t in range(k):
        cand = (acc + F) / (t + 1)
        dist = np.sqrt(((cand - mu) ** 2).sum(axis=1))
        dist[~avail] = np.inf
        e = int(np.argmin(dist))
        picked.append(e)
        avail[e] = False
        acc = acc + F[e]
    return picked


def _kcenter(F: np.ndarray, k: int) -> list[int]:
    picked = [0]
    mind = np.sqrt(((F - F[0]) ** 2).sum(axis=1))
    for _ in range(k - 1):
        d = mind.copy()
        d[picked] = -np.inf
        e = int(np.argmax(d))
        picked.append(e)
        mind = np.minimum(mind, np.sqrt(((F - F[e]) ** 2).sum(axis=1)))
    return picked


def uncertainty_scores(P: np.ndarray, method: str) -> np.ndarray:
    if method == "least_confidence":
        return 1.0 - P.max(axis=1)
    if method == "entropy":
        return -(P * np.log(np.where(P > 0, P, 1.0))).sum(axis=1)
    if method == "margin":
        top2 = np.sort(P, axis=1)[:, -2:]
        return 1.0 - (top2[:, 1] - top2[:, 0])
    raise ValueError(f"unknown uncertainty method {method!r}")


def baseline_select(method: str, m: ModelState, ds: Dataset, fraction: float,
                    seed: int = 0) -> Selection:
    if method not in BASELINES:
        raise ValueError(f"unknown selection method {method!r}; choose from {BASELINES}")
    cfg = {"fraction": fraction, "seed": seed}
    if method == "craig":
        return _select_facility(m, ds, fraction, gradient_cost_matrix, "craig", False, cfg)
    budgets = class_budgets(ds.class_sizes(), fraction)
    rng = Rng(seed)
    P, H = _model.forward(m, ds.features) if method != "uniform" else (None, None)
    rows = []
    for y in range(ds.class_count):
        pos = ds.class_indices(y)
        k = int(budgets[y])
        if pos.size == 0:
            continue
        if method == "uniform":
            local = rng.spawn(y).permutation(pos.size)[:k]
        elif method == "herding":
            local = _herding(H[pos], k)
        elif method == "kcenter":
            local = _kcenter(H[pos], k)
        else:
            score = uncertainty_scores(P[pos], method)
            local = np.argsort(-score, kind="stable")[:k]
        rows.append(pos[np.asarray(local, dtype=np.int64)])
    return Selection(np.concatenate(rows), method, None, {}, cfg)


def select(method: str, m: ModelState, ds: Dataset, fraction: float, rho: float = 0.1,
           K: int = 100, seed: int = 0, weighted: bool = False) -> Selection:
    """Dispatch to LCMat-S or a baseline by tag."""
    if method == "lcmat_s":
        return lcmat_s_select(m, ds, fraction, rho, K, weighted)
    return baseline_select(method, m, ds, fraction, seed)
