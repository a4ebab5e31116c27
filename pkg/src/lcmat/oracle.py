"""Reference oracles: deliberately naive, independent of the fast paths.

Nothing here imports the model, curvature or selection kernels except to
*call* the function under test from the joint checks; the reference
values themselves come from plain loops over Python floats.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .numerics import Rng, as_rng

MAX_EXHAUSTIVE_N = 14
MAX_EXHAUSTIVE_M = 5


def fd_gradient(loss_fn, point, step: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x + h e_k) - f(x - h e_k)) / 2h`` per coordinate."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64)
    out = np.zeros(x.size)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[k] += step
        xm.flat[k] -= step
        out[k] = (loss_fn(xp) - loss_fn(xm)) / (2.0 * step)
    return out


def fd_hessian_diag(loss_fn, point, step: float = 1e-3) -> np.ndarray:
    """Second central differences ``(f(x+h) - 2 f(x) + f(x-h)) / h**2`` per coordinate."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64)
    f0 = loss_fn(x)
    out = np.zeros(x.size)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[k] += step
        xm.flat[k] -= step
        out[k] = (loss_fn(xp) - 2.0 * f0 + loss_fn(xm)) / (step * step)
    return out


# -- naive model arithmetic --------------------------------------------------

def naive_softmax(z) -> list[float]:
    z = [float(v) for v in z]
    top = max(z)
    e = [math.exp(v - top) for v in z]
    s = math.fsum(e)
    return [v / s for v in e]


def naive_cross_entropy(feat, label: int, last_layer, n_classes: int) -> float:
    """Loss of one sample given penultimate features and a flat last-layer vector.

    ``last_layer[j * c + t]`` is ``W[j, t]``; the final ``c`` entries are ``b``.
    """
    c = n_classes
    q = len(feat)
    z = []
    for t in range(c):
        acc = [float(last_layer[q * c + t])]
        acc += [float(feat[j]) * float(last_layer[j * c + t]) for j in range(q)]
        z.append(math.fsum(acc))
    top = max(z)
    lse = top + math.log(math.fsum(math.exp(v - top) for v in z))
    return lse - z[label]


def naive_mean_loss(feats, labels, last_layer, n_classes: int) -> float:
    return math.fsum(naive_cross_entropy(f, int(y), last_layer, n_classes)
                     for f, y in zip(feats, labels)) / len(labels)


def naive_tanh_features(x, W1, b1) -> list[float]:
    h = len(b1)
    return [math.tanh(math.fsum([float(b1[k])] + [float(x[i]) * float(W1[i][k])
                                                   for i in range(len(x))]))
            for k in range(h)]


def naive_covariance_diag(G) -> list[float]:
    """Diagonal of ``(G^T G - (1^T G)^T (1^T G) / n) / (n - 1)`` via explicit outer products."""
    G = [[float(v) for v in row] for row in G]
    n, p = len(G), len(G[0])
    col = [math.fsum(G[i][k] for i in range(n)) for k in range(p)]
    out = []
    for k in range(p):
        gtg = math.fsum(G[i][k] * G[i][k] for i in range(n))
        out.append((gtg - col[k] * col[k] / n) / (n - 1))
    return out


def naive_pairwise_cost(g_i, g_j, lam_i, lam_j, subdims, rho: float) -> float:
    sq = 0.0
    for a, b in zip(g_i, g_j):
        sq += (float(a) - float(b)) ** 2
    l1 = 0.0
    for k in subdims:
        l1 += abs(float(lam_i[k]) - float(lam_j[k]))
    return math.sqrt(sq) + 0.5 * rho * l1


def naive_last_layer_gradient(feat, label: int, last_layer, n_classes: int) -> list[float]:
    """``[feat_j * r_t for j, t] + [r_t]`` with ``r = softmax - onehot``, by loops."""
    c, q = n_classes, len(feat)
    z = [math.fsum([float(last_layer[q * c + t])]
                   + [float(feat[j]) * float(last_layer[j * c + t]) for j in range(q)])
         for t in range(c)]
    p = naive_softmax(z)
    r = [p[t] - (1.0 if t == label else 0.0) for t in range(c)]
    return [float(feat[j]) * r[t] for j in range(q) for t in range(c)] + r


def naive_condense_objective(T_feats, T_labels, S_feats, S_labels, last_layer, n_classes: int,
                             rho: float, distance_kind: str = "squared_l2"):
    """Loop version of the condensation objective; returns ``(grad_term, var_term, total)``."""
    def grads(feats, labels):
        return [naive_last_layer_gradient(f, int(y), last_layer, n_classes)
                for f, y in zip(feats, labels)]

    GT, GS = grads(T_feats, T_labels), grads(S_feats, S_labels)
    p = len(GT[0])
    grad_term = []
    for y in range(n_classes):
        rows_t = [g for g, lab in zip(GT, T_labels) if int(lab) == y]
        rows_s = [g for g, lab in zip(GS, S_labels) if int(lab) == y]
        if not rows_s:
            continue
        mt = [math.fsum(g[k] for g in rows_t) / len(rows_t) for k in range(p)]
        ms = [math.fsum(g[k] for g in rows_s) / len(rows_s) for k in range(p)]
        if distance_kind == "squared_l2":
            grad_term.append(math.fsum((a - b) ** 2 for a, b in zip(mt, ms)))
        else:
            nt = math.sqrt(math.fsum(a * a for a in mt))
            ns = math.sqrt(math.fsum(b * b for b in ms))
            cos = math.fsum(a * b for a, b in zip(mt, ms)) / (nt * ns) if nt and ns else 0.0
            grad_term.append(1.0 - cos)
    vt, vs = naive_covariance_diag(GT), naive_covariance_diag(GS)
    var_term = math.fsum(abs(a - b) for a, b in zip(vt, vs))
    g = math.fsum(grad_term)
    return g, var_term, g + 0.5 * rho * var_term


# -- facility location -------------------------------------------------------

def facility_objective(costs, aux: float, subset) -> float:
    subset = list(subset)
    if not subset:
        return 0.0
    n = len(costs)
    return math.fsum(max(aux - float(costs[i][j]) for j in subset) for i in range(n))


def exhaustive_facility_opt(costs, m: int):
    """Best size-``m`` subset by full enumeration.

    ``costs`` is a :class:`~lcmat.selection.CostMatrix` or ``(matrix, aux)``.
    Returns ``(indices, F)``; ties keep the lexicographically smallest subset.
    """
    if hasattr(costs, "costs"):
        C, aux = costs.costs, costs.aux
    else:
        C, aux = costs
    n = len(C)
    if n > MAX_EXHAUSTIVE_N or m > MAX_EXHAUSTIVE_M:
        raise ValueError(f"exhaustive search limited to n <= {MAX_EXHAUSTIVE_N}, m <= {MAX_EXHAUSTIVE_M}")
    if not 1 <= m <= n:
        raise ValueError(f"cannot pick {m} of {n} elements")
    best, best_f = None, -math.inf
    for combo in itertools.combinations(range(n), m):
        f = facility_objective(C, aux, combo)
        if f > best_f:
            best, best_f = combo, f
    return list(best), best_f


# -- joint bound checks ------------------------------------------------------

def random_bound_instance(rng: Rng, n: int = 40, d: int = 4, c: int = 3, s: int = 8,
                          weight_scale: float = 1.0, same: bool = False):
    """Random linear probe, Gaussian-mixture ``T`` and a random subset ``S`` of it."""
    from .data import synth_gaussian_mixture
    from .model import ModelState

    per = max(1, n // c)
    T = synth_gaussian_mixture(rng, c, per, d, 2.0)
    m = ModelState("linear", weight_scale * rng.normal((d, c)), weight_scale * rng.normal(c))
    idx = np.arange(T.n) if same else np.sort(rng.choice(T.n, s))
    return m, T, idx


def mc_sharpness_vs_bound(rng, trials: int, problem_size_spec: dict | None = None,
                          rho: float = 0.05, n_dirs: int = 4096, same: bool = False) -> float:
    """Fraction of random instances where the sampled sharpness stays below the bound."""
    from .curvature import build_profile, prop1_bound, sharpness_estimate

    if not rho > 0:
        raise ValueError("rho must be positive")
    rng = as_rng(rng)
    spec = dict(problem_size_spec or {})
    hits = 0
    for t in range(trials):
        sub = rng.spawn(t)
        m, T, idx = random_bound_instance(sub, same=same, **spec)
        S = T.subset(idx)
        bound = prop1_bound(m, build_profile(m, T), build_profile(m, S), rho)
        sharp = sharpness_estimate(m, T, S, rho, n_dirs, sub.spawn(1))
        hits += sharp <= bound.total
    return hits / trials


# -- verification battery ----------------------------------------------------

def relative_error(value, reference, floor: float = 1e-12) -> float:
    """``max|value - reference| / max(max|reference|, floor)``."""
    a = np.asarray(value, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    return float(np.max(np.abs(a - r)) / max(float(np.max(np.abs(r))), floor))


def random_model(rng: Rng, d: int, c: int, arch: str = "linear", hidden: int = 4,
                 scale: float = 1.0):
    from .model import ModelState

    if arch == "linear":
        return ModelState("linear", scale * rng.normal((d, c)), scale * rng.normal(c))
    return ModelState("mlp", scale * rng.normal((hidden, c)), scale * rng.normal(c),
                      rng.normal((d, hidden)), rng.normal(hidden))


def _naive_features(m, x):
    if m.arch == "mlp":
        return naive_tanh_features(x, m.W1.tolist(), m.b1.tolist())
    return [float(v) for v in x]


def check_derivatives(rng, instances: int, arch: str = "linear") -> tuple[float, float]:
    """Worst relative error of the analytic gradient and Hessian diagonal vs. FD.

    The FD side differentiates :func:`naive_cross_entropy` in the last-layer
    vector; the analytic side calls the model module.
    """
    from . import model as _model

    rng = as_rng(rng)
    worst_g = worst_h = 0.0
    for t in range(instances):
        sub = rng.spawn(t)
        d, c = 1 + int(sub.integers(0, 5)), 2 + int(sub.integers(0, 3))
        m = random_model(sub, d, c, arch, scale=0.5)
        x = sub.normal(d)
        y = int(sub.integers(0, c))
        feat = _naive_features(m, x)
        f = lambda v: naive_cross_entropy(feat, y, v, c)  # noqa: E731
        theta = m.last_layer_vector()
        worst_g = max(worst_g, relative_error(_model.per_sample_gradient(m, x, y),
                                              fd_gradient(f, theta, 1e-5)))
        worst_h = max(worst_h, relative_error(_model.per_sample_hessian_diag(m, x, y),
                                              fd_hessian_diag(f, theta, 1e-3)))
    return worst_g, worst_h


def _random_dataset(rng: Rng, n: int, d: int, c: int):
    from .data import Dataset

    y = np.concatenate([np.arange(c), rng.integers(0, c, max(n - c, 0))])
    return Dataset(rng.normal((y.size, d)), y, c)


def check_bias_mse(rng, instances: int) -> float:
    """Worst ``|variance_term - mse_term|`` over random models and datasets."""
    from .curvature import bias_variance_mse_check

    rng = as_rng(rng)
    worst = 0.0
    for t in range(instances):
        sub = rng.spawn(t)
        c = 2 + int(sub.integers(0, 4))
        ds = _random_dataset(sub, c + int(sub.integers(0, 20)), 1 + int(sub.integers(0, 6)), c)
        arch = "linear" if t % 2 == 0 else "mlp"
        v, e = bias_variance_mse_check(random_model(sub, ds.d, c, arch), ds)
        worst = max(worst, abs(v - e))
    return worst


def check_covariance(rng, instances: int) -> float:
    """Worst relative gap between ``gradient_variance`` and the outer-product oracle."""
    from .curvature import gradient_variance

    rng = as_rng(rng)
    worst = 0.0
    for t in range(instances):
        sub = rng.spawn(t)
        G = sub.normal((2 + int(sub.integers(0, 30)), 1 + int(sub.integers(0, 12))))
        worst = max(worst, relative_error(gradient_variance(G), naive_covariance_diag(G)))
    return worst


def check_facility_bound(rng, instances: int) -> tuple[int, float]:
    """Violations of ``lhs <= rhs`` and the largest ``lhs / rhs`` seen.

    A violation needs ``lhs > rhs + 1e-12 * max(1, rhs)`` (summation slack).
    """
    from .curvature import build_profile, select_subdims
    from .selection import eq10_bound_check

    rng = as_rng(rng)
    violations, worst = 0, 0.0
    for t in range(instances):
        sub = rng.spawn(t)
        c = 2 + int(sub.integers(0, 3))
        n = 2 + int(sub.integers(0, 20))
        ds = _random_dataset(sub, max(n, c), 1 + int(sub.integers(0, 5)), c)
        m = random_model(sub, ds.d, c, "linear" if t % 2 else "mlp")
        prof = build_profile(m, ds)
        subdims = select_subdims(prof, 1 + int(sub.integers(0, prof.p)))
        rho = float(sub.uniform(0.0, 1.0))
        s = 1 + int(sub.integers(0, prof.m))
        chosen = np.sort(sub.choice(prof.m, s))
        lhs, rhs = eq10_bound_check(prof, subdims, rho, chosen)
        violations += lhs > rhs + 1e-12 * max(1.0, rhs)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return violations, worst


def random_cost_matrix(rng: Rng, n: int):
    from .selection import AUX_MARGIN, CostMatrix

    A = rng.uniform(0.0, 1.0, (n, n))
    C = np.triu(A, 1) + np.triu(A, 1).T
    return CostMatrix(C, float(C.max()) * (1.0 + AUX_MARGIN), np.arange(n))


def check_greedy(rng, trials: int, max_n: int = 12, max_m: int = 4) -> tuple[int, float]:
    """Violations of ``F(greedy) >= (1 - 1/e) F(opt)`` and the worst ratio."""
    from .selection import facility_greedy

    rng = as_rng(rng)
    violations, worst = 0, math.inf
    for t in range(trials):
        sub = rng.spawn(t)
        n = 4 + int(sub.integers(0, max_n - 3))
        m = 1 + int(sub.integers(0, max_m))
        cm = random_cost_matrix(sub, n)
        picks, trace = facility_greedy(cm, m)
        _, best = exhaustive_facility_opt(cm, m)
        ratio = facility_objective(cm.costs, cm.aux, picks) / best
        violations += ratio < 1.0 - 1.0 / math.e
        worst = min(worst, ratio)
    return violations, worst


def check_submodularity(rng, trials: int, max_n: int = 10) -> int:
    """Count sampled ``S <= S'``, ``e`` with ``gain(e|S) < gain(e|S') - 1e-12``."""
    rng = as_rng(rng)
    violations = 0
    for t in range(trials):
        sub = rng.spawn(t)
        n = 3 + int(sub.integers(0, max_n - 2))
        cm = random_cost_matrix(sub, n)
        perm = sub.permutation(n)
        e = int(perm[0])
        big = [int(v) for v in perm[1:1 + int(sub.integers(0, n))]]
        small = big[: int(sub.integers(0, len(big) + 1))]

        def gain(S):
            return (facility_objective(cm.costs, cm.aux, S + [e])
                    - facility_objective(cm.costs, cm.aux, S))

        violations += gain(small) < gain(big) - 1e-12
    return violations


def check_lazy_identity(rng, trials: int) -> int:
    """Count instances where lazy and plain greedy disagree."""
    from .selection import facility_greedy

    rng = as_rng(rng)
    bad = 0
    for t in range(trials):
        sub = rng.spawn(t)
        n = 2 + int(sub.integers(0, 40))
        cm = random_cost_matrix(sub, n)
        m = 1 + int(sub.integers(0, n))
        a, ta = facility_greedy(cm, m)
        b, tb = facility_greedy(cm, m, lazy=True)
        bad += not (np.array_equal(a, b) and np.array_equal(ta, tb))
    return bad


def check_craig_reduction(rng, runs: int) -> int:
    """Count seeded runs where rho = 0 LCMat-S and Craig pick different rows."""
    from .data import synth_gaussian_mixture
    from .selection import baseline_select, lcmat_s_select

    rng = as_rng(rng)
    bad = 0
    for t in range(runs):
        sub = rng.spawn(t)
        c = 2 + int(sub.integers(0, 3))
        ds = synth_gaussian_mixture(sub, c, 10 + int(sub.integers(0, 20)), 1 + int(sub.integers(0, 6)), 2.0)
        m = random_model(sub, ds.d, c, "linear" if t % 2 == 0 else "mlp")
        frac = float(sub.uniform(0.1, 0.6))
        a = lcmat_s_select(m, ds, frac, rho=0.0, K=int(1 + sub.integers(0, 50)))
        b = baseline_select("craig", m, ds, frac, seed=t)
        bad += not np.array_equal(a.indices, b.indices)
    return bad


def run_battery(seed: int = 0, trials: int = 100, rho: float = 0.05, n_dirs: int = 4096,
                instances: int = 100) -> list[dict]:
    """Every oracle check at the given sizes; one record per check.

    The sharpness check must pass in every trial when ``rho <= 1e-3`` and in
    at least 95% of trials otherwise.
    """
    root = Rng(seed)
    out = []

    def record(name, passed, detail):
        out.append({"name": name, "passed": bool(passed), "detail": detail})

    for k, arch in enumerate(("linear", "mlp")):
        g, h = check_derivatives(root.spawn(10 + k), instances, arch)
        record(f"fd_gradient_{arch}", g <= 1e-6, f"max relative error {g:.3e} (tol 1e-6)")
        record(f"fd_hessian_diag_{arch}", h <= 1e-4, f"max relative error {h:.3e} (tol 1e-4)")
    gap = check_bias_mse(root.spawn(20), instances)
    record("bias_variance_mse", gap <= 1e-12, f"max |variance - mse| {gap:.3e} (tol 1e-12)")
    cov = check_covariance(root.spawn(21), instances)
    record("gradient_variance_covariance", cov <= 1e-12, f"max relative gap {cov:.3e} (tol 1e-12)")
    v, ratio = check_facility_bound(root.spawn(22), instances)
    record("facility_bound", v == 0, f"{v} violations, max lhs/rhs {ratio:.4f}")
    v, worst = check_greedy(root.spawn(23), 50)
    record("greedy_guarantee", v == 0, f"{v} violations, min greedy/opt {worst:.4f}")
    v = check_submodularity(root.spawn(24), 200)
    record("submodularity", v == 0, f"{v} violations in 200 samples")
    v = check_lazy_identity(root.spawn(25), 50)
    record("lazy_greedy_identity", v == 0, f"{v} mismatches in 50 instances")
    v = check_craig_reduction(root.spawn(26), 20)
    record("craig_reduction", v == 0, f"{v} mismatches in 20 runs")
    rate = mc_sharpness_vs_bound(root.spawn(27), trials, rho=rho, n_dirs=n_dirs)
    need = 1.0 if rho <= 1e-3 else 0.95
    record("sharpness_bound", rate >= need,
           f"pass rate {rate:.3f} over {trials} trials at rho={rho:g} (need {need})")
    return out
