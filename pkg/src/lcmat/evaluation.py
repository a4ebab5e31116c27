"""Retrain-on-reduced-set evaluation and method comparison tables."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model as _model
from .condensation import SyntheticSet
from .data import Dataset, SplitSpec, standardize, stratified_split, synth_gaussian_mixture
from .model import DivergenceError, TrainConfig
from .selection import Selection, select


@dataclass
class EvalReport:
    method: str
    budget: float
    seeds: list
    accuracies: list
    train_config: dict
    wall_seconds: float = 0.0
    failures: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        ok = [a for a in self.accuracies if a is not None]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def std(self) -> float:
        ok = [a for a in self.accuracies if a is not None]
        return float(np.std(ok)) if ok else float("nan")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec.update(mean=self.mean, std=self.std)
        return rec


def desk_benchmark(seed: int = 7, classes: int = 10, per_class: int = 400, dim: int = 32,
                   separation: float = 3.0, split_seed: int = 1):
    """The standard desk benchmark: a Gaussian mixture split 50/50, standardized.

    Defaults give 2000 training rows in 10 classes of dimension 32.
    """
    ds = synth_gaussian_mixture(seed, classes, per_class, dim, separation, name="desk")
    train, test = stratified_split(ds, SplitSpec(0.5, split_seed))
    return standardize(train, test)


def scaled_epochs(epochs: int, fraction: float) -> int:
    """``clamp(round(epochs / fraction), epochs, 20 * epochs)``."""
    return int(min(max(np.floor(epochs / fraction + 0.5), epochs), 20 * epochs))


def _reduced_dataset(reduced, train_ds: Dataset):
    if isinstance(reduced, Selection):
        return reduced.dataset(train_ds), reduced.weights
    if isinstance(reduced, SyntheticSet):
        return Dataset(reduced.features, reduced.labels, train_ds.class_count, "synthetic",
                       require_all_classes=False), None
    if isinstance(reduced, Dataset):
        return reduced, None
    raise TypeError(f"cannot evaluate a {type(reduced).__name__}")


def evaluate_reduction(reduced, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig,
                       seeds, use_weights: bool = False, method: str | None = None) -> EvalReport:
    """Train a fresh model on the reduced data for each seed and score it on ``test_ds``.

    Epochs scale with the reduction fraction (see :func:`scaled_epochs`).
    A diverging seed is recorded in ``failures`` and scored as ``None``.
    """
    data, weights = _reduced_dataset(reduced, train_ds)
    if data.n == 0:
        raise ValueError("reduced set is empty")
    if test_ds.class_count != train_ds.class_count or test_ds.d != data.d:
        raise ValueError("test set is not compatible with the training data")
    fraction = data.n / train_ds.n
    run_cfg = replace(cfg, epochs=scaled_epochs(cfg.epochs, fraction))
    w = weights if use_weights else None
    accs, failures = [], {}
    t0 = time.perf_counter()
    for seed in seeds:
        try:
            fitted = _model.fit(data, replace(run_cfg, seed=int(seed)), w)
            accs.append(_model.accuracy(fitted, test_ds))
        except DivergenceError as exc:
            accs.append(None)
            failures[str(seed)] = str(exc)
    name = method or getattr(reduced, "method", "synthetic")
    return EvalReport(name, fraction, [int(s) for s in seeds], accs, asdict(run_cfg),
                      time.perf_counter() - t0, failures)


@dataclass
class ComparisonTable:
    methods: list
    fractions: list
    cells: dict  # (dataset, column, fraction) -> EvalReport; column indexes ``methods``
    best: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)

    def rows(self):
        for (name, col, frac), rep in self.cells.items():
            method = self.methods[col]
            yield {
                "dataset": name, "method": method, "fraction": frac,
                "mean": rep.mean, "std": rep.std,
                "best": self.best.get((name, frac)) == method,
                "second": self.second.get((name, frac)) == method,
                "accuracies": rep.accuracies,
            }


def compare_methods(methods, fractions, seeds, datasets: dict, train_cfg: TrainConfig,
                    pretrain_epochs: int = 10, rho: float = 0.1, K: int = 100,
                    pretrain_lr: float | None = None) -> ComparisonTable:
    """Grid of evaluations; ``datasets`` maps a name to ``(train, test)``.

    Per seed, a model is pretrained on the full training set for
    ``pretrain_epochs`` (at ``pretrain_lr`` if given), the method selects with that model (and seed), and
    a fresh model is retrained on the selection with the same seed. The
    best and second-best methods per (dataset, fraction) are marked by mean.
    """
    cells = {}
    for name, (train_ds, test_ds) in datasets.items():
        pretrained = {}
        for seed in seeds:
            pre_cfg = replace(train_cfg, epochs=pretrain_epochs, seed=int(seed))
            if pretrain_lr is not None:
                pre_cfg = replace(pre_cfg, learning_rate=pretrain_lr)
            pretrained[seed] = _model.fit(train_ds, pre_cfg)
        for col, method in enumerate(methods):
            for frac in fractions:
                accs, failures, wall = [], {}, 0.0
                for seed in seeds:
                    sel = select(method, pretrained[seed], train_ds, frac, rho, K, int(seed))
                    rep = evaluate_reduction(sel, train_ds, test_ds, train_cfg, [seed], method=method)
                    accs += rep.accuracies
                    failures.update(rep.failures)
                    wall += rep.wall_seconds
                    run_cfg = rep.train_config
                cells[(name, col, frac)] = EvalReport(
                    method, frac, [int(s) for s in seeds], accs, run_cfg, wall, failures)
    table = ComparisonTable(list(methods), list(fractions), cells)
    for name in datasets:
        for frac in fractions:
            ranked = sorted(((-cells[(name, i, frac)].mean, i, mt) for i, mt in enumerate(methods)),
                            key=lambda r: (r[0], r[1]))
            distinct = []
            for _, _, mt in ranked:
                if mt not in distinct:
                    distinct.append(mt)
            table.best[(name, frac)] = distinct[0]
            if len(distinct) > 1:
                table.second[(name, frac)] = distinct[1]
    return table
