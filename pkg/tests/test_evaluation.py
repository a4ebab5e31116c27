import numpy as np
import pytest

from lcmat import evaluation as EV
from lcmat import model as M
from lcmat.data import SplitSpec, stratified_split, synth_gaussian_mixture
from lcmat.model import TrainConfig
from lcmat.selection import Selection


@pytest.fixture
def split():
    ds = synth_gaussian_mixture(2, 3, 30, 4, 2.0)
    return stratified_split(ds, SplitSpec(0.5, 0))


CFG = TrainConfig(epochs=4, batch_size=16)


def test_scaled_epochs():
    assert EV.scaled_epochs(30, 1.0) == 30
    assert EV.scaled_epochs(30, 0.5) == 60
    assert EV.scaled_epochs(30, 0.01) == 600
    assert EV.scaled_epochs(10, 0.3) == 33
    assert EV.scaled_epochs(0, 0.1) == 0


def test_identity_reduction_matches_reference(split):
    tr, te = split
    full = Selection(np.arange(tr.n), "full")
    rep = EV.evaluate_reduction(full, tr, te, CFG, [0, 3])
    ref = [M.accuracy(M.fit(tr, TrainConfig(epochs=4, batch_size=16, seed=s)), te) for s in (0, 3)]
    assert rep.accuracies == ref


def test_rerun_identical(split):
    tr, te = split
    sel = Selection(np.arange(0, tr.n, 3), "every_third")
    a = EV.evaluate_reduction(sel, tr, te, CFG, [5]).to_record()
    b = EV.evaluate_reduction(sel, tr, te, CFG, [5]).to_record()
    a.pop("wall_seconds"), b.pop("wall_seconds")
    assert a == b


def test_report_statistics(split):
    tr, te = split
    rep = EV.evaluate_reduction(Selection(np.arange(0, tr.n, 2), "half"), tr, te, CFG, [0, 1, 2])
    assert len(rep.accuracies) == 3
    assert abs(rep.mean - np.mean(rep.accuracies)) <= 1e-12
    assert abs(rep.std - np.std(rep.accuracies)) <= 1e-12
    assert rep.train_config["epochs"] == EV.scaled_epochs(4, rep.budget)


def test_weights_used_only_when_enabled(split):
    tr, te = split
    idx = np.arange(0, tr.n, 3)
    w = np.arange(1.0, idx.size + 1)
    sel = Selection(idx, "w", w)
    plain = EV.evaluate_reduction(Selection(idx, "w"), tr, te, CFG, [0])
    assert EV.evaluate_reduction(sel, tr, te, CFG, [0]).accuracies == plain.accuracies
    assert EV.evaluate_reduction(sel, tr, te, CFG, [0], use_weights=True).train_config == plain.train_config


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_recorded_per_seed(split):
    tr, te = split
    bad = TrainConfig(epochs=2, learning_rate=1e12, momentum=0.99)
    rep = EV.evaluate_reduction(tr.with_features(tr.features * 1e150), tr, te, bad, [0, 1])
    assert rep.accuracies == [None, None]
    assert set(rep.failures) == {"0", "1"}


def test_incompatible_test_set(split):
    tr, te = split
    other = synth_gaussian_mixture(0, 3, 5, 6, 1.0)
    with pytest.raises(ValueError):
        EV.evaluate_reduction(tr, tr, other, CFG, [0])


def test_compare_single_cell(split):
    table = EV.compare_methods(["uniform"], [0.2], [0], {"d": split}, CFG, pretrain_epochs=1)
    rows = list(table.rows())
    assert len(rows) == 1 and rows[0]["best"] and not rows[0]["second"]


def test_compare_duplicate_tags_identical_columns(split):
    table = EV.compare_methods(["herding", "herding"], [0.2], [0, 1], {"d": split}, CFG, pretrain_epochs=1)
    a, b = list(table.rows())
    assert a["accuracies"] == b["accuracies"]


def test_compare_reproducible_and_marks(split):
    args = (["uniform", "craig", "lcmat_s"], [0.1, 0.2], [0, 1], {"d": split}, CFG)
    t1 = EV.compare_methods(*args, pretrain_epochs=2, pretrain_lr=0.01)
    t2 = EV.compare_methods(*args, pretrain_epochs=2, pretrain_lr=0.01)
    r1, r2 = list(t1.rows()), list(t2.rows())
    assert r1 == r2 and len(r1) == 6
    for frac in (0.1, 0.2):
        cell = [r for r in r1 if r["fraction"] == frac]
        best = max(cell, key=lambda r: r["mean"])
        assert best["best"]
        assert sum(r["best"] for r in cell) >= 1


def test_desk_benchmark_shape():
    tr, te = EV.desk_benchmark()
    assert (tr.n, tr.d, tr.class_count) == (2000, 32, 10)
    assert np.all(tr.class_sizes() == 200)
