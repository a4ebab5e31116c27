import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcmat.data import (DataError, Dataset, SplitSpec, Standardizer, class_indices, load_binary,
                        load_csv, save_binary, save_csv, split_indices, standardize,
                        stratified_split, synth_gaussian_mixture)
from lcmat.model import TrainConfig, accuracy, fit


def test_binary_round_trip_small(tmp_path):
    ds = Dataset(np.arange(8.0).reshape(4, 2), [0, 1, 1, 0], 2)
    save_binary(ds, tmp_path / "a.lcd")
    back = load_binary(tmp_path / "a.lcd")
    assert (back.n, back.d, back.class_count) == (4, 2, 2)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)


def test_binary_round_trip_float32_bits(tmp_path, rng):
    ds = Dataset(rng.normal((50, 7)), np.arange(50) % 5, 5)
    save_binary(ds, tmp_path / "b.lcd")
    back = load_binary(tmp_path / "b.lcd")
    assert np.array_equal(back.features.astype(np.float32).view(np.uint32),
                          ds.features.astype(np.float32).view(np.uint32))


def test_binary_header_layout(tmp_path):
    ds = Dataset([[1.5, -2.0]], [0], 1)
    save_binary(ds, tmp_path / "c.lcd")
    raw = (tmp_path / "c.lcd").read_bytes()
    assert raw[:16] == struct.pack("<4sIII", b"LCD1", 1, 2, 1)
    assert raw[16:24] == np.array([1.5, -2.0], "<f4").tobytes()
    assert raw[24:] == struct.pack("<I", 0)


def _write(path, magic, n, d, c, feats, labels, extra=b""):
    path.write_bytes(struct.pack("<4sIII", magic, n, d, c)
                     + np.asarray(feats, "<f4").tobytes()
                     + np.asarray(labels, "<u4").tobytes() + extra)


def test_binary_label_out_of_range(tmp_path):
    _write(tmp_path / "x.lcd", b"LCD1", 2, 1, 3, [0, 1], [0, 5])
    with pytest.raises(DataError, match="label"):
        load_binary(tmp_path / "x.lcd")


def test_binary_bad_magic(tmp_path):
    _write(tmp_path / "x.lcd", b"NOPE", 1, 1, 1, [0], [0])
    with pytest.raises(DataError, match="magic"):
        load_binary(tmp_path / "x.lcd")


def test_binary_truncated(tmp_path):
    _write(tmp_path / "x.lcd", b"LCD1", 3, 2, 2, [0] * 6, [0, 1, 1])
    raw = (tmp_path / "x.lcd").read_bytes()
    (tmp_path / "t.lcd").write_bytes(raw[:-3])
    with pytest.raises(DataError, match="truncated"):
        load_binary(tmp_path / "t.lcd")
    (tmp_path / "h.lcd").write_bytes(raw[:10])
    with pytest.raises(DataError, match="truncated"):
        load_binary(tmp_path / "h.lcd")


def test_binary_diagnostics_are_distinct(tmp_path):
    _write(tmp_path / "a.lcd", b"NOPE", 1, 1, 1, [0], [0])
    _write(tmp_path / "b.lcd", b"LCD1", 1, 1, 1, [0], [4])
    (tmp_path / "c.lcd").write_bytes((tmp_path / "b.lcd").read_bytes()[:-1])
    msgs = set()
    for name in "abc":
        with pytest.raises(DataError) as exc:
            load_binary(tmp_path / f"{name}.lcd")
        msgs.add(str(exc.value).split(":", 1)[-1])
    assert len(msgs) == 3


def test_csv_dense_remap(tmp_path):
    (tmp_path / "a.csv").write_text("f,label\n1,a\n2,b\n3,a\n")
    ds = load_csv(tmp_path / "a.csv")
    assert ds.class_count == 2
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.label_names == ("a", "b")


def test_csv_label_column_by_name_and_no_header(tmp_path):
    (tmp_path / "a.csv").write_text("y,f\n10,1.0\n2,2.0\n")
    ds = load_csv(tmp_path / "a.csv", label_column="y")
    assert ds.labels.tolist() == [1, 0]  # numeric order: 2 < 10
    (tmp_path / "b.csv").write_text("1.0,0\n2.0,1\n")
    assert load_csv(tmp_path / "b.csv", header=False).n == 2


def test_csv_empty_file(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(DataError, match="empty"):
        load_csv(tmp_path / "e.csv")


def test_csv_ragged_and_non_numeric_locations(tmp_path):
    (tmp_path / "r.csv").write_text("a,b,label\n1,2,0\n1,0\n")
    with pytest.raises(DataError, match="row 3"):
        load_csv(tmp_path / "r.csv")
    (tmp_path / "n.csv").write_text("a,b,label\n1,2,0\n1,zz,1\n")
    with pytest.raises(DataError, match="row 3, column 2"):
        load_csv(tmp_path / "n.csv")


def test_csv_cross_format(tmp_path, rng):
    ds = Dataset(rng.normal((20, 3)), np.arange(20) % 4, 4)
    save_binary(ds, tmp_path / "a.lcd")
    from_bin = load_binary(tmp_path / "a.lcd")
    save_csv(from_bin, tmp_path / "a.csv")
    from_csv = load_csv(tmp_path / "a.csv")
    assert np.array_equal(from_csv.features, from_bin.features)
    assert np.array_equal(from_csv.labels, from_bin.labels)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([[np.nan]], [0], 1)
    with pytest.raises(DataError):
        Dataset([[0.0], [1.0]], [0, 0], 2)  # class 1 empty
    with pytest.raises(DataError):
        Dataset([[0.0]], [3], 2)
    ds = Dataset([[0.0], [1.0]], [0, 0], 2, require_all_classes=False)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0


def test_split_balanced_example():
    ds = Dataset(np.zeros((100, 1)), np.repeat([0, 1], 50), 2)
    tr, te = stratified_split(ds, SplitSpec(0.2, seed=0))
    assert (tr.n, te.n) == (80, 20)
    assert te.class_sizes().tolist() == [10, 10]


def test_split_deterministic_and_partition():
    ds = synth_gaussian_mixture(1, 10, 17, 3, 1.0)
    a = split_indices(ds, SplitSpec(0.3, seed=4))
    b = split_indices(ds, SplitSpec(0.3, seed=4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    tr, te = a
    assert np.intersect1d(tr, te).size == 0
    assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(ds.n))


@given(st.lists(st.integers(2, 30), min_size=2, max_size=10), st.floats(0.05, 0.95),
       st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_split_proportions_within_one(sizes, frac, seed):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    ds = Dataset(np.zeros((labels.size, 1)), labels, len(sizes))
    _, te = stratified_split(ds, SplitSpec(frac, seed))
    assert np.all(np.abs(te.class_sizes() - np.asarray(sizes) * frac) <= 1.0 + 1e-9)


def test_split_singleton_class_errors():
    ds = Dataset(np.zeros((3, 1)), [0, 0, 1], 2)
    with pytest.raises(DataError, match="single"):
        stratified_split(ds, SplitSpec(0.5))


def test_gmm_examples():
    ds = synth_gaussian_mixture(0, 4, 1, 3, 1.0)
    assert ds.n == 4
    a = synth_gaussian_mixture(8, 3, 5, 2, 2.0)
    b = synth_gaussian_mixture(8, 3, 5, 2, 2.0)
    assert np.array_equal(a.features, b.features)
    with pytest.raises(DataError):
        synth_gaussian_mixture(0, 1, 5, 2, 1.0)


def test_gmm_well_separated_is_learnable():
    ds = synth_gaussian_mixture(2, 2, 100, 5, 10.0)
    m = fit(ds, TrainConfig(epochs=50))
    assert accuracy(m, ds) >= 0.99


@given(st.lists(st.integers(0, 4), min_size=1, max_size=60))
def test_class_indices_partition(labels):
    ds = Dataset(np.zeros((len(labels), 1)), labels, 5, require_all_classes=False)
    seen = []
    for y in range(5):
        idx = class_indices(ds, y)
        assert np.all(np.diff(idx) > 0)
        assert np.all(ds.labels[idx] == y)
        seen.append(idx)
    assert np.array_equal(np.sort(np.concatenate(seen)), np.arange(len(labels)))


def test_standardize_uses_train_statistics(rng):
    tr = Dataset(rng.normal((40, 3)) * 3 + 1, np.arange(40) % 2, 2)
    te = Dataset(rng.normal((10, 3)), np.arange(10) % 2, 2)
    s_tr, s_te = standardize(tr, te)
    assert np.allclose(s_tr.features.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(s_tr.features.std(axis=0), 1, atol=1e-12)
    st_ = Standardizer.fit(tr)
    assert np.array_equal(s_te.features, (te.features - st_.mean) / st_.scale)
