import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datafinetune import data
from datafinetune import model as mdl
from datafinetune.data import AttributeSchema, Dataset, ShiftSpec
from datafinetune.errors import DimensionError, FormatError, LabelError, ValidationError
from datafinetune.model import TrainConfig


def test_separated_blobs_admit_a_threshold():
    ds = data.gen_blobs([[-3.0, 0.0], [3.0, 0.0]], 0.3, [200, 200], 3)
    y = ds.labels["class"]
    pred = (ds.X[:, 0] > 0.5).astype(int)
    assert np.all(pred == y)


def test_blobs_are_deterministic():
    a = data.gen_blobs([[0, 0], [2, 2]], 0.5, [50, 50], 9)
    b = data.gen_blobs([[0, 0], [2, 2]], 0.5, [50, 50], 9)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.labels["class"], b.labels["class"])


def test_blob_counts_set_class_prior():
    y = data.gen_blobs([[0, 0], [2, 2]], 0.5, [100, 300], 1).labels["class"]
    assert np.count_nonzero(y == 0) / y.size == 0.25
    assert np.count_nonzero(y == 1) / y.size == 0.75


def test_blobs_in_fixed_frame_stay_in_unit_square():
    ds = data.gen_blobs([[-2, 0], [2, 0]], 0.7, [500, 500], 2, bounds=(-5, 5))
    assert ds.X.min() >= 0 and ds.X.max() <= 1
    assert abs(ds.X[ds.labels["class"] == 0, 0].mean() - 0.3) < 0.02


def test_blob_validation():
    with pytest.raises(ValidationError):
        data.gen_blobs([[0, 0], [1, 1]], -1.0, [5, 5], 0)
    with pytest.raises(ValidationError):
        data.gen_blobs([[0, 0], [1, 1]], 0.5, [5, 0], 0)
    with pytest.raises(DimensionError):
        data.gen_blobs([[0, 0, 0], [1, 1, 1]], 0.5, [5, 5], 0)


def test_identity_shift_is_a_no_op():
    ds = data.gen_blobs([[0, 0], [2, 2]], 0.5, [30, 30], 4)
    out = data.shift(ds, ShiftSpec(translation=[0.0, 0.0]), seed=3)
    np.testing.assert_array_equal(out.X, ds.X)


def test_noise_free_shift_ignores_seed():
    ds = data.gen_blobs([[0, 0], [2, 2]], 0.5, [30, 30], 4)
    spec = ShiftSpec(translation=[0.1, -0.05])
    np.testing.assert_array_equal(data.shift(ds, spec, 1).X, data.shift(ds, spec, 2).X)


def test_shift_clips_and_checks_width():
    ds = data.gen_blobs([[0, 0], [2, 2]], 0.5, [30, 30], 4)
    out = data.shift(ds, ShiftSpec(translation=[0.8, 0.0], noise_sigma=0.2), seed=1)
    assert out.X.min() >= 0 and out.X.max() <= 1
    with pytest.raises(DimensionError):
        data.shift(ds, ShiftSpec(translation=[0.1, 0.1, 0.1]))


def test_shift_crosses_the_boundary(shifted_seed1):
    model, src_test, _, tgt_test, _ = shifted_seed1
    acc = lambda ds: np.mean(mdl.predict(model, ds.X) == ds.labels["class"])
    assert acc(src_test) >= 0.95
    assert acc(tgt_test) < 0.70


def toy_split(kind, seed=0, **knobs):
    ds = data.gen_toy_images(kind, 2000, seed=seed, shift_knobs=knobs or None)
    return data.split(ds, (0.6, 0.2, 0.2), seed)


def test_stripe_orientation_is_learnable():
    train, _, test = toy_split("stripe-orientation")
    attr = train.schema.names[0]
    model = mdl.fit(train, attr, TrainConfig(seed=0))
    assert np.mean(mdl.predict(model, test.X) == test.labels[attr]) >= 0.95


def test_brightness_shift_hurts_blob_detector():
    train, _, test = toy_split("brightness-blob", seed=1)
    attr = train.schema.names[0]
    model = mdl.fit(train, attr, TrainConfig(seed=1))
    clean = np.mean(mdl.predict(model, test.X) == test.labels[attr])
    bright = data.shift(test, ShiftSpec(brightness=0.2))
    shifted = np.mean(mdl.predict(model, bright.X) == bright.labels[attr])
    assert clean - shifted >= 0.15


def test_toy_images_shape_and_errors():
    ds = data.gen_toy_images("brightness-blob", 10, seed=0)
    assert ds.X.shape == (10, 64)
    with pytest.raises(ValidationError):
        data.gen_toy_images("brightness-blob", 0)
    with pytest.raises(ValidationError):
        data.gen_toy_images("faces", 10)


def test_split_sizes_per_class():
    ds = data.gen_blobs([[0, 0], [2, 2]], 0.5, [50, 50], 0)
    train, val, test = data.split(ds, (0.6, 0.2, 0.2), seed=1)
    assert (train.m, val.m, test.m) == (60, 20, 20)
    for part, per_class in ((train, 30), (val, 10), (test, 10)):
        assert np.bincount(part.labels["class"]).tolist() == [per_class, per_class]


def test_degenerate_split():
    ds = data.gen_blobs([[0, 0], [2, 2]], 0.5, [7, 9], 0)
    train, val, test = data.split(ds, (1.0, 0.0, 0.0), seed=1)
    assert train.m == 16 and val.m == 0 and test.m == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=12, max_size=120), st.integers(0, 1000),
       st.sampled_from([(0.6, 0.2, 0.2), (0.5, 0.5, 0.0), (0.34, 0.33, 0.33)]))
def test_split_is_a_partition(labels, seed, fractions):
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    if counts[counts > 0].min() < 3:
        return
    parts = data.split_indices(labels, fractions, seed)
    joined = np.concatenate(parts)
    assert sorted(joined.tolist()) == list(range(labels.size))


def test_split_rejects_bad_fractions():
    with pytest.raises(ValidationError):
        data.split_indices([0, 1, 0, 1], (0.5, 0.4, 0.4))


def test_one_hot():
    np.testing.assert_array_equal(data.one_hot([0, 1], 2), [[1, 0], [0, 1]])
    with pytest.raises(LabelError):
        data.one_hot([0, 2], 2)


def test_dataset_validation():
    schema = AttributeSchema((("a", 2),))
    with pytest.raises(ValidationError):
        Dataset(np.array([[1.5]]), {"a": np.array([0])}, schema)
    with pytest.raises(LabelError):
        Dataset(np.array([[0.5]]), {"a": np.array([2])}, schema)
    with pytest.raises(DimensionError):
        Dataset(np.array([[0.5], [0.2]]), {"a": np.array([0])}, schema)
    with pytest.raises(ValidationError):
        AttributeSchema((("a", 2), ("a", 3)))


def test_csv_round_trip(tmp_path):
    schema = AttributeSchema((("smiling", 2), ("age", 3)))
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(size=(20, 4)), {"smiling": rng.integers(0, 2, 20), "age": rng.integers(0, 3, 20)}, schema)
    data.save_csv(ds, tmp_path / "d.csv")
    back = data.load_csv(tmp_path / "d.csv", schema=schema)
    np.testing.assert_array_equal(back.X, ds.X)
    for name in schema.names:
        np.testing.assert_array_equal(back.labels[name], ds.labels[name])


def test_csv_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label:a,x0\n0,0.5\n1\n")
    with pytest.raises(FormatError):
        data.load_csv(path)


def test_idx_round_trip(tmp_path):
    ds = data.gen_toy_images("stripe-orientation", 12, seed=3)
    data.save_idx(ds, tmp_path / "i.idx", tmp_path / "l.idx", (8, 8))
    back = data.load_idx(tmp_path / "i.idx", tmp_path / "l.idx", "stripes")
    assert np.max(np.abs(back.X - ds.X)) <= 0.5 / 255 + 1e-12
    np.testing.assert_array_equal(back.labels["stripes"], ds.labels["stripes_vertical"])


def test_idx_wrong_magic(tmp_path):
    (tmp_path / "i.idx").write_bytes(struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4))
    (tmp_path / "l.idx").write_bytes(struct.pack(">II", 0x801, 1) + bytes(1))
    with pytest.raises(FormatError):
        data.load_idx(tmp_path / "i.idx", tmp_path / "l.idx")


def test_idx_truncated(tmp_path):
    (tmp_path / "i.idx").write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(5))
    (tmp_path / "l.idx").write_bytes(struct.pack(">II", 0x801, 2) + bytes(2))
    with pytest.raises(FormatError):
        data.load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
