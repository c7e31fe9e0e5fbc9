import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from datafinetune import data, dft, metrics
from datafinetune import model as mdl
from datafinetune.dft import DftConfig, Perturbation
from datafinetune.errors import DimensionError, FormatError, FrozenModelError, ValidationError
from datafinetune.model import FeedForwardModel, Layer, TrainConfig

from conftest import small_model


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def fd_grad(model, X, y, p, lam, h=1e-5):
    out = np.zeros(p.d)
    for j in range(p.d):
        up, dn = p.n.copy(), p.n.copy()
        up[j] += h
        dn[j] -= h
        f_up = dft.objective(model, X, y, Perturbation(up, p.mode, p.clamp_eps), lam)
        f_dn = dft.objective(model, X, y, Perturbation(dn, p.mode, p.clamp_eps), lam)
        out[j] = (f_up - f_dn) / (2 * h)
    return out


def test_preimage_zero_is_identity():
    Z = dft.transform(np.array([[0.3]]), Perturbation.zeros(1, "preimage"))
    assert abs(Z[0, 0] - 0.3) < 1e-6


def test_literal_zero_squashes():
    Z = dft.transform(np.array([[0.5]]), Perturbation.zeros(1, "literal"))
    # mpmath reference for (tanh(0.5) + 1) / 2
    assert Z[0, 0] == pytest.approx(0.731058578630004879, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["literal", "preimage"]), arrays(np.float64, 6, elements=st.floats(-10, 10)), st.integers(0, 2**32 - 1))
def test_transform_stays_inside_unit_interval(mode, n, seed):
    X = np.random.default_rng(seed).uniform(0, 1, size=(1000, 6))
    Z = dft.transform(X, Perturbation(n, mode))
    assert np.all(Z > 0) and np.all(Z < 1)


def test_transform_rejects_width_mismatch():
    with pytest.raises(DimensionError):
        dft.transform(np.zeros((2, 3)), Perturbation.zeros(4))


def test_hinge_examples():
    assert dft.hinge_loss([[1, 0], [0, 1]], [[1.0, 0.0], [0.0, 1.0]]) == 0.0
    assert dft.hinge_loss([[1, 0]], [[0.9, 0.1]]) == pytest.approx(0.1)
    assert dft.hinge_loss([[1, 0], [1, 0]], [[0.25, 0.75], [0.75, 0.25]]) == pytest.approx(0.5)


def test_distance_examples(rng):
    X = rng.uniform(size=(5, 3))
    assert dft.distance(X, X) == 0.0
    assert dft.distance([[0.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(0.5)
    Z = rng.uniform(size=(5, 3))
    oracle = sum((X[i, j] - Z[i, j]) ** 2 for i in range(5) for j in range(3)) / 5
    assert dft.distance(X, Z) == pytest.approx(oracle, rel=1e-14)


def saturated_model():
    # scores are exactly [0, 1] for any input with x >= 0.3
    return FeedForwardModel([Layer(np.array([[-1000.0], [1000.0]]), np.zeros(2), "identity")], "class").freeze()


def test_objective_zero_when_perfect_and_unweighted():
    model = saturated_model()
    X = np.linspace(0.3, 0.9, 7)[:, None]
    y = np.ones(7, int)
    assert dft.objective(model, X, y, Perturbation(np.array([0.5]), "literal"), lam=0.0) == 0.0


def test_objective_at_zero_preimage(rng):
    model = small_model(3, (4,), seed=2).freeze()
    X = rng.uniform(0.05, 0.95, size=(6, 3))
    y = rng.integers(0, 2, 6)
    p = Perturbation.zeros(3, "preimage")
    hinge = dft.hinge_loss(data.one_hot(y, 2), mdl.forward(model, X))
    assert dft.objective(model, X, y, p, lam=0.0) == pytest.approx(hinge, abs=1e-9)
    assert dft.distance(X, dft.transform(X, p)) < 1e-20


@pytest.mark.parametrize("mode", ["literal", "preimage"])
def test_objective_is_sum_of_parts(mode, rng):
    model = small_model(3, (4,), seed=2).freeze()
    X = rng.uniform(0, 1, size=(6, 3))
    y = rng.integers(0, 2, 6)
    p = Perturbation(rng.normal(size=3), mode)
    Z = dft.transform(X, p)
    expected = dft.hinge_loss(data.one_hot(y, 2), mdl.forward(model, Z)) + 2.5 * dft.distance(X, Z)
    assert dft.objective(model, X, y, p, lam=2.5) == pytest.approx(expected, rel=1e-14)


def test_objective_requires_frozen_model(rng):
    with pytest.raises(FrozenModelError):
        dft.objective(small_model(2, (3,)), rng.uniform(size=(2, 2)), [0, 1], Perturbation.zeros(2))


def test_gradient_with_flat_model(rng):
    model = FeedForwardModel([Layer(np.zeros((2, 3)), np.zeros(2), "identity")], "class").freeze()
    X = rng.uniform(0.1, 0.9, size=(5, 3))
    y = rng.integers(0, 2, 5)
    p = Perturbation.zeros(3, "preimage")
    g = dft.grad_perturbation(model, X, y, p, lam=3.0)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)
    np.testing.assert_allclose(fd_grad(model, X, y, p, 3.0), g, atol=1e-8)


def test_gradient_zero_at_optimum():
    model = saturated_model()
    X = np.linspace(0.3, 0.9, 7)[:, None]
    g = dft.grad_perturbation(model, X, np.ones(7, int), Perturbation.zeros(1, "preimage"), lam=1.0)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


@pytest.mark.parametrize("mode", ["literal", "preimage"])
@pytest.mark.parametrize("lam", [0.0, 1.0])
def test_gradient_finite_differences(mode, lam):
    rng = np.random.default_rng([len(mode), int(lam)])
    for trial in range(5):
        d, m = int(rng.integers(1, 11)), int(rng.integers(1, 9))
        hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(0, 3)))
        model = small_model(d, hidden, n_classes=int(rng.integers(2, 4)), seed=trial, activation="tanh").freeze()
        X = rng.uniform(0.02, 0.98, size=(m, d))
        y = rng.integers(0, model.n_classes, m)
        p = Perturbation(rng.normal(scale=0.5, size=d), mode)
        g = dft.grad_perturbation(model, X, y, p, lam)
        assert np.all(rel_err(g, fd_grad(model, X, y, p, lam)) < 1e-4)


def test_config_validation():
    with pytest.raises(ValidationError):
        DftConfig(learning_rate=0).validate()
    with pytest.raises(ValidationError):
        DftConfig(mode="other").validate()
    with pytest.raises(ValidationError):
        DftConfig.from_dict({"lambda": 1})
    cfg = DftConfig(mode="preimage", distance_weight=10.0)
    assert DftConfig.from_dict(cfg.to_dict()) == cfg


def test_learn_on_perfect_data_changes_little():
    ds = data.gen_blobs([[-3.0, 0.0], [3.0, 0.0]], 0.4, [300, 300], 4, bounds=(-5, 5))
    model = mdl.fit(ds, "class", TrainConfig(epochs=10, seed=4)).freeze()
    assert metrics.accuracy(model, ds) == 1.0
    result = dft.learn_perturbation(model, ds, DftConfig(mode="preimage", seed=4))
    y = ds.labels["class"]
    start = dft.objective(model, ds.X, y, Perturbation.zeros(2, "preimage"))
    end = dft.objective(model, ds.X, y, result.perturbation)
    assert end <= 1.1 * start
    assert metrics.accuracy(model, dft.apply(ds, result.perturbation)) == 1.0


def test_learn_on_shifted_blobs(shifted_seed1):
    model, _, tgt_train, tgt_test, cfg = shifted_seed1
    result = dft.learn_perturbation(model, tgt_train, cfg.dft)
    before = metrics.accuracy(model, tgt_train)
    after = metrics.accuracy(model, dft.apply(tgt_train, result.perturbation))
    assert after - before >= 0.10
    # and the gain transfers to the held-out split
    test_gain = metrics.accuracy(model, dft.apply(tgt_test, result.perturbation)) - metrics.accuracy(model, tgt_test)
    assert test_gain >= 0.5 * (after - before)


def test_learn_is_deterministic_and_counts_steps(shifted_seed1):
    model, _, tgt_train, _, cfg = shifted_seed1
    a = dft.learn_perturbation(model, tgt_train, cfg.dft)
    b = dft.learn_perturbation(model, tgt_train, cfg.dft)
    assert a.perturbation.to_bytes() == b.perturbation.to_bytes()
    assert a.trace == b.trace
    expected = cfg.dft.epochs * math.ceil(tgt_train.m / cfg.dft.batch_size) * cfg.dft.iters_per_batch
    assert a.steps == expected


def test_learn_never_touches_model(shifted_seed1):
    model, _, tgt_train, _, _ = shifted_seed1
    digest = model.sha256()
    dft.learn_perturbation(model, tgt_train, DftConfig(mode="literal", epochs=1))
    assert model.sha256() == digest


def test_learn_requires_frozen_model(rng):
    ds = data.gen_blobs([[0, 0], [1, 1]], 0.3, [10, 10], 0)
    with pytest.raises(FrozenModelError):
        dft.learn_perturbation(small_model(2, (3,), attribute="class"), ds, DftConfig())


def test_apply_matches_transform(rng):
    ds = data.gen_blobs([[0, 0], [1, 1]], 0.3, [10, 10], 0)
    p = Perturbation(rng.normal(size=2), "literal")
    out = dft.apply(ds, p)
    assert dft.distance(ds.X, out.X) == dft.distance(ds.X, dft.transform(ds.X, p))
    np.testing.assert_array_equal(out.labels["class"], ds.labels["class"])


def test_apply_zero_preimage_keeps_decisions(shifted_seed1):
    model, _, _, tgt_test, _ = shifted_seed1
    zero = Perturbation.zeros(2, "preimage")
    np.testing.assert_array_equal(mdl.predict(model, dft.apply(tgt_test, zero).X), mdl.predict(model, tgt_test.X))


def test_perturbation_file_round_trip(tmp_path, rng):
    p = Perturbation(rng.normal(size=5), "preimage", 1e-7)
    dft.save_perturbation(p, tmp_path / "n.bin")
    back = dft.load_perturbation(tmp_path / "n.bin")
    assert back.mode == "preimage" and back.clamp_eps == 1e-7
    np.testing.assert_array_equal(back.n, p.n)


def test_perturbation_file_errors(rng):
    raw = Perturbation(rng.normal(size=3)).to_bytes()
    with pytest.raises(FormatError):
        dft.perturbation_from_bytes(raw[:-1])
    with pytest.raises(FormatError):
        dft.perturbation_from_bytes(b"NOTNOISE" + raw[8:])
