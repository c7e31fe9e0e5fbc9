import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datafinetune import metrics
from datafinetune import model as mdl
from datafinetune.errors import ValidationError


def loop_accuracy(scores, labels):
    hits = 0
    for row, lab in zip(scores, labels):
        best = 0
        for c in range(len(row)):
            if row[c] > row[best]:
                best = c
        hits += best == lab
    return hits / len(labels)


def loop_confusion(scores, labels, n):
    counts = [[0] * n for _ in range(n)]
    for row, lab in zip(scores, labels):
        best = max(range(n), key=lambda c: (row[c], -c))
        counts[lab][best] += 1
    return counts


def pair_auc(scores, labels, positive=1):
    pos = [s for s, l in zip(scores, labels) if l == positive]
    neg = [s for s, l in zip(scores, labels) if l != positive]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def test_constant_class_zero_on_balanced_data():
    scores = np.tile([0.9, 0.1], (10, 1))
    labels = np.array([0, 1] * 5)
    assert metrics.accuracy_from_scores(scores, labels) == 0.5
    cm = metrics.confusion_from_predictions(metrics.predictions(scores), labels, 2)
    assert cm.counts[:, 1].sum() == 0 and cm.counts[:, 0].sum() == 10


def test_single_correct_sample():
    assert metrics.accuracy_from_scores([[0.2, 0.8]], [1]) == 1.0


def test_perfect_classifier_confusion_is_diagonal():
    labels = np.array([0, 1, 2, 2, 1])
    cm = metrics.confusion_from_predictions(labels, labels, 3)
    assert np.array_equal(cm.counts, np.diag(np.bincount(labels)))
    np.testing.assert_array_equal(np.diag(cm.rates()), 100.0)


def test_rates_and_binary_helpers():
    cm = metrics.ConfusionMatrix(np.array([[8, 2], [1, 9]]))
    assert cm.tpr(1) == pytest.approx(0.9)
    assert cm.tnr(1) == pytest.approx(0.8)
    assert cm.accuracy() == pytest.approx(17 / 20)
    with pytest.raises(ValidationError):
        metrics.ConfusionMatrix(np.eye(3, dtype=int)).tnr()


scores_and_labels = st.integers(1, 50).flatmap(lambda m: st.tuples(
    st.lists(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=3, max_size=3), min_size=m, max_size=m),
    st.lists(st.integers(0, 2), min_size=m, max_size=m),
))


@settings(max_examples=150, deadline=None)
@given(scores_and_labels)
def test_accuracy_and_confusion_match_loops(case):
    scores, labels = np.array(case[0]), np.array(case[1])
    assert metrics.accuracy_from_scores(scores, labels) == loop_accuracy(scores, labels)
    cm = metrics.confusion_from_predictions(metrics.predictions(scores), labels, 3)
    assert cm.counts.tolist() == loop_confusion(scores, labels, 3)


def test_auc_perfect_and_chance():
    labels = np.array([0, 0, 1, 1, 0, 1])
    assert metrics.roc_from_scores(labels.astype(float), labels).auc == 1.0
    assert metrics.roc_from_scores(np.full(6, 0.3), labels).auc == 0.5


def test_auc_six_sample_hand_case():
    scores = np.array([0.9, 0.4, 0.4, 0.7, 0.2, 0.6])
    labels = np.array([1, 0, 1, 0, 0, 1])
    # pairs: 0.9 beats all 3 negatives, 0.4 ties one and beats one, 0.6 beats two -> 6.5 / 9
    roc = metrics.roc_from_scores(scores, labels)
    assert roc.auc == pytest.approx(6.5 / 9, abs=1e-12)
    assert roc.auc == pytest.approx(pair_auc(scores, labels), abs=1e-12)
    assert roc.points[0] == (0.0, 0.0) and roc.points[-1] == (1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.5, 0.8, 1.0]), st.integers(0, 1)),
                min_size=2, max_size=50))
def test_auc_matches_pair_counting(pairs):
    scores = np.array([p[0] for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        with pytest.raises(ValidationError):
            metrics.roc_from_scores(scores, labels)
        return
    roc = metrics.roc_from_scores(scores, labels)
    assert abs(roc.auc - pair_auc(scores, labels)) <= 1e-12
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)


def test_histogram_overlap_extremes():
    labels = np.array([0] * 5 + [1] * 5)
    separated = np.array([0.1, 0.12, 0.15, 0.05, 0.11, 0.9, 0.92, 0.95, 0.88, 0.91])
    assert metrics.overlap(metrics.histogram_from_scores(separated, labels)) == 0.0
    same = np.tile([0.1, 0.3, 0.5, 0.7, 0.9], 2)
    assert metrics.overlap(metrics.histogram_from_scores(same, labels)) == pytest.approx(1.0)


def test_histogram_counts_every_sample():
    rng = np.random.default_rng(0)
    scores, labels = rng.uniform(size=40), rng.integers(0, 2, 40)
    labels[:2] = [0, 1]
    h = metrics.histogram_from_scores(scores, labels, bins=7)
    assert h.bins == 7
    assert h.negative.sum() + h.positive.sum() == 40
    with pytest.raises(ValidationError):
        metrics.histogram_from_scores(scores, labels, bins=1)


def test_model_level_wrappers(shifted_seed1):
    model, src_test, _, _, _ = shifted_seed1
    scores = mdl.forward(model, src_test.X)
    labels = src_test.labels["class"]
    assert metrics.accuracy(model, src_test) == loop_accuracy(scores, labels)
    assert metrics.confusion(model, src_test).counts.tolist() == loop_confusion(scores, labels, 2)
    assert metrics.roc(model, src_test).auc == pytest.approx(pair_auc(scores[:, 1], labels), abs=1e-12)
    assert metrics.histogram(model, src_test).negative.sum() == np.count_nonzero(labels == 0)
