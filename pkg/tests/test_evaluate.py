import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracle import f1_by_counting
from ringformer.evaluate import (
    ari,
    cluster_eval,
    contingency,
    f1_scores,
    kmeans,
    kmeans_single,
    linear_probe,
    nmi,
)

FX = json.load(open(os.path.join(os.path.dirname(__file__), "fixtures", "metrics.json")))

partitions = st.lists(st.integers(0, 4), min_size=2, max_size=40)


def test_fixture_values():
    p = FX["partition"]
    assert abs(nmi(p["a"], p["b"]) - (4 / 3) * np.log(2) / np.log(6)) < 1e-9
    assert abs(ari(p["a"], p["b"]) - 0.8 / 3.3) < 1e-9
    f = FX["f1"]
    ma, mi = f1_scores(f["y_true"], f["y_pred"])
    assert abs(ma - 25 / 36) < 1e-9 and abs(mi - 0.7) < 1e-9


def test_contingency():
    assert contingency([0, 0, 1], ["x", "y", "y"]).tolist() == [[1, 1], [0, 1]]


@settings(max_examples=50, deadline=None)
@given(partitions, st.randoms())
def test_identity_and_relabel_invariance(a, rnd):
    a = np.asarray(a)
    assert nmi(a, a) == pytest.approx(1.0)
    assert ari(a, a) == pytest.approx(1.0)
    perm = list(range(5))
    rnd.shuffle(perm)
    b = np.asarray(perm)[a]
    assert ari(a, b) == pytest.approx(1.0)
    assert nmi(a, b) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_f1_matches_counting_oracle(pairs):
    y, p = zip(*pairs)
    ma, mi = f1_scores(y, p)
    rma, rmi = f1_by_counting(y, p)
    assert ma == pytest.approx(rma, abs=1e-12)
    assert mi == pytest.approx(rmi, abs=1e-12)
    assert mi == pytest.approx(np.mean(np.equal(y, p)))


def test_independent_partitions_have_small_nmi():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 4, 1000), rng.integers(0, 4, 1000)
    assert nmi(a, b) < 0.05
    assert abs(ari(a, b)) < 0.05


def test_ari_range():
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)


# -- k-means ----------------------------------------------------------------


def _blobs(rng, n=40):
    X = np.vstack([rng.normal(0, 0.1, (n, 2)), rng.normal(5, 0.1, (n, 2))])
    return X, np.repeat([0, 1], n)


def test_kmeans_separates_blobs():
    X, y = _blobs(np.random.default_rng(1))
    for labels, _ in kmeans(X, 2, repeats=3, seed=0):
        assert ari(labels, y) == 1.0


def test_kmeans_k_equals_n():
    X = np.random.default_rng(0).normal(size=(6, 3))
    labels, inertia = kmeans_single(X, 6, np.random.default_rng(0))
    assert len(set(labels.tolist())) == 6 and inertia == pytest.approx(0.0, abs=1e-20)


def test_kmeans_beats_random_assignments():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 2))
    _, inertia = kmeans_single(X, 3, np.random.default_rng(0))
    for _ in range(1000):
        lab = rng.integers(0, 3, 20)
        rand = sum(((X[lab == c] - X[lab == c].mean(0)) ** 2).sum() for c in range(3) if (lab == c).any())
        assert inertia <= rand + 1e-12


def test_kmeans_rejects_too_many_clusters():
    with pytest.raises(ValueError):
        kmeans(np.zeros((5, 2)), 2)


def test_cluster_eval_report():
    X, y = _blobs(np.random.default_rng(2))
    rep = cluster_eval(X, y, repeats=4, seed=1)
    assert rep.mean("nmi") == 1.0 and rep.mean("ari") == 1.0
    assert rep.table_row("M") == r"M & 100.00 & 100.00 \\"


# -- probes -----------------------------------------------------------------


@pytest.mark.parametrize("probe", ["svm", "logreg"])
def test_probe_on_separable_data(probe):
    X, y = _blobs(np.random.default_rng(4), n=50)
    rep = linear_probe(X, y, repeats=3, seed=0, probe=probe)
    assert rep.mean("micro_f1") == 1.0 and rep.mean("macro_f1") == 1.0


def test_probe_on_constant_embeddings():
    y = np.repeat([0, 1, 2], [60, 25, 15])
    rep = linear_probe(np.ones((100, 4)), y, repeats=3, seed=0)
    # every prediction is one class; with a stratified 20% test fold that is class 0
    assert rep.mean("micro_f1") == pytest.approx(0.6)
    assert rep.mean("macro_f1") == pytest.approx((2 * 0.6 / 1.6) / 3)


def test_probe_never_sees_test_fold(monkeypatch):
    from ringformer import evaluate as ev

    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 5))
    X[:, 4] = np.arange(100)  # row tag
    y = (X[:, 0] > 0).astype(int)
    calls, real = [], ev.probe_predict

    def spy(X_train, y_train, X_test, n_classes, rng_, probe="svm"):
        pred = real(X_train, y_train, X_test, n_classes, rng_, probe)
        calls.append((X_train[:, 4].astype(int), y_train, X_test[:, 4].astype(int), pred))
        return pred

    monkeypatch.setattr(ev, "probe_predict", spy)
    linear_probe(X, y, repeats=3, seed=4)
    for tr, y_tr, te, pred in calls:
        assert not set(tr) & set(te) and len(tr) == 80
        np.testing.assert_array_equal(y_tr, y[tr])
        # scrambling the held-out labels changes the score, never the predictions
        scrambled = y[te][::-1].copy()
        assert f1_scores(y[te], pred) != f1_scores(scrambled, pred) or (y[te] == scrambled).all()


def test_probe_repeats_are_seeded():
    X, y = _blobs(np.random.default_rng(5))
    X = X + np.random.default_rng(6).normal(0, 2.0, X.shape)
    a = linear_probe(X, y, repeats=4, seed=3)
    b = linear_probe(X, y, repeats=4, seed=3)
    assert a.micro_f1 == b.micro_f1 and a.seeds == b.seeds


def test_report_json():
    X, y = _blobs(np.random.default_rng(7))
    rep = linear_probe(X, y, repeats=2)
    d = json.loads(rep.to_json())
    assert d["mean"]["micro_f1"] == 1.0 and len(d["seeds"]) == 2
