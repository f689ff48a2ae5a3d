"""Frozen-embedding evaluation: linear probe, k-means, F1 / NMI / ARI."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .train import stratified_split

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _relabel(x):
    _, inv = np.unique(np.asarray(x), return_inverse=True)
    return inv.ravel()


def contingency(a, b):
    a, b = _relabel(a), _relabel(b)
    if a.shape != b.shape:
        raise ValueError("partitions must cover the same elements")
    m = np.zeros((a.max() + 1 if a.size else 0, b.max() + 1 if b.size else 0), dtype=np.int64)
    np.add.at(m, (a, b), 1)
    return m


def _entropy(counts):
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b):
    """Mutual information over the arithmetic mean of the two entropies."""
    m = contingency(a, b)
    n = m.sum()
    if n == 0:
        return 1.0
    ha, hb = _entropy(m.sum(axis=1)), _entropy(m.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    pij = m / n
    pi = m.sum(axis=1, keepdims=True) / n
    pj = m.sum(axis=0, keepdims=True) / n
    nz = m > 0
    mi = float((pij[nz] * np.log(pij[nz] / (pi @ pj)[nz])).sum())
    return max(0.0, min(1.0, mi / ((ha + hb) / 2.0)))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(a, b):
    """Adjusted Rand index (pair counting, hypergeometric expectation)."""
    m = contingency(a, b)
    n = m.sum()
    index = _comb2(m).sum()
    sa, sb = _comb2(m.sum(axis=1)).sum(), _comb2(m.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sa * sb / total if total else 0.0
    max_index = (sa + sb) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def f1_scores(y_true, y_pred):
    """``(macro_f1, micro_f1)`` for single-label multiclass predictions."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    classes = np.union1d(y_true, y_pred)
    tp = np.array([np.sum((y_true == c) & (y_pred == c)) for c in classes], dtype=np.float64)
    fp = np.array([np.sum((y_true != c) & (y_pred == c)) for c in classes], dtype=np.float64)
    fn = np.array([np.sum((y_true == c) & (y_pred != c)) for c in classes], dtype=np.float64)
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    micro_den = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / micro_den if micro_den else 0.0
    return float(per_class.mean()) if classes.size else 0.0, float(micro)


# ---------------------------------------------------------------------------
# linear probes
# ---------------------------------------------------------------------------


def _standardize(train, test):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return (train - mu) / sd, (test - mu) / sd


def fit_linear_svm(X, y, n_classes, rng, reg=1e-4, epochs=100, batch_size=32, lr=0.1):
    """One-vs-rest squared-hinge linear SVM trained by minibatch SGD.

    Minimises ``mean_i sum_c max(0, 1 - y_ic (x_i.w_c + b_c))^2 + reg/2 |W|^2``
    and returns the Polyak average of the iterates over the second half.
    """
    n, d = X.shape
    Y = -np.ones((n, n_classes))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    W_avg, b_avg, n_avg = np.zeros_like(W), np.zeros_like(b), 0
    step = 0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        eta = lr / (1.0 + 0.05 * epoch)
        for s in range(0, n, batch_size):
            idx = perm[s : s + batch_size]
            margin = 1.0 - Y[idx] * (X[idx] @ W + b)
            slack = np.maximum(margin, 0.0)
            coef = -2.0 * slack * Y[idx] / idx.size
            W -= eta * (X[idx].T @ coef + reg * W)
            b -= eta * coef.sum(axis=0)
            step += 1
        if epoch >= epochs // 2:
            W_avg += W
            b_avg += b
            n_avg += 1
    return W_avg / n_avg, b_avg / n_avg


def fit_logistic(X, y, n_classes, rng, reg=1e-4, epochs=100, batch_size=32, lr=0.1):
    n, d = X.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        eta = lr / (1.0 + 0.05 * epoch)
        for s in range(0, n, batch_size):
            idx = perm[s : s + batch_size]
            z = X[idx] @ W + b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(idx.size), y[idx]] -= 1.0
            p /= idx.size
            W -= eta * (X[idx].T @ p + reg * W)
            b -= eta * p.sum(axis=0)
    return W, b


PROBES = {"svm": fit_linear_svm, "logreg": fit_logistic}


@dataclass
class EvalReport:
    macro_f1: list = field(default_factory=list)
    micro_f1: list = field(default_factory=list)
    nmi: list = field(default_factory=list)
    ari: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    split: str = ""

    def mean(self, name):
        vals = getattr(self, name)
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self):
        return {k: self.mean(k) for k in ("macro_f1", "micro_f1", "nmi", "ari") if getattr(self, k)}

    def to_json(self):
        return json.dumps({**asdict(self), "mean": self.summary()}, indent=2)

    def table_row(self, name="ringformer"):
        """``name & a & b`` in percent, classification or clustering columns."""
        cols = []
        if self.macro_f1:
            cols += [self.mean("macro_f1"), self.mean("micro_f1")]
        if self.nmi:
            cols += [self.mean("nmi"), self.mean("ari")]
        return " & ".join([name] + [f"{100 * c:.2f}" for c in cols]) + r" \\"


def _draw_split(labels, train_frac, rng, n_classes, attempts=100):
    for _ in range(attempts):
        tr, te = stratified_split(labels, 1.0 - train_frac, rng)
        if np.unique(labels[tr]).size == n_classes and te.size:
            return tr, te
    raise ValueError("could not draw a split with every class in the training fold")


def probe_predict(X_train, y_train, X_test, n_classes, rng, probe="svm"):
    Xtr, Xte = _standardize(X_train, X_test)
    W, b = PROBES[probe](Xtr, y_train, n_classes, rng)
    return np.argmax(Xte @ W + b, axis=1)


def linear_probe(embeddings, labels, train_frac=0.8, repeats=10, seed=0, probe="svm"):
    """Repeated stratified train/test probe; Macro/Micro-F1 on the held-out fold."""
    X = np.asarray(embeddings, dtype=np.float64)
    y = _relabel(labels)
    n_classes = int(y.max()) + 1
    rep = EvalReport(split=f"stratified {train_frac:.0%}/{1 - train_frac:.0%}, probe={probe}")
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        tr, te = _draw_split(y, train_frac, rng, n_classes)
        pred = probe_predict(X[tr], y[tr], X[te], n_classes, rng, probe)
        ma, mi = f1_scores(y[te], pred)
        rep.macro_f1.append(ma)
        rep.micro_f1.append(mi)
        rep.seeds.append([seed, r])
    return rep


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def kmeans_pp_init(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[i] = X[j]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans_single(X, k, rng, max_iter=300, tol=1e-6):
    """k-means++ seeding then Lloyd iterations; returns ``(labels, inertia)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    centers = kmeans_pp_init(X, k, rng)
    for _ in range(max_iter):
        labels, dist = _kernels.kmeans_assign(X, centers)
        new = np.zeros_like(centers)
        np.add.at(new, labels, X)
        sizes = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(sizes == 0):
            far = int(np.argmax(dist))
            new[c] = X[far]
            sizes[c] = 1
            dist[far] = 0.0
        new /= sizes[:, None]
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    labels, dist = _kernels.kmeans_assign(X, centers)
    return labels, float(dist.sum())


def kmeans(embeddings, k, repeats=10, seed=0):
    """Independent k-means runs; list of ``(labels, inertia)`` per repeat."""
    X = np.asarray(embeddings, dtype=np.float64)
    if k > np.unique(X, axis=0).shape[0]:
        raise ValueError(f"k={k} exceeds the number of distinct points")
    return [kmeans_single(X, k, np.random.default_rng([seed, r])) for r in range(repeats)]


def cluster_eval(embeddings, labels, repeats=10, seed=0):
    y = _relabel(labels)
    k = int(y.max()) + 1
    rep = EvalReport(split=f"k-means k={k}")
    for r, (assign, _) in enumerate(kmeans(embeddings, k, repeats, seed)):
        rep.nmi.append(nmi(y, assign))
        rep.ari.append(ari(y, assign))
        rep.seeds.append([seed, r])
    return rep
