"""Planted-signal heterogeneous graphs with known ground truth.

``ring-distance``: a target's class lives only in the features of its
2-ring signal authors. Its 1-ring relay authors, of the same type, carry
prototypes of randomly drawn classes scaled by ``relay_scale``, so k-hop
pooling blurs the decoys into the signal.

``type-mix``: a target's class lives in its 1-ring neighbours of the
signal type; every other type carries the opposite signal, so averaging
across types cancels it.

Class-free features are low-entropy on purpose (one shared paper vector,
discrete decoys), which keeps a trained model from memorising nodes
through feature noise.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .graph import build_graph, save_graph

_TYPE_NAMES = ("paper", "author", "subject", "field", "venue", "term", "org", "topic")


@dataclass
class SyntheticSpec:
    T: int = 3
    classes: int = 3
    nodes_per_class: int = 200
    signal: str = "ring-distance"
    noise: float = 0.0
    seed: int = 0
    d_in: int = 16
    signal_nodes: int = 3
    relay_scale: float = 3.0
    pool_per_class: int = 30
    citations: int = -1  # paper-paper edges per target / 2; -1 picks per mode

    def __post_init__(self):
        if self.signal not in ("ring-distance", "type-mix"):
            raise ValueError(f"unknown signal mode {self.signal!r}")
        min_t = 3 if self.signal == "type-mix" else 2
        if not min_t <= self.T <= len(_TYPE_NAMES):
            raise ValueError(f"{self.signal} needs {min_t} <= T <= {len(_TYPE_NAMES)}")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must lie in [0, 1)")
        if self.classes < 2 or self.nodes_per_class < 1:
            raise ValueError("need at least 2 classes and 1 node per class")


def _prototypes(rng, classes, d):
    # dyadic entries: small-integer multiples and their sums stay exact in
    # float32, so planted cancellations leave no rounding residue
    P = rng.normal(size=(classes, d))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return np.round(P * 64.0) / 64.0


def _plant(rng, c, classes, noise, size):
    """Class carried by each planted node: ``c`` unless corrupted."""
    out = np.full(size, c, dtype=np.int64)
    flip = rng.random(size) < noise
    if flip.any():
        other = rng.integers(1, classes, size=int(flip.sum()))
        out[flip] = (c + other) % classes
    return out


def _majority(planted, fallback):
    counts = np.bincount(planted)
    best = np.flatnonzero(counts == counts.max())
    return int(fallback) if fallback in best else int(best[0])


def generate_synthetic_hin(spec):
    """Return ``(graph, manifest)`` for a :class:`SyntheticSpec`."""
    rng = np.random.default_rng(spec.seed)
    C, d = spec.classes, spec.d_in
    protos = _prototypes(rng, C, d)
    n_targets = C * spec.nodes_per_class
    intended = np.repeat(np.arange(C), spec.nodes_per_class)
    intended = intended[rng.permutation(n_targets)]

    types = [0] * n_targets
    paper_vec = rng.normal(size=d) / np.sqrt(d)
    feats = [np.tile(paper_vec, (n_targets, 1))]
    edges = []
    rel_names = []
    rel_of = {}

    def rel(a, b):
        key = f"{_TYPE_NAMES[a]}-{_TYPE_NAMES[b]}"
        if key not in rel_of:
            rel_of[key] = len(rel_names)
            rel_names.append(key)
        return rel_of[key]

    def add_nodes(t, X):
        start = len(types)
        types.extend([t] * X.shape[0])
        feats.append(X)
        return np.arange(start, start + X.shape[0])

    labels = np.empty(n_targets, dtype=np.int64)
    planted_by_target = []
    if spec.signal == "ring-distance":
        # shared per-class pools of signal authors, reached through private relays
        pool_class = np.repeat(np.arange(C), spec.pool_per_class)
        pool_planted = np.concatenate(
            [_plant(rng, c, C, spec.noise, spec.pool_per_class) for c in range(C)]
        )
        pool = add_nodes(1, protos[pool_planted])
        for u in range(n_targets):
            c = intended[u]
            members = pool[pool_class == c]
            chosen = rng.choice(members.size, size=spec.signal_nodes, replace=False)
            decoys = rng.integers(C, size=2)
            relays = add_nodes(1, spec.relay_scale * protos[decoys])
            for r in relays:
                edges.append((u, r, rel(0, 1)))
            for j, s in enumerate(chosen):
                edges.append((relays[j % 2], members[s], rel(1, 1)))
            planted = pool_planted[pool_class == c][chosen]
            planted_by_target.append(planted.tolist())
            labels[u] = _majority(planted, c)
        for t in range(2, spec.T):
            hubs = add_nodes(t, rng.normal(size=(max(2, n_targets // 20), d)))
            for u in range(n_targets):
                edges.append((u, hubs[rng.integers(hubs.size)], rel(0, t)))
    else:
        others = spec.T - 2
        n_a = spec.signal_nodes
        for u in range(n_targets):
            c = intended[u]
            planted = _plant(rng, c, C, spec.noise, n_a)
            for v in add_nodes(1, protos[planted]):
                edges.append((u, v, rel(0, 1)))
            anti = -(n_a / others) * protos[c]
            for t in range(2, spec.T):
                for v in add_nodes(t, anti[None, :]):
                    edges.append((u, v, rel(0, t)))
            planted_by_target.append(planted.tolist())
            labels[u] = _majority(planted, c)
    # citations would put other targets' decoy relays into the 2-ring
    citations = spec.citations if spec.citations >= 0 else 0
    for _ in range(citations * n_targets // 2):
        a, b = rng.integers(n_targets, size=2)
        if a != b:
            edges.append((int(a), int(b), rel(0, 0)))

    e = np.asarray(edges, dtype=np.int64)
    lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
    _, first = np.unique(lo * len(types) + hi, return_index=True)
    e = np.column_stack([lo, hi, e[:, 2]])[np.sort(first)]

    all_labels = np.full(len(types), -1, dtype=np.int64)
    all_labels[:n_targets] = labels
    counters = {}
    names = []
    for t in types:
        counters[t] = counters.get(t, 0) + 1
        names.append(f"{_TYPE_NAMES[t][0].upper()}{counters[t]}")
    g = build_graph(
        node_type=np.asarray(types),
        edges=e,
        features=np.concatenate(feats, axis=0).astype(np.float32),
        labels=all_labels,
        type_names=_TYPE_NAMES[: spec.T],
        relation_names=rel_names,
        node_names=names,
    )
    manifest = {
        "spec": asdict(spec),
        "num_targets": n_targets,
        "signal_type": _TYPE_NAMES[1],
        "signal_ring": 2 if spec.signal == "ring-distance" else 1,
        "planted": planted_by_target,
        "intended": intended.tolist(),
        "labels": labels.tolist(),
        "fingerprint": g.fingerprint(),
    }
    return g, manifest


def recompute_labels(manifest):
    """Labels implied by the planted signal alone (majority vote per target)."""
    out = []
    for planted, c in zip(manifest["planted"], manifest["intended"]):
        counts = np.bincount(np.asarray(planted, dtype=np.int64), minlength=c + 1)
        best = np.flatnonzero(counts == counts.max())
        out.append(int(c) if c in best else int(best[0]))
    return out


def write_synthetic(spec, directory, binary_features=False):
    g, manifest = generate_synthetic_hin(spec)
    save_graph(g, directory, binary_features=binary_features)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh)
    return g, manifest
