import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ringformer.graph import build_graph  # noqa: E402

# P1..P6 = 0..5, A1..A3 = 6..8, S1 = 9 (types paper, author, subject)
TOY_NAMES = ["P1", "P2", "P3", "P4", "P5", "P6", "A1", "A2", "A3", "S1"]


def _toy(edges_by_name, n_papers=4, n_authors=3):
    names = [f"P{i + 1}" for i in range(n_papers)] + [f"A{i + 1}" for i in range(n_authors)] + ["S1"]
    idx = {n: i for i, n in enumerate(names)}
    types = [0] * n_papers + [1] * n_authors + [2]
    rel = {(0, 0): 0, (0, 1): 1, (0, 2): 2, (1, 0): 1, (2, 0): 2}
    edges = []
    for a, b in edges_by_name:
        ta, tb = types[idx[a]], types[idx[b]]
        edges.append((idx[a], idx[b], rel[(ta, tb)]))
    feats = np.arange(len(names) * 4, dtype=np.float32).reshape(len(names), 4)
    return build_graph(
        np.array(types), edges, feats,
        type_names=("paper", "author", "subject"),
        relation_names=("cites", "writes", "about"),
        node_names=names,
    )


@pytest.fixture
def two_ring_graph():
    """Toy bibliographic graph: P1 links P2, A1, A3, S1; P3, P4 are two steps away."""
    return _toy([("P1", "P2"), ("P1", "A1"), ("P1", "A3"), ("P1", "S1"),
                 ("P2", "P3"), ("A3", "P4"), ("A2", "P3")])


@pytest.fixture
def typed_star_graph():
    """P1 cites P6, is written by A1..A3, is about S1; P2..P5 hang off those."""
    return _toy([("P1", "P6"), ("P1", "A1"), ("P1", "A2"), ("P1", "A3"), ("P1", "S1"),
                 ("A1", "P2"), ("A2", "P3"), ("A3", "P4"), ("S1", "P5")], n_papers=6)


def random_typed_graph(rng, n, T, p=None):
    p = p if p is not None else min(1.0, 2.5 / max(n, 1))
    types = rng.integers(0, T, size=n)
    types[:T] = np.arange(T)[: min(T, n)]
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    edges = np.stack([iu[keep], ju[keep], np.zeros(keep.sum(), dtype=np.int64)], axis=1)
    feats = rng.normal(size=(n, 5)).astype(np.float32)
    return build_graph(types, edges, feats, type_names=tuple(f"t{i}" for i in range(T)))


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; printed as one line per criterion."""

    def record(num, title, passed, detail=""):
        line = f"criterion {num} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        _ACCEPTANCE[num] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[num])
