"""Heterogeneous information network container and its on-disk formats.

Directory layout understood by :func:`load_graph_dir` / :func:`save_graph`::

    nodes.csv      optional "# counts: a=3,b=2" line, header node_id,type_name
    edges.csv      header src,dst,relation_name
    features.csv   header node_id,f0,...,f{d-1}   (or features.bin, see below)
    labels.csv     header node_id,class_id       (optional)

``features.bin`` is little-endian: magic ``HINF``, u64 |V|, u32 d_in, then
|V| x d_in float32 rows in node-file order.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"HINF"
_FEATURE_HEADER = struct.Struct("<4sQI")


class GraphError(Exception):
    """Base class for graph ingestion problems."""


class GraphParseError(GraphError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class GraphValidationError(GraphError):
    pass


@dataclass(frozen=True, eq=False)
class HinGraph:
    """Immutable typed, undirected graph with node features and partial labels.

    ``indptr``/``indices``/``edge_rel`` form a symmetric CSR whose neighbor
    lists are sorted by node id. ``labels`` holds -1 for unlabeled nodes.
    """

    node_type: np.ndarray
    edges: np.ndarray  # (m, 3) int64 rows (src, dst, rel) with src <= dst
    features: np.ndarray
    labels: np.ndarray
    type_names: tuple
    relation_names: tuple
    node_names: tuple = ()
    allow_self_loops: bool = False
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)
    edge_rel: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.node_type.shape[0])
        if not self.node_names:
            object.__setattr__(self, "node_names", tuple(str(i) for i in range(n)))
        self._check()
        src, dst, rel = self.edges[:, 0], self.edges[:, 1], self.edges[:, 2]
        loops = src == dst
        a = np.concatenate([src, dst[~loops]])
        b = np.concatenate([dst, src[~loops]])
        r = np.concatenate([rel, rel[~loops]])
        order = np.lexsort((b, a))
        a, b, r = a[order], b[order], r[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
        for name, arr in (("indptr", indptr), ("indices", b), ("edge_rel", r)):
            arr = np.ascontiguousarray(arr, dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("node_type", "edges", "features", "labels"):
            getattr(self, name).setflags(write=False)

    def _check(self):
        n = self.num_nodes
        T = len(self.type_names)
        if self.node_type.ndim != 1:
            raise GraphValidationError("node_type must be 1-D")
        if n and (self.node_type.min() < 0 or self.node_type.max() >= T):
            raise GraphValidationError("node type id out of range")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphValidationError(
                f"feature matrix has shape {self.features.shape}, expected ({n}, d_in)"
            )
        if self.labels.shape != (n,):
            raise GraphValidationError("labels must have one entry per node")
        if len(self.node_names) != n:
            raise GraphValidationError("node_names length differs from node count")
        e = self.edges
        if e.ndim != 2 or e.shape[1] != 3:
            raise GraphValidationError("edges must be an (m, 3) array")
        if e.size:
            if e[:, :2].min() < 0 or e[:, :2].max() >= n:
                raise GraphValidationError("edge endpoint is not a valid node id")
            if e[:, 2].min() < 0 or e[:, 2].max() >= len(self.relation_names):
                raise GraphValidationError("relation id out of range")
            if np.any(e[:, 0] > e[:, 1]):
                raise GraphValidationError("edges must be stored with src <= dst")
            if not self.allow_self_loops and np.any(e[:, 0] == e[:, 1]):
                raise GraphValidationError("self-loop present (allow_self_loops is off)")
            key = e[:, 0] * n + e[:, 1]
            if np.unique(key).size != key.size:
                raise GraphValidationError("duplicate undirected edge")
        labeled = self.labels >= 0
        if labeled.any():
            if np.unique(self.node_type[labeled]).size != 1:
                raise GraphValidationError("labeled nodes span more than one node type")

    # -- basic accessors -------------------------------------------------

    @property
    def num_nodes(self):
        return int(self.node_type.shape[0])

    @property
    def num_edges(self):
        return int(self.edges.shape[0])

    @property
    def num_types(self):
        return len(self.type_names)

    @property
    def feature_dim(self):
        return int(self.features.shape[1])

    @property
    def num_classes(self):
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if lab.size else 0

    @property
    def target_type(self):
        """Type id of the labeled nodes, or None when nothing is labeled."""
        lab = self.labels >= 0
        return int(self.node_type[lab][0]) if lab.any() else None

    @property
    def labeled_nodes(self):
        return np.flatnonzero(self.labels >= 0)

    def nodes_of_type(self, t):
        return np.flatnonzero(self.node_type == t)

    def type_histogram(self):
        counts = np.bincount(self.node_type, minlength=self.num_types)
        return {name: int(c) for name, c in zip(self.type_names, counts)}

    def is_heterogeneous(self):
        return self.num_types + len(self.relation_names) > 2

    def fingerprint(self):
        """SHA-256 over structure, features and labels."""
        h = hashlib.sha256()
        for arr in (self.node_type, self.edges, self.labels):
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.features, dtype="<f4").tobytes())
        h.update("\x1f".join(self.type_names).encode())
        h.update("\x1e".join(self.relation_names).encode())
        return h.hexdigest()


def neighbors(g, u):
    """Adjacent ``(node_id, relation_id)`` pairs of ``u`` sorted by node id."""
    if not 0 <= u < g.num_nodes:
        raise IndexError(f"node id {u} out of range [0, {g.num_nodes})")
    lo, hi = g.indptr[u], g.indptr[u + 1]
    return list(zip(g.indices[lo:hi].tolist(), g.edge_rel[lo:hi].tolist()))


def build_graph(
    node_type,
    edges,
    features,
    labels=None,
    type_names=None,
    relation_names=None,
    node_names=(),
    allow_self_loops=False,
):
    """Construct a :class:`HinGraph` from loose arrays.

    ``edges`` rows may be in either orientation; they are canonicalised to
    ``src <= dst``. A two-column edge array gets relation id 0.
    """
    node_type = np.asarray(node_type, dtype=np.int64)
    n = node_type.shape[0]
    e = np.asarray(edges, dtype=np.int64)
    if e.size == 0:
        e = np.zeros((0, 3), dtype=np.int64)
    if e.shape[1] == 2:
        e = np.column_stack([e, np.zeros(len(e), dtype=np.int64)])
    e = np.column_stack([np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1]), e[:, 2]])
    if type_names is None:
        type_names = tuple(f"t{i}" for i in range(int(node_type.max()) + 1 if n else 1))
    if relation_names is None:
        nrel = int(e[:, 2].max()) + 1 if len(e) else 1
        relation_names = tuple(f"r{i}" for i in range(nrel))
    lab = np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    return HinGraph(
        node_type=node_type,
        edges=e,
        features=np.ascontiguousarray(features, dtype=np.float32),
        labels=lab,
        type_names=tuple(type_names),
        relation_names=tuple(relation_names),
        node_names=tuple(node_names),
        allow_self_loops=allow_self_loops,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _rows(path):
    """Yield (line_number, fields) for data rows, skipping the header."""
    with open(path, newline="") as fh:
        header_seen = False
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].startswith("#")):
                continue
            if not header_seen:
                header_seen = True
                continue
            yield lineno, [c.strip() for c in row]


def _declared_counts(path):
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith("#"):
        return None
    body = first.lstrip("#").strip()
    if not body.startswith("counts:"):
        return None
    out = {}
    for item in body[len("counts:"):].split(","):
        item = item.strip()
        if not item:
            continue
        name, _, value = item.partition("=")
        out[name.strip()] = int(value)
    return out


def read_feature_bin(path):
    with open(path, "rb") as fh:
        head = fh.read(_FEATURE_HEADER.size)
        if len(head) != _FEATURE_HEADER.size:
            raise GraphParseError(path, 0, "truncated feature header")
        magic, n, d = _FEATURE_HEADER.unpack(head)
        if magic != FEATURE_MAGIC:
            raise GraphParseError(path, 0, f"bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * d:
        raise GraphValidationError(
            f"{path}: expected {n}x{d} floats, found {data.size} values"
        )
    return data.reshape(n, d).astype(np.float32)


def write_feature_bin(path, features):
    features = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, features.shape[0], features.shape[1]))
        fh.write(features.tobytes())


def load_graph(node_file, edge_file, feature_file, label_file=None, allow_self_loops=False):
    """Parse the four graph files into a validated :class:`HinGraph`."""
    names, types = [], []
    type_index = {}
    declared = _declared_counts(node_file)
    if declared:
        for tname in declared:
            type_index.setdefault(tname, len(type_index))
    id_of = {}
    for lineno, row in _rows(node_file):
        if len(row) != 2 or not row[0] or not row[1]:
            raise GraphParseError(node_file, lineno, "expected node_id,type_name")
        if row[0] in id_of:
            raise GraphParseError(node_file, lineno, f"duplicate node id {row[0]!r}")
        id_of[row[0]] = len(names)
        names.append(row[0])
        types.append(type_index.setdefault(row[1], len(type_index)))
    n = len(names)
    type_names = tuple(sorted(type_index, key=type_index.get))
    node_type = np.asarray(types, dtype=np.int64)
    if declared is not None:
        observed = np.bincount(node_type, minlength=len(type_names))
        for tname, cnt in declared.items():
            if observed[type_index[tname]] != cnt:
                raise GraphValidationError(
                    f"{node_file}: header declares {cnt} {tname!r} nodes, found "
                    f"{observed[type_index[tname]]}"
                )

    rel_index = {}
    seen = {}
    edge_rows = []
    for lineno, row in _rows(edge_file):
        if len(row) != 3:
            raise GraphParseError(edge_file, lineno, "expected src,dst,relation_name")
        try:
            a, b = id_of[row[0]], id_of[row[1]]
        except KeyError as exc:
            raise GraphValidationError(
                f"{edge_file}:{lineno}: dangling edge endpoint {exc.args[0]!r}"
            ) from None
        if a == b and not allow_self_loops:
            raise GraphValidationError(
                f"{edge_file}:{lineno}: self-loop on {row[0]!r} (pass allow_self_loops)"
            )
        rel = rel_index.setdefault(row[2], len(rel_index))
        key = (min(a, b), max(a, b))
        if key in seen:
            logger.warning("%s:%d: duplicate edge %s-%s collapsed", edge_file, lineno, row[0], row[1])
            continue
        seen[key] = rel
        edge_rows.append((key[0], key[1], rel))
    relation_names = tuple(sorted(rel_index, key=rel_index.get)) or ("none",)
    edges = np.asarray(edge_rows, dtype=np.int64).reshape(-1, 3)

    if str(feature_file).endswith(".bin"):
        features = read_feature_bin(feature_file)
        if features.shape[0] != n:
            raise GraphValidationError(
                f"{feature_file}: {features.shape[0]} feature rows for {n} nodes"
            )
    else:
        features = None
        filled = np.zeros(n, dtype=bool)
        for lineno, row in _rows(feature_file):
            if row[0] not in id_of:
                raise GraphValidationError(f"{feature_file}:{lineno}: unknown node {row[0]!r}")
            try:
                vec = np.asarray([float(x) for x in row[1:]], dtype=np.float32)
            except ValueError:
                raise GraphParseError(feature_file, lineno, "non-numeric feature value") from None
            if features is None:
                features = np.zeros((n, vec.size), dtype=np.float32)
            if vec.size != features.shape[1]:
                raise GraphValidationError(
                    f"{feature_file}:{lineno}: feature dimension {vec.size}, expected "
                    f"{features.shape[1]}"
                )
            features[id_of[row[0]]] = vec
            filled[id_of[row[0]]] = True
        if features is None:
            features = np.zeros((n, 0), dtype=np.float32)
        if n and not filled.all():
            missing = names[int(np.flatnonzero(~filled)[0])]
            raise GraphValidationError(f"{feature_file}: no feature row for node {missing!r}")

    labels = np.full(n, -1, dtype=np.int64)
    if label_file is not None and os.path.exists(label_file):
        for lineno, row in _rows(label_file):
            if len(row) != 2:
                raise GraphParseError(label_file, lineno, "expected node_id,class_id")
            if row[0] not in id_of:
                raise GraphValidationError(f"{label_file}:{lineno}: unknown node {row[0]!r}")
            try:
                labels[id_of[row[0]]] = int(row[1])
            except ValueError:
                raise GraphParseError(label_file, lineno, "class_id must be an integer") from None
        if (labels[labels != -1] < 0).any():
            raise GraphValidationError(f"{label_file}: negative class id")

    g = HinGraph(
        node_type=node_type,
        edges=edges,
        features=features,
        labels=labels,
        type_names=type_names,
        relation_names=relation_names,
        node_names=tuple(names),
        allow_self_loops=allow_self_loops,
    )
    logger.info(
        "loaded graph: %d nodes, %d edges, %d labeled, types %s",
        g.num_nodes,
        g.num_edges,
        int((g.labels >= 0).sum()),
        g.type_histogram(),
    )
    return g


def graph_files(directory):
    """Resolve the conventional file names inside a graph directory."""
    feat = os.path.join(directory, "features.bin")
    if not os.path.exists(feat):
        feat = os.path.join(directory, "features.csv")
    return (
        os.path.join(directory, "nodes.csv"),
        os.path.join(directory, "edges.csv"),
        feat,
        os.path.join(directory, "labels.csv"),
    )


def load_graph_dir(directory, allow_self_loops=False):
    return load_graph(*graph_files(directory), allow_self_loops=allow_self_loops)


def save_graph(g, directory, binary_features=False):
    os.makedirs(directory, exist_ok=True)
    hist = g.type_histogram()
    with open(os.path.join(directory, "nodes.csv"), "w", newline="") as fh:
        fh.write("# counts: " + ",".join(f"{k}={v}" for k, v in hist.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "type_name"])
        for name, t in zip(g.node_names, g.node_type.tolist()):
            w.writerow([name, g.type_names[t]])
    with open(os.path.join(directory, "edges.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "relation_name"])
        for a, b, r in g.edges.tolist():
            w.writerow([g.node_names[a], g.node_names[b], g.relation_names[r]])
    stale = "features.csv" if binary_features else "features.bin"
    if os.path.exists(os.path.join(directory, stale)):
        os.remove(os.path.join(directory, stale))
    if binary_features:
        write_feature_bin(os.path.join(directory, "features.bin"), g.features)
    else:
        with open(os.path.join(directory, "features.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id"] + [f"f{j}" for j in range(g.feature_dim)])
            for name, row in zip(g.node_names, g.features):
                w.writerow([name] + [repr(float(x)) for x in row])
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "class_id"])
        for i in np.flatnonzero(g.labels >= 0):
            w.writerow([g.node_names[i], int(g.labels[i])])


def validate(g):
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems = []
    if not g.is_heterogeneous():
        problems.append(
            f"not heterogeneous: {g.num_types} node types + {len(g.relation_names)} "
            "relation types <= 2"
        )
    a = g.indices
    src = np.repeat(np.arange(g.num_nodes), np.diff(g.indptr))
    fwd = set(zip(src.tolist(), a.tolist()))
    if any((v, u) not in fwd for u, v in fwd):
        problems.append("adjacency is not symmetric")
    return problems
