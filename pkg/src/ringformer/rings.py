"""Distance-exact (ring, type) neighbourhood extraction and token pooling.

Cache file layout (little-endian)::

    magic  b"R2T1"
    K u32, T u32, d_in u32, count u64
    graph key   32 bytes  sha256(graph fingerprint, K)
    payload sha 32 bytes  sha256 of everything after the header
    count records of:
        node id u64
        occupancy bitmap  ceil((K+1)*T / 8) bytes, np.packbits order
        member counts     (K+1)*T u32
        tokens            (K+1)*T*d_in f32, row-major
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"R2T1"
_HEADER = struct.Struct("<4sIIIQ32s32s")


class CacheError(Exception):
    pass


@dataclass
class RingPartition:
    """``rings[k][t]`` holds the sorted ids of nodes at distance k with type t."""

    target: int
    rings: list

    @property
    def K(self):
        return len(self.rings) - 1

    def ring(self, k):
        return np.sort(np.concatenate(self.rings[k]))

    def sizes(self):
        return np.array([[b.size for b in ring] for ring in self.rings], dtype=np.int64)


@dataclass
class TokenTensor:
    target: int
    tokens: np.ndarray  # (K+1, T, d_in) float32
    counts: np.ndarray  # (K+1, T) member counts

    @property
    def occupancy(self):
        return self.counts > 0


def bfs_rings(g, u, K):
    """Partition the K-hop neighbourhood of ``u`` by exact distance and type."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0 <= u < g.num_nodes:
        raise IndexError(f"node id {u} out of range")
    nodes, dist = _kernels.ring_members(g.indptr, g.indices, np.int64(u), np.int64(K))
    types = g.node_type[nodes]
    rings = []
    for k in range(K + 1):
        in_ring = nodes[dist == k]
        t_ring = types[dist == k]
        rings.append([np.sort(in_ring[t_ring == t]) for t in range(g.num_types)])
    return RingPartition(target=int(u), rings=rings)


def pool_tokens(g, p):
    """Mean of member features per bucket; empty buckets are zero vectors."""
    T, d = g.num_types, g.feature_dim
    tokens = np.zeros((p.K + 1, T, d), dtype=np.float32)
    counts = p.sizes()
    for k, ring in enumerate(p.rings):
        for t, members in enumerate(ring):
            if members.size:
                members = np.sort(members)
                acc = np.zeros(d, dtype=np.float64)
                for v in members:
                    acc += g.features[v]
                tokens[k, t] = (acc / members.size).astype(np.float32)
    return TokenTensor(target=p.target, tokens=tokens, counts=counts)


def hop_tokens(tokens, counts):
    """Re-pool rings 1..K into one k-hop pseudo-ring per type.

    ``tokens`` ``(..., K+1, T, d)`` and ``counts`` ``(..., K+1, T)`` in, and
    ``(..., 2, T, d)`` / ``(..., 2, T)`` out: ring 0 unchanged, ring 1 the
    count-weighted mean over the original rings 1..K.
    """
    c = counts[..., 1:, :].astype(np.float64)
    total = c.sum(axis=-2)
    acc = (tokens[..., 1:, :, :].astype(np.float64) * c[..., None]).sum(axis=-3)
    hop = np.divide(acc, total[..., None], out=np.zeros_like(acc), where=total[..., None] > 0)
    out_tok = np.stack([tokens[..., 0, :, :], hop.astype(np.float32)], axis=-3)
    out_cnt = np.stack([counts[..., 0, :], total.astype(counts.dtype)], axis=-2)
    return out_tok, out_cnt


def type_mixed_tokens(tokens, counts):
    """Collapse the type axis: one token per ring averaging all member types."""
    c = counts.astype(np.float64)
    total = c.sum(axis=-1)
    acc = (tokens.astype(np.float64) * c[..., None]).sum(axis=-2)
    mixed = np.divide(acc, total[..., None], out=np.zeros_like(acc), where=total[..., None] > 0)
    return mixed[..., None, :].astype(np.float32), total[..., None].astype(counts.dtype)


# ---------------------------------------------------------------------------
# batched precompute + cache
# ---------------------------------------------------------------------------


@dataclass
class TokenCache:
    K: int
    T: int
    d_in: int
    node_ids: np.ndarray  # (B,) int64
    tokens: np.ndarray  # (B, K+1, T, d_in) float32
    counts: np.ndarray  # (B, K+1, T) int64
    graph_key: bytes = b""

    def __len__(self):
        return int(self.node_ids.shape[0])

    def index_of(self, nodes):
        pos = {int(v): i for i, v in enumerate(self.node_ids.tolist())}
        try:
            return np.array([pos[int(v)] for v in nodes], dtype=np.int64)
        except KeyError as exc:
            raise CacheError(f"node {exc.args[0]} is not in the token cache") from None

    def get(self, node):
        i = int(self.index_of([node])[0])
        return TokenTensor(target=int(node), tokens=self.tokens[i], counts=self.counts[i])


def graph_key(g, K):
    return hashlib.sha256(f"{g.fingerprint()}|K={int(K)}".encode()).digest()


def compute_tokens(g, nodes, K):
    """Fused BFS + pooling for many targets; returns ``(tokens, counts)``."""
    nodes = np.ascontiguousarray(nodes, dtype=np.int64)
    feats = np.ascontiguousarray(g.features, dtype=np.float32)
    return _kernels.pool_rings(
        g.indptr, g.indices, g.node_type, feats, nodes, np.int64(K), np.int64(g.num_types)
    )


def select_nodes(g, nodes="target"):
    """Resolve ``"target"``, ``"all"`` or an explicit id list to an id array."""
    if isinstance(nodes, str):
        if nodes == "all":
            ids = np.arange(g.num_nodes, dtype=np.int64)
        elif nodes == "target":
            tt = g.target_type
            ids = g.nodes_of_type(tt) if tt is not None else np.arange(g.num_nodes)
        else:
            raise ValueError(f"unknown node selection {nodes!r}")
    else:
        ids = nodes
    return np.asarray(ids, dtype=np.int64)


def build_cache(g, K, nodes="target"):
    if K < 1:
        raise ValueError("K must be >= 1")
    ids = select_nodes(g, nodes)
    tokens, counts = compute_tokens(g, ids, K)
    return TokenCache(
        K=int(K),
        T=g.num_types,
        d_in=g.feature_dim,
        node_ids=ids.astype(np.int64),
        tokens=tokens,
        counts=counts,
        graph_key=graph_key(g, K),
    )


def _payload(cache):
    slots = (cache.K + 1) * cache.T
    B = len(cache)
    bits = np.packbits(cache.counts.reshape(B, slots) > 0, axis=1)
    rec = np.dtype(
        [
            ("id", "<u8"),
            ("occ", "u1", (bits.shape[1],)),
            ("cnt", "<u4", (slots,)),
            ("tok", "<f4", (slots * cache.d_in,)),
        ]
    )
    arr = np.zeros(B, dtype=rec)
    arr["id"] = cache.node_ids
    arr["occ"] = bits
    arr["cnt"] = cache.counts.reshape(B, slots)
    arr["tok"] = cache.tokens.reshape(B, slots * cache.d_in)
    return arr.tobytes(), rec


def write_cache(cache, path):
    body, _ = _payload(cache)
    head = _HEADER.pack(
        CACHE_MAGIC,
        cache.K,
        cache.T,
        cache.d_in,
        len(cache),
        cache.graph_key.ljust(32, b"\0"),
        hashlib.sha256(body).digest(),
    )
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head)
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def read_cache_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise CacheError(f"{path}: truncated header")
    magic, K, T, d_in, count, key, digest = _HEADER.unpack(raw)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    return {"K": K, "T": T, "d_in": d_in, "count": count, "graph_key": key, "sha256": digest}


def read_cache(path):
    h = read_cache_header(path)
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        body = fh.read()
    if hashlib.sha256(body).digest() != h["sha256"]:
        raise CacheError(f"{path}: payload checksum mismatch (partial or corrupt cache)")
    K, T, d_in, B = h["K"], h["T"], h["d_in"], h["count"]
    probe = TokenCache(K, T, d_in, np.zeros(0, np.int64), np.zeros((0, K + 1, T, d_in), np.float32),
                       np.zeros((0, K + 1, T), np.int64))
    _, rec = _payload(probe)
    if len(body) != B * rec.itemsize:
        raise CacheError(f"{path}: payload size does not match header count")
    arr = np.frombuffer(body, dtype=rec)
    counts = arr["cnt"].astype(np.int64).reshape(B, K + 1, T)
    occ = np.unpackbits(arr["occ"], axis=1, count=(K + 1) * T).reshape(B, K + 1, T).astype(bool)
    if not np.array_equal(occ, counts > 0):
        raise CacheError(f"{path}: occupancy bitmap disagrees with member counts")
    return TokenCache(
        K=K,
        T=T,
        d_in=d_in,
        node_ids=arr["id"].astype(np.int64),
        tokens=arr["tok"].reshape(B, K + 1, T, d_in).copy(),
        counts=counts,
        graph_key=h["graph_key"],
    )


def precompute_all(g, K, cache_path, nodes="target"):
    """Build (or reuse) the token cache for ``g`` at ``cache_path``.

    An existing file whose graph key and payload checksum both match is
    reused untouched; anything else is rebuilt.
    """
    key = graph_key(g, K)
    if os.path.exists(cache_path):
        try:
            cached = read_cache(cache_path)
        except CacheError as exc:
            logger.warning("rebuilding cache: %s", exc)
        else:
            if cached.graph_key == key and np.array_equal(cached.node_ids, select_nodes(g, nodes)):
                logger.info("cache %s is up to date", cache_path)
                return cached
    cache = build_cache(g, K, nodes=nodes)
    write_cache(cache, cache_path)
    logger.info("wrote %d token tensors (K=%d, T=%d, d_in=%d) to %s",
                len(cache), cache.K, cache.T, cache.d_in, cache_path)
    return cache


def check_cache(cache, g, K=None):
    """Raise :class:`CacheError` naming every field that disagrees with ``g``."""
    diffs = []
    if cache.T != g.num_types:
        diffs.append(f"T: cache {cache.T} vs graph {g.num_types}")
    if cache.d_in != g.feature_dim:
        diffs.append(f"d_in: cache {cache.d_in} vs graph {g.feature_dim}")
    if K is not None and cache.K != K:
        diffs.append(f"K: cache {cache.K} vs config {K}")
    if cache.graph_key and cache.graph_key != graph_key(g, cache.K):
        diffs.append("graph fingerprint differs from the graph the cache was built from")
    if diffs:
        raise CacheError("cache/config mismatch: " + "; ".join(diffs))
