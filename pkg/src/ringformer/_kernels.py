"""Hot loops: BFS ring extraction, ring pooling, k-means assignment.

Every kernel has a numba implementation and a pure-numpy twin with the same
signature. ``RINGFORMER_DISABLE_NUMBA=1`` (read at import) selects the numpy
path; both are always importable for comparison.
"""
import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe; workqueue ships with numba everywhere
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RINGFORMER_DISABLE_NUMBA", "0").lower() not in (
    "1",
    "true",
    "yes",
)


def set_threads(n):
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# numpy reference paths
# ---------------------------------------------------------------------------


def ring_members_numpy(indptr, indices, source, K):
    """Nodes within ``K`` hops of ``source`` and their exact hop distance.

    Returns ``(nodes, dist)`` sorted by (dist, node id).
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    out_nodes = [frontier]
    out_dist = [np.zeros(1, dtype=np.int64)]
    for level in range(1, K + 1):
        if frontier.size == 0:
            break
        starts = indptr[frontier]
        lens = indptr[frontier + 1] - starts
        total = int(lens.sum())
        if total == 0:
            break
        offs = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(total)
        cand = np.unique(indices[offs])
        cand = cand[dist[cand] < 0]
        dist[cand] = level
        frontier = cand
        out_nodes.append(cand)
        out_dist.append(np.full(cand.size, level, dtype=np.int64))
    return np.concatenate(out_nodes), np.concatenate(out_dist)


def pool_rings_numpy(indptr, indices, node_type, features, targets, K, T):
    """Mean-pool features of every (ring, type) bucket for each target.

    Returns ``(tokens, counts)`` with shapes ``(B, K+1, T, d)`` float32 and
    ``(B, K+1, T)`` int64. Accumulation is float64 in ascending node id.
    """
    B = targets.shape[0]
    d = features.shape[1]
    tokens = np.zeros((B, K + 1, T, d), dtype=np.float32)
    counts = np.zeros((B, K + 1, T), dtype=np.int64)
    feats64 = features.astype(np.float64)
    for b in range(B):
        nodes, dist = ring_members_numpy(indptr, indices, int(targets[b]), K)
        order = np.argsort(nodes, kind="stable")
        nodes = nodes[order]
        dist = dist[order]
        slot = dist * T + node_type[nodes]
        acc = np.zeros(((K + 1) * T, d), dtype=np.float64)
        for i in range(nodes.shape[0]):
            acc[slot[i]] += feats64[nodes[i]]
        cnt = np.bincount(slot, minlength=(K + 1) * T)
        nz = cnt > 0
        acc[nz] /= cnt[nz, None]
        tokens[b] = acc.reshape(K + 1, T, d).astype(np.float32)
        counts[b] = cnt.reshape(K + 1, T)
    return tokens, counts


def kmeans_assign_numpy(X, centers):
    """Nearest center per row by direct squared differences (chunked)."""
    n, d = X.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    step = max(1, (1 << 22) // max(k * d, 1))
    for s in range(0, n, step):
        diff = X[s : s + step, None, :] - centers[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        labels[s : s + step] = np.argmin(d2, axis=1)
        best[s : s + step] = d2[np.arange(d2.shape[0]), labels[s : s + step]]
    return labels, best


# ---------------------------------------------------------------------------
# numba paths
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _bfs_within(indptr, indices, source, K, dist, queue):
        # dist must be -1 everywhere on entry; caller resets visited entries
        dist[source] = 0
        queue[0] = source
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            du = dist[u]
            if du >= K:
                continue
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if dist[v] < 0:
                    dist[v] = du + 1
                    queue[tail] = v
                    tail += 1
        return tail

    @njit(cache=True)
    def ring_members_numba(indptr, indices, source, K):
        n = indptr.shape[0] - 1
        dist = np.full(n, -1, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        m = _bfs_within(indptr, indices, source, K, dist, queue)
        nodes = queue[:m].copy()
        dd = np.empty(m, dtype=np.int64)
        for i in range(m):
            dd[i] = dist[nodes[i]]
        key = dd * n + nodes
        order = np.argsort(key)
        return nodes[order], dd[order]

    @njit(cache=True, parallel=True)
    def pool_rings_numba(indptr, indices, node_type, features, targets, K, T):
        B = targets.shape[0]
        n = indptr.shape[0] - 1
        d = features.shape[1]
        tokens = np.zeros((B, K + 1, T, d), dtype=np.float32)
        counts = np.zeros((B, K + 1, T), dtype=np.int64)
        for b in prange(B):
            dist = np.full(n, -1, dtype=np.int64)
            queue = np.empty(n, dtype=np.int64)
            m = _bfs_within(indptr, indices, targets[b], K, dist, queue)
            members = np.sort(queue[:m])
            acc = np.zeros(((K + 1) * T, d), dtype=np.float64)
            cnt = np.zeros((K + 1) * T, dtype=np.int64)
            for i in range(m):
                v = members[i]
                s = dist[v] * T + node_type[v]
                cnt[s] += 1
                for j in range(d):
                    acc[s, j] += features[v, j]
            for s in range((K + 1) * T):
                k = s // T
                t = s % T
                counts[b, k, t] = cnt[s]
                if cnt[s] > 0:
                    for j in range(d):
                        tokens[b, k, t, j] = np.float32(acc[s, j] / cnt[s])
        return tokens, counts

    @njit(cache=True, parallel=True)
    def kmeans_assign_numba(X, centers):
        n = X.shape[0]
        k = centers.shape[0]
        d = X.shape[1]
        labels = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=np.float64)
        for i in prange(n):
            bl = 0
            bd = np.inf
            for c in range(k):
                s = 0.0
                for j in range(d):
                    diff = X[i, j] - centers[c, j]
                    s += diff * diff
                if s < bd:
                    bd = s
                    bl = c
            labels[i] = bl
            best[i] = bd
        return labels, best


if USE_NUMBA:
    ring_members = ring_members_numba
    pool_rings = pool_rings_numba
    kmeans_assign = kmeans_assign_numba
else:
    ring_members = ring_members_numpy
    pool_rings = pool_rings_numpy
    kmeans_assign = kmeans_assign_numpy
