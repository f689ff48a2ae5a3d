"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--nodes-per-class 1000] [--K 3] [--repeat 3]

Both paths are imported side by side, so one process measures both. The
numba timings exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from ringformer import _kernels as kr
from ringformer.synthetic import SyntheticSpec, generate_synthetic_hin


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes-per-class", type=int, default=1000)
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kr.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    g, _ = generate_synthetic_hin(SyntheticSpec(nodes_per_class=args.nodes_per_class, seed=0))
    targets = g.labeled_nodes.astype(np.int64)
    K, T = np.int64(args.K), np.int64(g.num_types)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20_000, 64))
    C = rng.normal(size=(8, 64))

    cases = {
        "ring_members (x200)": (
            lambda: [kr.ring_members_numpy(g.indptr, g.indices, np.int64(u), K) for u in targets[:200]],
            lambda: [kr.ring_members_numba(g.indptr, g.indices, np.int64(u), K) for u in targets[:200]],
        ),
        f"pool_rings ({targets.size} targets)": (
            lambda: kr.pool_rings_numpy(g.indptr, g.indices, g.node_type, g.features, targets, K, T),
            lambda: kr.pool_rings_numba(g.indptr, g.indices, g.node_type, g.features, targets, K, T),
        ),
        "kmeans_assign (20000x64, k=8)": (
            lambda: kr.kmeans_assign_numpy(X, C),
            lambda: kr.kmeans_assign_numba(X, C),
        ),
    }
    print(f"graph: {g.num_nodes} nodes, {g.num_edges} edges, K={args.K}")
    print(f"{'kernel':<34}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for name, (np_fn, nb_fn) in cases.items():
        nb_fn()  # compile
        t_np, t_nb = best_of(np_fn, args.repeat), best_of(nb_fn, args.repeat)
        print(f"{name:<34}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
