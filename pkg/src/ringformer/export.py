"""Embedding export: little-endian binary matrix with node-id index, or CSV.

Binary layout: magic ``EMB1``, u64 n, u32 d, n x u64 node ids, n x d f32.
A sidecar ``<file>.index.csv`` (``node_index,node_id``) maps dense ids back to
the names used in the graph files.
"""
from __future__ import annotations

import csv
import struct

import numpy as np

EMB_MAGIC = b"EMB1"
_HEAD = struct.Struct("<4sQI")


def write_embeddings(path, node_ids, Z, names=None):
    Z = np.ascontiguousarray(Z, dtype="<f4")
    node_ids = np.asarray(node_ids, dtype="<u8")
    if str(path).endswith(".csv"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id"] + [f"e{j}" for j in range(Z.shape[1])])
            for i, row in zip(node_ids.tolist(), Z):
                w.writerow([names[i] if names else i] + [repr(float(x)) for x in row])
        return
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(EMB_MAGIC, Z.shape[0], Z.shape[1]))
        fh.write(node_ids.tobytes())
        fh.write(Z.tobytes())
    if names:
        with open(f"{path}.index.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_index", "node_id"])
            for i in node_ids.tolist():
                w.writerow([i, names[i]])


def read_embeddings(path):
    """Return ``(keys, Z)``; keys are node names when known, else dense ids as str."""
    if str(path).endswith(".csv"):
        keys, rows = [], []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                keys.append(row[0])
                rows.append([float(x) for x in row[1:]])
        return keys, np.asarray(rows, dtype=np.float32)
    with open(path, "rb") as fh:
        magic, n, d = _HEAD.unpack(fh.read(_HEAD.size))
        if magic != EMB_MAGIC:
            raise ValueError(f"{path}: not an embedding file (magic {magic!r})")
        ids = np.frombuffer(fh.read(8 * n), dtype="<u8").astype(np.int64)
        Z = np.frombuffer(fh.read(4 * n * d), dtype="<f4").reshape(n, d).copy()
    keys = [str(i) for i in ids.tolist()]
    try:
        with open(f"{path}.index.csv", newline="") as fh:
            r = csv.reader(fh)
            next(r)
            name_of = {row[0]: row[1] for row in r}
        keys = [name_of.get(k, k) for k in keys]
    except FileNotFoundError:
        pass
    return keys, Z


def read_labels(path):
    out = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            if row and not row[0].startswith("#"):
                out[row[0].strip()] = int(row[1])
    return out
