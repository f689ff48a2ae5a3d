"""``ringformer`` command line: validate, preprocess, train, embed, eval, generate.

Exit codes: 0 ok, 2 usage error, 3 validation error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, _kernels
from .evaluate import cluster_eval, linear_probe
from .export import read_embeddings, read_labels, write_embeddings
from .graph import GraphError, load_graph_dir, validate
from .model import ModelConfig, ModelParams, embed
from .rings import CacheError, check_cache, precompute_all, read_cache
from .synthetic import SyntheticSpec, write_synthetic
from .train import TrainConfig, TrainingDivergence, train, write_history

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("ringformer")


class UsageError(Exception):
    pass


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _default_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("RINGFORMER_SEED")
    return int(env) if env else None


def write_manifest(out_dir, command, config, **extra):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "numba": _kernels.USE_NUMBA,
        "config": config,
        "created": _now(),
        **extra,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args):
    g = load_graph_dir(args.graph, allow_self_loops=args.allow_self_loops)
    print(f"nodes      {g.num_nodes}")
    print(f"edges      {g.num_edges}")
    print(f"features   {g.feature_dim}")
    print(f"labeled    {int((g.labels >= 0).sum())}  classes {g.num_classes}")
    for name, c in g.type_histogram().items():
        print(f"type       {name:<12} {c}")
    for i, name in enumerate(g.relation_names):
        print(f"relation   {name:<12} {int((g.edges[:, 2] == i).sum())}")
    problems = validate(g)
    for p in problems:
        print(f"INVALID    {p}")
    return EXIT_INVALID if problems else EXIT_OK


def cmd_preprocess(args):
    g = load_graph_dir(args.graph, allow_self_loops=args.allow_self_loops)
    cache = precompute_all(g, args.K, args.out, nodes=args.nodes)
    print(f"cache {args.out}: {len(cache)} nodes, tokens {cache.K + 1}x{cache.T}x{cache.d_in}")
    return EXIT_OK


def _load_config(path):
    if not path:
        return {}, {}
    with open(path) as fh:
        raw = json.load(fh)
    if "command" in raw and "config" in raw:  # a run manifest: reuse its effective config
        raw = {k: raw["config"][k] for k in ("model", "train")}
        for k in ("K", "T", "d_in", "num_classes"):
            raw["model"].pop(k, None)
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise UsageError(f"{path}: unknown top-level keys {sorted(unknown)}")
    return dict(raw.get("model", {})), dict(raw.get("train", {}))


_MODEL_FLAGS = ("d", "heads", "L_t", "L_r", "dropout", "attn_dropout", "variant", "dtype")
_TRAIN_FLAGS = ("lr", "epochs", "batch_size", "patience", "weight_decay")


def cmd_train(args):
    g = load_graph_dir(args.graph, allow_self_loops=args.allow_self_loops)
    cache = read_cache(args.cache)
    mdict, tdict = _load_config(args.config)
    for k in _MODEL_FLAGS:
        if getattr(args, k, None) is not None:
            mdict[k] = getattr(args, k)
    if args.mask_empty:
        mdict["mask_empty"] = True
    for k in _TRAIN_FLAGS:
        if getattr(args, k, None) is not None:
            tdict[k] = getattr(args, k)
    seed = _default_seed(args)
    if seed is not None:
        mdict["seed"] = tdict["seed"] = seed
    if "K" in mdict and mdict["K"] != cache.K:
        raise CacheError(f"cache/config mismatch: K: cache {cache.K} vs config {mdict['K']}")
    mdict.update(K=cache.K, T=g.num_types, d_in=g.feature_dim, num_classes=g.num_classes)
    try:
        mcfg = ModelConfig.from_dict(mdict)
        tcfg = TrainConfig.from_dict(tdict)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    check_cache(cache, g, mcfg.K)
    os.makedirs(args.out, exist_ok=True)
    result = train(g, cache, mcfg, tcfg)
    result.params.save(os.path.join(args.out, "checkpoint.rft"), os.path.join(args.out, "model_config.json"))
    write_history(result.history, os.path.join(args.out, "history.csv"))
    write_manifest(
        args.out,
        "train",
        {"model": dataclasses.asdict(mcfg), "train": tcfg.to_dict(),
         "graph": os.path.abspath(args.graph), "cache": os.path.abspath(args.cache)},
        graph_fingerprint=g.fingerprint(),
        cache_fingerprint=_file_sha256(args.cache),
        seeds={"model": mcfg.seed, "train": tcfg.seed},
        best_epoch=result.best_epoch,
        best_val_micro_f1=result.best_val_micro_f1,
    )
    print(f"trained {len(result.history)} epochs; best epoch {result.best_epoch} "
          f"val micro-F1 {result.best_val_micro_f1:.4f}")
    return EXIT_OK


def _run_manifest(run):
    with open(os.path.join(run, "manifest.json")) as fh:
        return json.load(fh)


def cmd_embed(args):
    man = _run_manifest(args.run)
    graph_dir = args.graph or man["config"]["graph"]
    cache_path = args.cache or man["config"]["cache"]
    g = load_graph_dir(graph_dir, allow_self_loops=args.allow_self_loops)
    cache = read_cache(cache_path)
    with open(os.path.join(args.run, "model_config.json")) as fh:
        mcfg = ModelConfig.from_dict(json.load(fh))
    check_cache(cache, g, mcfg.K)
    params = ModelParams.load(os.path.join(args.run, "checkpoint.rft"), mcfg)
    tt = g.target_type
    keep = np.ones(len(cache), dtype=bool) if tt is None else g.node_type[cache.node_ids] == tt
    ids = cache.node_ids[keep]
    Z = embed(cache.tokens[keep], cache.counts[keep], params)
    out = args.out or os.path.join(args.run, "embeddings.bin")
    write_embeddings(out, ids, Z, names=list(g.node_names))
    print(f"wrote {Z.shape[0]} x {Z.shape[1]} embeddings to {out}")
    return EXIT_OK


def _aligned(emb_path, label_path):
    keys, Z = read_embeddings(emb_path)
    labels = read_labels(label_path)
    rows = [i for i, k in enumerate(keys) if k in labels]
    if not rows:
        raise UsageError("no embedding row matches a labeled node id")
    return Z[rows], np.asarray([labels[keys[i]] for i in rows])


def cmd_eval(args):
    Z, y = _aligned(args.embeddings, args.labels)
    seed = _default_seed(args) or 0
    if args.task == "classify":
        rep = linear_probe(Z, y, repeats=args.repeats, seed=seed, probe=args.probe)
        header = "Method & Macro-F1 & Micro-F1"
    else:
        rep = cluster_eval(Z, y, repeats=args.repeats, seed=seed)
        header = "Method & NMI & ARI"
    print(header)
    print(rep.table_row(args.name))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(rep.to_json())
    return EXIT_OK


def cmd_generate(args):
    spec = SyntheticSpec(
        T=args.T, classes=args.classes, nodes_per_class=args.nodes_per_class,
        signal=args.signal, noise=args.noise, seed=_default_seed(args) or 0, d_in=args.d_in,
    )
    g, _ = write_synthetic(spec, args.out, binary_features=args.binary)
    print(f"wrote {args.signal} graph to {args.out}: {g.num_nodes} nodes, {g.num_edges} edges")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ringformer", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    # also accepted after the subcommand name
    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=int, default=argparse.SUPPRESS)

    def graph_args(sp, required=True):
        sp.add_argument("--graph", required=required, help="graph directory")
        sp.add_argument("--allow-self-loops", action="store_true")

    sp = sub.add_parser("validate", parents=[threads], help="load a graph and check its invariants")
    graph_args(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("preprocess", parents=[threads], help="extract (k,t)-ring tokens into a cache")
    graph_args(sp)
    sp.add_argument("--K", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--nodes", choices=("target", "all"), default="target")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", parents=[threads], help="train the model on labeled nodes")
    graph_args(sp)
    sp.add_argument("--cache", required=True)
    sp.add_argument("--config", help="JSON file with 'model' and 'train' sections")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--seed", type=int)
    for name, typ in (("d", int), ("heads", int), ("L_t", int), ("L_r", int), ("dropout", float),
                      ("attn_dropout", float), ("lr", float), ("epochs", int),
                      ("batch_size", int), ("patience", int), ("weight_decay", float)):
        sp.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    sp.add_argument("--variant", choices=("full", "no_ring", "no_type", "no_att"))
    sp.add_argument("--dtype", choices=("float32", "float64"))
    sp.add_argument("--mask-empty", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("embed", parents=[threads], help="export embeddings of all target nodes")
    sp.add_argument("--run", required=True)
    graph_args(sp, required=False)
    sp.add_argument("--cache")
    sp.add_argument("--out", help="output .bin or .csv (default RUN/embeddings.bin)")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("eval", parents=[threads], help="linear-probe or k-means evaluation of embeddings")
    sp.add_argument("task", choices=("classify", "cluster"))
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--probe", choices=("svm", "logreg"), default="svm")
    sp.add_argument("--name", default="ringformer", help="row label in the table line")
    sp.add_argument("--out", help="write the JSON report here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("generate", parents=[threads], help="write a synthetic planted-signal graph")
    sp.add_argument("--signal", choices=("ring-distance", "type-mix"), default="ring-distance")
    sp.add_argument("--out", required=True)
    sp.add_argument("--T", type=int, default=3)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--nodes-per-class", type=int, default=200)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--d-in", type=int, default=16)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--binary", action="store_true", help="write features.bin")
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _kernels.set_threads(args.threads or os.cpu_count())
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphError, CacheError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
