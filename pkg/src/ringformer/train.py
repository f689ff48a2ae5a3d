"""Semi-supervised training of the hierarchical model on labeled target nodes."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tn
from .model import ModelParams, forward, init_params
from .rings import check_cache

logger = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 64
    eval_every: int = 1
    patience: int = 30
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def cross_entropy_loss(logits, labels):
    return tn.cross_entropy_with_logits(logits, labels)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update with decoupled weight decay, in place.

    ``params`` maps names to arrays (or Tensors); ``grads`` to arrays.
    """
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        arr = p.data if isinstance(p, tn.Tensor) else p
        g = np.asarray(grads[name])
        if g.shape != arr.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {arr.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay:
            update = update + cfg.lr * cfg.weight_decay * arr
        arr -= update.astype(arr.dtype)
    return params, state


def stratified_split(labels, fraction, rng):
    """Indices ``(keep, held)`` with ``held`` ~ ``fraction`` of each class."""
    labels = np.asarray(labels)
    keep, held = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_held = int(round(fraction * idx.size))
        if idx.size > 1:
            n_held = min(max(n_held, 1), idx.size - 1)
        else:
            n_held = 0
        held.append(idx[:n_held])
        keep.append(idx[n_held:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(held))


@dataclass
class TrainResult:
    params: ModelParams  # best-validation parameters
    history: list
    best_epoch: int
    best_val_micro_f1: float
    train_nodes: np.ndarray
    val_nodes: np.ndarray


def _evaluate(tokens, counts, labels, params):
    with tn.no_grad():
        out = forward(tokens, counts, params)
        loss = tn.cross_entropy_with_logits(out.logits, labels).item()
        acc = float((out.logits.data.argmax(axis=1) == labels).mean())
    return loss, acc


def train(g, cache, mcfg, tcfg, params=None):
    """Fit model parameters with Adam on the labeled nodes of ``g``.

    Returns the best-validation parameters and a per-epoch history of
    ``epoch, train_loss, val_loss, val_micro_f1``.
    """
    check_cache(cache, g, mcfg.K)
    labeled = g.labeled_nodes
    if labeled.size == 0:
        raise ValueError("graph has no labeled nodes")
    rows = cache.index_of(labeled)
    labels = g.labels[labeled]
    rng = np.random.default_rng(tcfg.seed)
    tr, va = stratified_split(labels, tcfg.val_fraction, rng)
    if va.size == 0:
        va = tr
    tokens, counts = cache.tokens, cache.counts
    tr_rows, va_rows = rows[tr], rows[va]
    va_tok, va_cnt, va_lab = tokens[va_rows], counts[va_rows], labels[va]

    params = init_params(mcfg) if params is None else params
    state = AdamState()
    drop_rng = np.random.default_rng([tcfg.seed, 1])
    history = []
    best = params.copy()
    best_f1, best_epoch, stale = -1.0, 0, 0

    for epoch in range(1, tcfg.epochs + 1):
        perm = rng.permutation(tr.size)
        total, seen = 0.0, 0
        for s in range(0, perm.size, tcfg.batch_size):
            b = perm[s : s + tcfg.batch_size]
            br = tr_rows[b]
            params.zero_grad()
            where = f"epoch {epoch}, batch offset {s}; lr={tcfg.lr}"
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    out = forward(tokens[br], counts[br], params, train=True, rng=drop_rng)
                    loss = tn.cross_entropy_with_logits(out.logits, labels[tr[b]])
            except tn.NonFiniteError as exc:
                raise TrainingDivergence(f"{exc} at {where}") from None
            lv = loss.item()
            if not math.isfinite(lv):
                raise TrainingDivergence(
                    f"non-finite loss {lv} at {where}, "
                    f"max |logit|={np.nanmax(np.abs(out.logits.data)):.3g}"
                )
            with np.errstate(over="ignore", invalid="ignore"):
                loss.backward()
                adam_step(params.tensors, params.grads(), state, tcfg)
            bad = [k for k, v in params.arrays().items() if not np.isfinite(v).all()]
            if bad:
                raise TrainingDivergence(f"non-finite parameters {bad[:3]} after update at {where}")
            total += lv * b.size
            seen += b.size
        row = {"epoch": epoch, "train_loss": total / max(seen, 1)}
        if epoch % tcfg.eval_every == 0 or epoch == tcfg.epochs:
            vl, vf = _evaluate(va_tok, va_cnt, va_lab, params)
            row.update(val_loss=vl, val_micro_f1=vf)
            if vf > best_f1:
                best_f1, best_epoch, stale = vf, epoch, 0
                best = params.copy()
            else:
                stale += tcfg.eval_every
        else:
            row.update(val_loss=float("nan"), val_micro_f1=float("nan"))
        history.append(row)
        logger.debug("epoch %d %s", epoch, row)
        if tcfg.patience and stale >= tcfg.patience:
            logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break
    if tcfg.epochs == 0:
        best = params
    return TrainResult(
        params=best,
        history=history,
        best_epoch=best_epoch,
        best_val_micro_f1=best_f1,
        train_nodes=labeled[tr],
        val_nodes=labeled[va],
    )


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "val_micro_f1"],
                           lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
