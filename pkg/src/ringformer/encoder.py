"""Pre-LayerNorm multi-head self-attention encoder over batched token sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass
class EncoderLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named(self, prefix):
        return {f"{prefix}.{k}": v for k, v in vars(self).items()}


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_encoder_layer(rng, d, d_ff, dtype=np.float32):
    return EncoderLayerParams(
        wq=_uniform(rng, d, (d, d), dtype),
        wk=_uniform(rng, d, (d, d), dtype),
        wv=_uniform(rng, d, (d, d), dtype),
        wo=_uniform(rng, d, (d, d), dtype),
        w1=_uniform(rng, d, (d, d_ff), dtype),
        b1=_uniform(rng, d, (d_ff,), dtype),
        w2=_uniform(rng, d_ff, (d_ff, d), dtype),
        b2=_uniform(rng, d_ff, (d,), dtype),
        ln1_gain=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        ln1_bias=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        ln2_gain=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        ln2_bias=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
    )


@dataclass
class EncoderConfig:
    heads: int = 8
    dropout: float = 0.01
    attn_dropout: float = 0.05
    ln_eps: float = 1e-5


def msa(H, p, heads, attn_dropout=0.0, train=False, rng=None, key_mask=None, return_attn=False):
    """Multi-head self-attention over ``H`` of shape ``(B, n, d)`` or ``(n, d)``.

    ``key_mask`` is an optional boolean ``(B, n)`` array; False keys get a
    large negative logit. Rows whose keys are all masked fall back to
    unmasked attention.
    """
    if H.ndim == 2:
        km = None if key_mask is None else np.asarray(key_mask)[None, :]
        res = msa(tn.reshape(H, (1,) + H.shape), p, heads, attn_dropout, train, rng, km, return_attn)
        if return_attn:
            return tn.reshape(res[0], H.shape), res[1][0]
        return tn.reshape(res, H.shape)
    B, n, d = H.shape
    if d % heads:
        raise ValueError(f"hidden size {d} not divisible by {heads} heads")
    dk = d // heads
    Q, Kt, V = tn.matmul(H, p.wq), tn.matmul(H, p.wk), tn.matmul(H, p.wv)
    add_mask = None
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool).copy()
        km[~km.any(axis=1)] = True
        add_mask = np.where(km, 0.0, -1e9).astype(H.dtype)[:, None, :]
    outs, attn = [], []
    for h in range(heads):
        cols = np.arange(h * dk, (h + 1) * dk)
        q, k, v = tn.take(Q, cols, axis=2), tn.take(Kt, cols, axis=2), tn.take(V, cols, axis=2)
        logits = tn.scale(tn.matmul(q, tn.transpose(k)), 1.0 / np.sqrt(dk))
        A = tn.softmax(logits, mask=add_mask)
        attn.append(A.data)
        A = tn.dropout(A, attn_dropout, rng, train)
        outs.append(tn.matmul(A, v))
    out = tn.matmul(tn.concat(outs, axis=-1), p.wo)
    if return_attn:
        return out, np.stack(attn, axis=1)
    return out


def encoder_layer(H, p, cfg, train=False, rng=None, key_mask=None):
    """H~ = MSA(LN(H)) + H;  out = FFN(LN(H~)) + H~."""
    x = tn.layer_norm(H, p.ln1_gain, p.ln1_bias, cfg.ln_eps)
    a = msa(x, p, cfg.heads, cfg.attn_dropout, train, rng, key_mask)
    a = tn.dropout(a, cfg.dropout, rng, train)
    Ht = tn.add(a, H)
    y = tn.layer_norm(Ht, p.ln2_gain, p.ln2_bias, cfg.ln_eps)
    y = tn.gelu(tn.add(tn.matmul(y, p.w1), p.b1))
    y = tn.dropout(y, cfg.dropout, rng, train)
    y = tn.add(tn.matmul(y, p.w2), p.b2)
    y = tn.dropout(y, cfg.dropout, rng, train)
    return tn.add(y, Ht)


def encode(H, layers, cfg, train=False, rng=None, key_mask=None):
    if not layers:
        raise ValueError("encoder needs at least one layer")
    for p in layers:
        H = encoder_layer(H, p, cfg, train, rng, key_mask)
    return H
