"""Hierarchical type-level / ring-level transformer over (ring, type) tokens.

All forwards are batched: ``tokens`` is ``(B, K+1, T, d_in)`` and ``counts``
``(B, K+1, T)``, as stored in a :class:`~ringformer.rings.TokenCache`.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as tn
from .encoder import EncoderConfig, EncoderLayerParams, encode, init_encoder_layer
from .rings import hop_tokens, type_mixed_tokens
from .tensor import Tensor

VARIANTS = ("full", "no_ring", "no_type", "no_att")


@dataclass
class ModelConfig:
    K: int
    T: int
    d_in: int
    num_classes: int
    d: int = 128
    heads: int = 8
    L_t: int = 1
    L_r: int = 1
    dropout: float = 0.01
    attn_dropout: float = 0.05
    ff_mult: int = 2
    variant: str = "full"
    mask_empty: bool = False
    share_type_encoder: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.L_t < 1 or self.L_r < 1:
            raise ValueError("encoder stacks need at least one layer")

    @property
    def ring_slots(self):
        """Number of rings after the 0-ring the model actually sees."""
        return 1 if self.variant == "no_ring" else self.K

    @property
    def type_slots(self):
        return 1 if self.variant == "no_type" else self.T

    def encoder_config(self):
        return EncoderConfig(self.heads, self.dropout, self.attn_dropout)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


class ModelParams:
    """Named learnable tensors plus structured views into them."""

    def __init__(self, cfg, tensors):
        self.cfg = cfg
        self.tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def _layers(self, prefix, n):
        names = [f.name for f in fields(EncoderLayerParams)]
        return [
            EncoderLayerParams(**{k: self.tensors[f"{prefix}.{i}.{k}"] for k in names})
            for i in range(n)
        ]

    def type_layers(self, ring=None):
        if self.cfg.share_type_encoder or ring is None:
            return self._layers("type_enc", self.cfg.L_t)
        return self._layers(f"type_enc.r{ring}", self.cfg.L_t)

    def ring_layers(self):
        return self._layers("ring_enc", self.cfg.L_r)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grads(self):
        """Gradients by name; parameters the last pass did not reach get zeros."""
        return OrderedDict(
            (k, t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.tensors.items()
        )

    def arrays(self):
        return OrderedDict((k, t.data) for k, t in self.tensors.items())

    def copy(self):
        return ModelParams(
            self.cfg, ((k, Tensor(t.data.copy(), requires_grad=True)) for k, t in self.tensors.items())
        )

    def num_parameters(self):
        return int(sum(t.data.size for t in self.tensors.values()))

    def save(self, path, config_path=None):
        tn.save_tensors(path, self.arrays())
        if config_path:
            with open(config_path, "w") as fh:
                fh.write(self.cfg.to_json())

    @classmethod
    def load(cls, path, cfg):
        arrays = tn.load_tensors(path)
        ref = init_params(cfg)
        if list(arrays) != list(ref.tensors):
            raise ValueError("checkpoint parameter names do not match the model config")
        for k, a in arrays.items():
            if a.shape != ref[k].shape:
                raise ValueError(f"checkpoint tensor {k} has shape {a.shape}, expected {ref[k].shape}")
        return cls(cfg, ((k, Tensor(a, requires_grad=True)) for k, a in arrays.items()))


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_params(cfg, rng=None):
    """Uniform(+-1/sqrt(fan_in)) affine weights, unit LayerNorm gains."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dt = np.dtype(cfg.dtype)
    d, d_ff = cfg.d, cfg.d * cfg.ff_mult
    p = OrderedDict()
    p["input.weight"] = _uniform(rng, cfg.d_in, (cfg.d_in, d), dt)
    p["input.bias"] = _uniform(rng, cfg.d_in, (d,), dt)
    p["zero_ring.fc1.weight"] = _uniform(rng, d, (d, d), dt)
    p["zero_ring.fc1.bias"] = _uniform(rng, d, (d,), dt)
    p["zero_ring.fc2.weight"] = _uniform(rng, d, (d, d), dt)
    p["zero_ring.fc2.bias"] = _uniform(rng, d, (d,), dt)
    prefixes = (
        ["type_enc"] if cfg.share_type_encoder else [f"type_enc.r{r}" for r in range(cfg.ring_slots)]
    )
    for prefix in prefixes:
        for i in range(cfg.L_t):
            p.update(init_encoder_layer(rng, d, d_ff, dt).named(f"{prefix}.{i}"))
    for i in range(cfg.L_r):
        p.update(init_encoder_layer(rng, d, d_ff, dt).named(f"ring_enc.{i}"))
    p["readout.weight"] = _uniform(rng, 2 * d, (1, 2 * d), dt)
    p["head.weight"] = _uniform(rng, d, (d, cfg.num_classes), dt)
    p["head.bias"] = _uniform(rng, d, (cfg.num_classes,), dt)
    return ModelParams(cfg, p)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


@dataclass
class TypeLevelOutput:
    h0: Tensor  # (B, d)
    h_kt: Tensor  # (B*R, T', d) encoded type tokens of rings 1..R
    alpha: np.ndarray  # (B, R, T') readout weights
    h_k: Tensor  # (B, R, d)


@dataclass
class RingLevelOutput:
    Z: Tensor  # (B, R+1, d) encoded ring tokens z_0..z_R
    alpha: np.ndarray  # (B, R) readout weights over rings 1..R
    z: Tensor  # (B, d)


@dataclass
class ForwardOutput:
    z: Tensor
    logits: Tensor
    type_level: TypeLevelOutput
    ring_level: RingLevelOutput


def prepare_tokens(tokens, counts, cfg):
    """Reshape raw ring tokens into what ``cfg.variant`` consumes."""
    tokens = np.asarray(tokens)
    counts = np.asarray(counts)
    if tokens.ndim == 3:
        tokens, counts = tokens[None], counts[None]
    if tokens.shape[1:3] != (cfg.K + 1, cfg.T) or tokens.shape[3] != cfg.d_in:
        raise ValueError(
            f"token block {tokens.shape[1:]} does not match (K+1, T, d_in) = "
            f"({cfg.K + 1}, {cfg.T}, {cfg.d_in})"
        )
    if counts.shape != tokens.shape[:3]:
        raise ValueError("counts shape does not match tokens")
    if cfg.variant == "no_ring":
        tokens, counts = hop_tokens(tokens, counts)
    elif cfg.variant == "no_type":
        tokens, counts = type_mixed_tokens(tokens, counts)
    if np.isnan(tokens).any():
        raise ValueError("token block contains NaN")
    return tokens.astype(cfg.dtype), counts


def _affine(x, w, b):
    return tn.add(tn.matmul(x, w), b)


def type_level_forward(tokens, counts, params, cfg, train=False, rng=None):
    """Encode each ring's type tokens and read them out against the 0-ring.

    ``tokens``/``counts`` must already be variant-prepared.
    """
    B, R1, Tp, d_in = tokens.shape
    R, d = R1 - 1, cfg.d
    ecfg = cfg.encoder_config()
    # ring 0 holds only the target itself, in its own type slot
    x0 = Tensor(tokens[:, 0].sum(axis=1))
    h0 = _affine(x0, params["input.weight"], params["input.bias"])
    h0 = tn.gelu(_affine(h0, params["zero_ring.fc1.weight"], params["zero_ring.fc1.bias"]))
    h0 = _affine(h0, params["zero_ring.fc2.weight"], params["zero_ring.fc2.bias"])

    X = Tensor(np.ascontiguousarray(tokens[:, 1:]).reshape(B * R, Tp, d_in))
    P = _affine(X, params["input.weight"], params["input.bias"])
    mask = None
    if cfg.mask_empty:
        mask = (counts[:, 1:] > 0).reshape(B * R, Tp)
    if cfg.share_type_encoder:
        H = encode(P, params.type_layers(), ecfg, train, rng, mask)
    else:
        P4 = tn.reshape(P, (B, R, Tp, d))
        parts = []
        for r in range(R):
            Pr = tn.reshape(tn.take(P4, [r], axis=1), (B, Tp, d))
            mr = None if mask is None else mask.reshape(B, R, Tp)[:, r]
            Hr = encode(Pr, params.type_layers(r), ecfg, train, rng, mr)
            parts.append(tn.reshape(Hr, (B, 1, Tp, d)))
        H = tn.reshape(tn.concat(parts, axis=1), (B * R, Tp, d))

    if cfg.variant == "no_att":
        h_k = tn.reshape(tn.mean(H, axis=1), (B, R, d))
        alpha = np.full((B, R, Tp), 1.0 / Tp)
    else:
        h0r = tn.reshape(tn.take(h0, np.repeat(np.arange(B), R), axis=0), (B * R, d, 1))
        scores = tn.reshape(tn.matmul(H, h0r), (B * R, 1, Tp))
        smask = None
        if mask is not None:
            m = mask.copy()
            m[~m.any(axis=1)] = True
            smask = np.where(m, 0.0, -1e9).astype(scores.dtype)[:, None, :]
        A = tn.softmax(scores, mask=smask)
        h_k = tn.reshape(tn.matmul(A, H), (B, R, d))
        alpha = A.data.reshape(B, R, Tp)
    return TypeLevelOutput(h0=h0, h_kt=H, alpha=alpha, h_k=h_k)


def ring_level_forward(tl, params, cfg, train=False, rng=None):
    B, R, d = tl.h_k.shape
    seq = tn.concat([tn.reshape(tl.h0, (B, 1, d)), tl.h_k], axis=1)
    Z = encode(seq, params.ring_layers(), cfg.encoder_config(), train, rng)
    z0 = tn.reshape(tn.take(Z, [0], axis=1), (B, d))
    zk = tn.take(Z, np.arange(1, R + 1), axis=1)
    if cfg.variant == "no_att":
        agg = tn.mean(zk, axis=1)
        alpha = np.full((B, R), 1.0 / R)
    else:
        z0r = tn.take(tn.reshape(z0, (B, 1, d)), np.zeros(R, dtype=np.int64), axis=1)
        pair = tn.concat([z0r, zk], axis=-1)
        e = tn.reshape(tn.matmul(pair, tn.transpose(params["readout.weight"])), (B, 1, R))
        A = tn.softmax(e)
        agg = tn.reshape(tn.matmul(A, zk), (B, d))
        alpha = A.data.reshape(B, R)
    return RingLevelOutput(Z=Z, alpha=alpha, z=tn.add(z0, agg))


def forward(tokens, counts, params, cfg=None, train=False, rng=None):
    """Embeddings ``z`` (B, d) and class logits (B, C) for a batch of nodes."""
    cfg = params.cfg if cfg is None else cfg
    tok, cnt = prepare_tokens(tokens, counts, cfg)
    tl = type_level_forward(tok, cnt, params, cfg, train, rng)
    rl = ring_level_forward(tl, params, cfg, train, rng)
    logits = _affine(rl.z, params["head.weight"], params["head.bias"])
    return ForwardOutput(z=rl.z, logits=logits, type_level=tl, ring_level=rl)


def forward_variant(tokens, counts, params, variant):
    from dataclasses import replace

    return forward(tokens, counts, params, replace(params.cfg, variant=variant))


def embed(tokens, counts, params, batch_size=512):
    """Inference-mode embeddings for every row of ``tokens``."""
    out = []
    with tn.no_grad():
        for s in range(0, tokens.shape[0], batch_size):
            out.append(forward(tokens[s : s + batch_size], counts[s : s + batch_size], params).z.data)
    if not out:
        return np.zeros((0, params.cfg.d), dtype=params.cfg.dtype)
    return np.concatenate(out, axis=0)
