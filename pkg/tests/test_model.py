from dataclasses import replace

import numpy as np
import pytest

from _gradcheck import rel_error
from _oracle import reference_forward
from conftest import random_typed_graph
from ringformer import tensor as tn
from ringformer.model import ModelConfig, ModelParams, embed, forward, forward_variant, init_params
from ringformer.rings import build_cache


def _cfg(**kw):
    base = dict(K=2, T=3, d_in=5, num_classes=3, d=8, heads=2, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def _tokens(cfg, B=4, seed=0, fill=1.0):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 3, size=(B, cfg.K + 1, cfg.T))
    counts[:, 0] = 0
    counts[:, 0, 0] = 1
    tokens = rng.normal(size=(B, cfg.K + 1, cfg.T, cfg.d_in)) * fill
    tokens[counts == 0] = 0.0
    return tokens, counts


def _run(cfg, tokens, counts, params=None):
    params = params or init_params(cfg)
    with tn.no_grad():
        return forward(tokens, counts, params)


def test_output_shapes():
    cfg = _cfg()
    out = _run(cfg, *_tokens(cfg, B=5))
    assert out.z.shape == (5, 8) and out.logits.shape == (5, 3)
    assert out.type_level.alpha.shape == (5, 2, 3)
    assert out.ring_level.alpha.shape == (5, 2)


def test_single_type_weights_are_one():
    cfg = _cfg(T=1)
    out = _run(cfg, *_tokens(cfg))
    np.testing.assert_array_equal(out.type_level.alpha, 1.0)
    B, R, d = out.type_level.h_k.shape
    np.testing.assert_allclose(out.type_level.h_k.data, out.type_level.h_kt.data.reshape(B, R, d))


def test_identical_type_tokens_give_uniform_weights():
    cfg = _cfg()
    tokens, counts = _tokens(cfg)
    tokens[:, 1:] = tokens[:, 1:, :1]
    out = _run(cfg, tokens, counts)
    np.testing.assert_allclose(out.type_level.alpha, 1 / 3, atol=1e-12)


def test_single_ring_weight_is_one():
    cfg = _cfg(K=1)
    out = _run(cfg, *_tokens(cfg))
    np.testing.assert_array_equal(out.ring_level.alpha, 1.0)
    Z = out.ring_level.Z.data
    np.testing.assert_allclose(out.z.data, Z[:, 0] + Z[:, 1], atol=1e-12)


def test_zero_readout_weight_gives_uniform_ring_weights():
    cfg = _cfg(K=4)
    params = init_params(cfg)
    params["readout.weight"].data[...] = 0.0
    out = _run(cfg, *_tokens(cfg), params=params)
    np.testing.assert_allclose(out.ring_level.alpha, 0.25)
    Z = out.ring_level.Z.data
    np.testing.assert_allclose(out.z.data, Z[:, 0] + Z[:, 1:].mean(axis=1), atol=1e-12)


def test_identical_inputs_identical_outputs():
    cfg = _cfg()
    tokens, counts = _tokens(cfg, B=1)
    out = _run(cfg, np.repeat(tokens, 3, 0), np.repeat(counts, 3, 0))
    assert (out.z.data == out.z.data[0]).all() and (out.logits.data == out.logits.data[0]).all()


def test_isolated_node_is_finite():
    cfg = _cfg(dtype="float32")
    tokens = np.zeros((1, 3, 3, 5), dtype=np.float32)
    counts = np.zeros((1, 3, 3), dtype=np.int64)
    tokens[0, 0, 1] = 1.0
    counts[0, 0, 1] = 1
    for mask_empty in (False, True):
        out = _run(replace(cfg, mask_empty=mask_empty), tokens, counts)
        assert np.isfinite(out.z.data).all() and np.isfinite(out.logits.data).all()


def test_type_axis_permutation_invariance():
    cfg = _cfg(T=4)
    tokens, counts = _tokens(cfg)
    params = init_params(cfg)
    perm = np.array([2, 0, 3, 1])
    a = _run(cfg, tokens, counts, params)
    b = _run(cfg, tokens[:, :, perm], counts[:, :, perm], params)
    np.testing.assert_allclose(a.z.data, b.z.data, atol=1e-12)
    np.testing.assert_allclose(a.type_level.alpha[..., perm], b.type_level.alpha, atol=1e-12)


@pytest.mark.parametrize("L", [(1, 1), (2, 1), (1, 2), (2, 3)])
def test_matches_reference_with_stacked_layers(L):
    cfg = _cfg(L_t=L[0], L_r=L[1], K=3)
    tokens, counts = _tokens(cfg, seed=sum(L))
    params = init_params(cfg)
    P = {k: v.data for k, v in params.items()}
    out = _run(cfg, tokens, counts, params)
    for i in range(tokens.shape[0]):
        z, ta, ra = reference_forward(tokens[i], P, cfg.heads, *L)
        np.testing.assert_allclose(out.z.data[i], z, atol=1e-10)
        np.testing.assert_allclose(out.type_level.alpha[i], ta, atol=1e-12)
        np.testing.assert_allclose(out.ring_level.alpha[i], ra, atol=1e-12)


def test_no_type_with_one_type_equals_full():
    cfg = _cfg(T=1)
    tokens, counts = _tokens(cfg)
    params = init_params(cfg)
    with tn.no_grad():
        a = forward(tokens, counts, params).z.data
        b = forward_variant(tokens, counts, params, "no_type").z.data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_no_att_with_one_ring_one_type_equals_full():
    cfg = _cfg(K=1, T=1)
    tokens, counts = _tokens(cfg)
    params = init_params(cfg)
    with tn.no_grad():
        a = forward(tokens, counts, params).z.data
        b = forward_variant(tokens, counts, params, "no_att").z.data
    np.testing.assert_array_equal(a, b)


def test_no_ring_differs_when_rings_disagree():
    cfg = _cfg(K=2)
    tokens, counts = _tokens(cfg)
    tokens[:, 2] = -tokens[:, 1]
    counts[:, 2] = counts[:, 1]
    params = init_params(cfg)
    with tn.no_grad():
        a = forward(tokens, counts, params).z.data
        b = forward_variant(tokens, counts, params, "no_ring").z.data
    assert not np.allclose(a, b)


def test_no_att_readout_weight_gets_zero_gradient():
    cfg = _cfg(variant="no_att")
    tokens, counts = _tokens(cfg)
    params = init_params(cfg)
    loss = tn.cross_entropy_with_logits(forward(tokens, counts, params).logits, [0, 1, 2, 0])
    loss.backward()
    grads = params.grads()
    assert not grads["readout.weight"].any()
    assert grads["head.weight"].any()


@pytest.mark.parametrize("kw", [dict(share_type_encoder=False), dict(mask_empty=True),
                                dict(variant="no_ring"), dict(variant="no_type")])
def test_gradient_check_options(kw):
    cfg = _cfg(K=2, d=4, heads=2, **kw)
    tokens, counts = _tokens(cfg, B=3, seed=4)
    tokens = tokens.astype(np.float32).astype(np.float64)
    labels = [0, 2, 1]
    params = init_params(cfg)
    params.zero_grad()
    tn.cross_entropy_with_logits(forward(tokens, counts, params).logits, labels).backward()
    analytic = params.grads()

    def value():
        with tn.no_grad():
            return tn.cross_entropy_with_logits(forward(tokens, counts, params).logits, labels).item()

    for name, t in params.items():
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + 1e-6
            up = value()
            flat[i] = old - 1e-6
            down = value()
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / 2e-6
        assert rel_error(analytic[name], num) < 1e-4, name


def test_mask_empty_zeroes_empty_type_weights():
    cfg = _cfg(mask_empty=True)
    tokens, counts = _tokens(cfg)
    counts[:, 1:, 0] = np.maximum(counts[:, 1:, 0], 1)
    out = _run(cfg, tokens, counts)
    empty = counts[:, 1:] == 0
    assert (out.type_level.alpha[empty] < 1e-12).all()


def test_per_ring_type_encoders_have_own_parameters():
    cfg = _cfg(share_type_encoder=False, K=3)
    params = init_params(cfg)
    assert sum(1 for k in params.tensors if k.startswith("type_enc.r")) == 3 * 12


def test_checkpoint_roundtrip(tmp_path):
    cfg = _cfg(dtype="float32")
    params = init_params(cfg)
    params.save(tmp_path / "m.rft", tmp_path / "m.json")
    back = ModelParams.load(tmp_path / "m.rft", cfg)
    for k, v in params.items():
        np.testing.assert_array_equal(back[k].data, v.data)
    with pytest.raises(ValueError):
        ModelParams.load(tmp_path / "m.rft", replace(cfg, d=16, heads=2))


@pytest.mark.parametrize("kw", [dict(d=10, heads=4), dict(K=0), dict(variant="bogus"), dict(L_t=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)


def test_embed_batches_match_single_forward():
    g = random_typed_graph(np.random.default_rng(0), 40, 3, p=0.1)
    cache = build_cache(g, 2, nodes="all")
    cfg = ModelConfig(K=2, T=3, d_in=5, num_classes=2, d=8, heads=2)
    params = init_params(cfg)
    Z = embed(cache.tokens, cache.counts, params, batch_size=7)
    with tn.no_grad():
        ref = forward(cache.tokens, cache.counts, params).z.data
    np.testing.assert_allclose(Z, ref, rtol=1e-5, atol=1e-6)
