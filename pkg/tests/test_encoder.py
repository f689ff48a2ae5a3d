import numpy as np
import pytest

from _gradcheck import check_gradients
from _oracle import _encoder_layer
from ringformer.encoder import EncoderConfig, EncoderLayerParams, encode, encoder_layer, init_encoder_layer, msa
from ringformer.tensor import Tensor

CFG = EncoderConfig(heads=2, dropout=0.0, attn_dropout=0.0)


def _layer(seed=0, d=8, dtype=np.float64):
    return init_encoder_layer(np.random.default_rng(seed), d, 2 * d, dtype)


def test_single_token_attention_is_one():
    p = _layer()
    H = Tensor(np.random.default_rng(1).normal(size=(1, 8)))
    out, attn = msa(H, p, heads=2, return_attn=True)
    np.testing.assert_array_equal(attn, np.ones((2, 1, 1)))
    np.testing.assert_allclose(out.data, H.data @ p.wv.data @ p.wo.data, rtol=1e-12)


def test_identical_rows_stay_identical():
    p = _layer(3)
    H = Tensor(np.tile(np.random.default_rng(2).normal(size=8), (5, 1)))
    out = encoder_layer(H, p, CFG).data
    np.testing.assert_allclose(out, np.tile(out[0], (5, 1)), atol=1e-12)


def test_zero_weights_are_identity():
    p = _layer()
    for name, t in vars(p).items():
        t.data[...] = 0.0
    H = Tensor(np.random.default_rng(0).normal(size=(3, 4, 8)))
    np.testing.assert_array_equal(encoder_layer(H, p, CFG).data, H.data)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_shape_preserved(n):
    H = Tensor(np.random.default_rng(n).normal(size=(2, n, 8)))
    assert encode(H, [_layer(), _layer(1)], CFG).shape == (2, n, 8)


def test_stacking_changes_output():
    H = Tensor(np.random.default_rng(4).normal(size=(4, 8)))
    one = encode(H, [_layer(0)], CFG).data
    two = encode(H, [_layer(0), _layer(1)], CFG).data
    assert not np.allclose(one, two)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    p = _layer(seed)
    a = encoder_layer(Tensor(H), p, CFG).data
    b = encoder_layer(Tensor(H[perm]), p, CFG).data
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_matches_reference_layer(seed):
    p = _layer(seed)
    P = {f"L.{k}": v.data for k, v in vars(p).items()}
    H = np.random.default_rng(seed).normal(size=(5, 8))
    np.testing.assert_allclose(encoder_layer(Tensor(H), p, CFG).data, _encoder_layer(H, P, "L", 2), atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_layer_gradients(seed):
    rng = np.random.default_rng(seed)
    p = _layer(seed)
    names = list(vars(p))
    arrays = [rng.normal(size=(4, 8))] + [vars(p)[k].data for k in names]

    def fn(ts):
        lp = EncoderLayerParams(**dict(zip(names, ts[1:])))
        return encoder_layer(ts[0], lp, CFG)

    assert check_gradients(fn, arrays, rng) < 1e-5


def test_key_mask_ignores_masked_tokens():
    rng = np.random.default_rng(0)
    p = _layer()
    H = rng.normal(size=(1, 4, 8))
    mask = np.array([[True, True, False, False]])
    a = msa(Tensor(H), p, 2, key_mask=mask).data
    H2 = H.copy()
    H2[0, 2:] = rng.normal(size=(2, 8))
    b = msa(Tensor(H2), p, 2, key_mask=mask).data
    np.testing.assert_allclose(a[0, :2], b[0, :2], atol=1e-12)


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        msa(Tensor(np.ones((2, 8))), _layer(), heads=3)


def test_dropout_needs_rng_only_in_training():
    p = _layer()
    H = Tensor(np.ones((2, 3, 8)))
    cfg = EncoderConfig(heads=2, dropout=0.1, attn_dropout=0.1)
    encoder_layer(H, p, cfg, train=False)
    with pytest.raises(ValueError):
        encoder_layer(H, p, cfg, train=True, rng=None)
    a = encoder_layer(H, p, cfg, train=True, rng=np.random.default_rng(5)).data
    b = encoder_layer(H, p, cfg, train=True, rng=np.random.default_rng(5)).data
    np.testing.assert_array_equal(a, b)
