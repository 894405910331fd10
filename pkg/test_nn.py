"""
Tests for layer primitives, network specs and the architecture builders.
"""

import math

import numpy as np
import pytest

from ml.exceptions import ContractError, ShapeError
from ml.nn import (LayerSpec, Network, NetworkSpec, avgpool, build_discriminator, conv2d, conv2d_transpose,
                   conv_output_size, decoder_spec, dense, discriminator_spec, encoder_filter_counts, encoder_spec,
                   forward, init_params, upsample_nearest)
from ml.tensor import Tensor, grad_check, sq_l2


def _conv_loop(x, K, b, stride, padding):
    C, H, W = x.shape
    F, _, k, _ = K.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((F, Ho, Wo))
    for f in range(F):
        for i in range(Ho):
            for j in range(Wo):
                window = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[f, i, j] = np.sum(window * K[f]) + b[f]
    return out


def test_conv_output_size():
    assert conv_output_size(8, 3, 1, 1) == 8
    assert conv_output_size(5, 3, 2, 0) == 2
    with pytest.raises(ShapeError):
        conv_output_size(4, 3, 2, 0)
    with pytest.raises(ShapeError):
        conv_output_size(2, 5, 1, 0)


def test_conv2d_sums_windows():
    x = Tensor(np.ones((1, 3, 3)))
    K = Tensor(np.ones((1, 1, 3, 3)))
    b = Tensor(np.zeros(1))
    assert conv2d(x, K, b).data.tolist() == [[[9.0]]]
    padded = conv2d(x, K, b, padding=1).data[0]
    np.testing.assert_array_equal(padded, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_conv2d_matches_loop(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x = rng.normal(size=(2, 7, 7))
    K = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = conv2d(Tensor(x), Tensor(K), Tensor(b), stride, padding)
    np.testing.assert_allclose(out.data, _conv_loop(x, K, b, stride, padding), atol=1e-12)


def _adjoint_cases():
    cases = []
    for k in (1, 3, 5):
        for stride in (1, 2, 3):
            for padding in range(0, k // 2 + 1):
                for out_size in (1, 2, 3, 4):
                    size = (out_size - 1) * stride + k - 2 * padding
                    if size >= 1:
                        cases.append((k, stride, padding, size))
    return cases


@pytest.mark.parametrize("k,stride,padding,size", _adjoint_cases())
def test_conv_transpose_is_adjoint(k, stride, padding, size):
    rng = np.random.default_rng(k * 100 + stride * 10 + padding + size)
    x = Tensor(rng.normal(size=(2, size, size)))
    K = Tensor(rng.normal(size=(3, 2, k, k)))
    y = conv2d(x, K, Tensor(np.zeros(3)), stride, padding)
    v = Tensor(rng.normal(size=y.shape))
    xt = conv2d_transpose(v, K, Tensor(np.zeros(2)), stride, padding)
    assert xt.shape == x.shape
    lhs = float(np.sum(y.data * v.data))
    rhs = float(np.sum(x.data * xt.data))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_conv_transpose_output_padding():
    rng = np.random.default_rng(0)
    v = Tensor(rng.normal(size=(2, 2, 2)))
    K = Tensor(rng.normal(size=(2, 1, 3, 3)))
    out = conv2d_transpose(v, K, Tensor(np.zeros(1)), stride=2, padding=1, output_padding=1)
    assert out.shape == (1, 4, 4)
    with pytest.raises(ShapeError):
        conv2d_transpose(v, K, Tensor(np.zeros(1)), stride=2, padding=1, output_padding=2)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))


LAYER_SEEDS = range(25)


def test_adjoint_grid_is_wide():
    assert len(_adjoint_cases()) >= 50


@pytest.mark.parametrize("seed", LAYER_SEEDS)
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 5, 5)))
    K = Tensor(rng.normal(size=(2, 2, 3, 3)))
    b = Tensor(rng.normal(size=2))
    assert grad_check(lambda t: sq_l2(conv2d(t, K, b, 2, 1)), x) < 1e-5
    assert grad_check(lambda t: sq_l2(conv2d(x, t, b, 2, 1)), K) < 1e-5
    assert grad_check(lambda t: sq_l2(conv2d(x, K, t, 1, 1)), b) < 1e-5


@pytest.mark.parametrize("seed", LAYER_SEEDS)
def test_conv_transpose_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    v = Tensor(rng.normal(size=(2, 3, 3)))
    K = Tensor(rng.normal(size=(2, 2, 3, 3)))
    b = Tensor(rng.normal(size=2))
    assert grad_check(lambda t: sq_l2(conv2d_transpose(t, K, b, 2, 1, 1)), v) < 1e-5
    assert grad_check(lambda t: sq_l2(conv2d_transpose(v, t, b, 2, 1, 1)), K) < 1e-5
    assert grad_check(lambda t: sq_l2(conv2d_transpose(v, K, t, 2, 1, 1)), b) < 1e-5


def test_conv2d_unit_kernel_is_identity():
    x = Tensor(np.arange(9, dtype=float).reshape(1, 3, 3))
    out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_impulse_response_is_flipped_kernel():
    delta = np.zeros((1, 5, 5))
    delta[0, 2, 2] = 1.0
    K = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    out = conv2d(Tensor(delta), Tensor(K), Tensor(np.zeros(1)), padding=1).data[0]
    np.testing.assert_array_equal(out[1:4, 1:4], K[0, 0, ::-1, ::-1])
    assert np.count_nonzero(out) == np.count_nonzero(K)


def test_strided_transpose_inserts_zeros():
    ones = Tensor(np.ones((1, 2, 2)))
    out = conv2d_transpose(ones, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)), stride=2, output_padding=1)
    expected = np.zeros((1, 4, 4))
    expected[0, ::2, ::2] = 1.0
    np.testing.assert_array_equal(out.data, expected)


def test_pooling_and_upsampling():
    x = Tensor(np.arange(16, dtype=float).reshape(1, 4, 4))
    np.testing.assert_array_equal(avgpool(x, 2).data[0], [[2.5, 4.5], [10.5, 12.5]])
    up = upsample_nearest(Tensor([[[1.0, 2.0]]]), 2)
    np.testing.assert_array_equal(up.data[0], [[1, 1, 2, 2], [1, 1, 2, 2]])
    with pytest.raises(ShapeError):
        avgpool(Tensor(np.ones((1, 3, 3))), 2)


@pytest.mark.parametrize("factor", [2, 3])
def test_avgpool_undoes_upsampling(factor, rng):
    x = Tensor(rng.normal(size=(2, 3, 5)))
    np.testing.assert_allclose(avgpool(upsample_nearest(x, factor), factor).data, x.data, rtol=1e-14)


@pytest.mark.parametrize("seed", LAYER_SEEDS)
def test_pooling_gradients(seed):
    y = Tensor(np.random.default_rng(200 + seed).normal(size=(2, 4, 4)))
    assert grad_check(lambda t: sq_l2(avgpool(t, 2)), y) < 1e-5
    assert grad_check(lambda t: sq_l2(upsample_nearest(t, 2)), y) < 1e-5


def test_dense():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 4)))
    W = Tensor(rng.normal(size=(4, 2)))
    b = Tensor(rng.normal(size=2))
    np.testing.assert_allclose(dense(x, W, b).data, x.data @ W.data + b.data)
    with pytest.raises(ShapeError):
        dense(Tensor(np.ones(3)), W, b)


@pytest.mark.parametrize("seed", LAYER_SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(300 + seed)
    x = Tensor(rng.normal(size=(3, 4)))
    W = Tensor(rng.normal(size=(4, 2)))
    b = Tensor(rng.normal(size=2))
    assert grad_check(lambda t: sq_l2(dense(t, W, b)), x) < 1e-5
    assert grad_check(lambda t: sq_l2(dense(x, t, b)), W) < 1e-5
    assert grad_check(lambda t: sq_l2(dense(x, W, t)), b) < 1e-5


@pytest.mark.parametrize("d", range(1, 17))
def test_encoder_filter_rule(d):
    f = 16
    ge1 = encoder_spec("GE1", d, f, 128, (3, 256, 256))
    ge0 = encoder_spec("GE0", d, f, 128, (3, 256, 256))
    assert ge1.conv_filter_counts() == [n * f for n in range(1, d + 1)]
    assert ge0.conv_filter_counts() == [math.ceil(n / 3) * f for n in range(1, d + 1)]
    assert ge1.output_shape == (128,)


def test_encoder_filter_rule_rejects_unknown_variant():
    with pytest.raises(ContractError):
        encoder_filter_counts("GE2", 4, 8)


def test_encoder_rejects_unreachable_input():
    with pytest.raises(ShapeError):
        encoder_spec("GE1", 6, 4, 8, (1, 12, 12))


def test_generator_shapes_and_range(tiny_generator, rng):
    z = Tensor(rng.normal(size=(5, 3)))
    out = tiny_generator(z)
    assert out.shape == (5, 1, 8, 8)
    assert np.all(np.abs(out.data) <= 1.0)
    single = tiny_generator(Tensor(z.data[0]))
    np.testing.assert_allclose(single.data, out.data[0], atol=1e-12)


def test_forward_rejects_wrong_input(tiny_encoder):
    with pytest.raises(ShapeError):
        tiny_encoder(Tensor(np.zeros((1, 4, 4))))


def test_network_gradient(tiny_encoder, rng):
    x = Tensor(rng.uniform(-1, 1, size=(1, 8, 8)))
    assert grad_check(lambda t: sq_l2(forward(tiny_encoder, t)), x) < 1e-5


def test_init_params_spread_matches_uniform_moment():
    spec = encoder_spec("GE1", 2, 32, 4, (1, 8, 8))
    net = init_params(spec, 11)
    info = max((p for p in spec.params() if not p.is_bias), key=lambda p: int(np.prod(p.shape)))
    weights = net.params[info.name].data
    assert weights.size >= 10_000
    s = math.sqrt(6.0 / (info.fan_in + info.fan_out))
    assert abs(weights.std() - s / math.sqrt(3.0)) <= 0.2 * s / math.sqrt(3.0)


def test_default_decoder_is_no_deeper_than_encoder():
    enc = encoder_spec("GE1", 4, 8, 8, (1, 16, 16))
    dec = decoder_spec(8, 2, 16, (1, 16, 16))
    assert len(dec.layers) <= len(enc.layers)
    assert len(dec.conv_filter_counts()) <= len(enc.conv_filter_counts())
    assert max(dec.conv_filter_counts()) <= max(enc.conv_filter_counts())


def test_init_params_is_seeded():
    spec = encoder_spec("GE1", 2, 2, 4, (1, 8, 8))
    a, b, c = init_params(spec, 7), init_params(spec, 7), init_params(spec, 8)
    assert a.parameter_hash() == b.parameter_hash()
    assert a.parameter_hash() != c.parameter_hash()
    weight = a.params["layer0.weight"].data
    bound = math.sqrt(6.0 / (1 * 9 + 2 * 9))
    assert np.all(np.abs(weight) <= bound)
    assert np.all(a.params["layer0.bias"].data == 0.0)


def test_frozen_network_rejects_updates(tiny_encoder):
    name = "layer0.bias"
    with pytest.raises(ContractError):
        tiny_encoder.update({name: Tensor(np.ones(2))})


def test_network_rejects_mismatched_params():
    spec = encoder_spec("GE1", 1, 2, 4, (1, 4, 4))
    net = init_params(spec, 0)
    params = net.params
    params["layer0.bias"] = Tensor(np.zeros(3))
    with pytest.raises(ShapeError):
        Network(spec, params)


def test_discriminator_splits_into_encoder_and_decoder(tiny_discriminator, rng):
    spec = tiny_discriminator.spec
    half = spec.encoder_layers
    encoder = tiny_discriminator.sub_network(0, half, "GE0")
    decoder = tiny_discriminator.sub_network(half, len(spec.layers), "decoder")
    x = Tensor(rng.uniform(-1, 1, size=(3, 1, 8, 8)))
    assert encoder.spec.output_shape == (4,)
    np.testing.assert_array_equal(decoder(encoder(x)).data, tiny_discriminator(x).data)


def test_spec_serialization_preserves_layers():
    spec = discriminator_spec((1, 8, 8), 2, 2, 4, 2, 2)
    restored = NetworkSpec.from_dict(spec.to_dict())
    assert restored == spec
    assert restored.encoder_layers == spec.encoder_layers


def test_layer_spec_validation():
    with pytest.raises(ContractError):
        LayerSpec("conv", kernel=2, filters=4)
    with pytest.raises(ContractError):
        LayerSpec("pool")
    with pytest.raises(ContractError):
        LayerSpec("dense", in_features=3)


def test_build_discriminator_is_trainable():
    net = build_discriminator((1, 8, 8), 2, 2, 4, 2, 2, seed=0)
    assert not net.frozen
    assert net.freeze() is net
    assert net.frozen
