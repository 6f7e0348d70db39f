import numpy as np
import pytest

from conftest import naive_conv
from glyphforge import gradcheck
from glyphforge.errors import ConfigError, ShapeError, StateError
from glyphforge.layers import Conv2D, Dense, Dropout, MaxPool2D, ReLU, softmax
from glyphforge.model import ModelConfig, base_config, best_config, build_model


def fd_check(layer, x, rng, tol=1e-5):
    for r in gradcheck._check_layer("t", layer, x, rng):
        assert r.rel_error < tol, r


# ---------------------------------------------------------------- conv --


def test_conv_output_shape_matches_second_block():
    layer = Conv2D(32, 64, rng=np.random.default_rng(0))
    out = layer.forward(np.zeros((1, 111, 111, 32), dtype=np.float32))
    assert out.shape == (1, 109, 109, 64)


def test_conv_all_ones_kernel_sums_input(rng):
    layer = Conv2D(1, 1)
    layer.kernels[...] = 1.0
    x = rng.uniform(size=(1, 3, 3, 1)).astype(np.float32)
    out = layer.forward(x)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == pytest.approx(x.sum(), rel=1e-6)


def test_conv_matches_direct_loops(rng):
    layer = Conv2D(2, 3, rng=rng, dtype=np.float64)
    layer.bias[...] = rng.standard_normal(3)
    x = rng.standard_normal((2, 6, 6, 2))
    out = layer.forward(x)
    for i in range(2):
        np.testing.assert_allclose(out[i], naive_conv(x[i], layer.kernels, layer.bias), rtol=1e-12, atol=1e-12)


def test_conv_chunked_batches_match_single(rng, monkeypatch):
    layer = Conv2D(2, 4, rng=rng)
    x = rng.standard_normal((5, 9, 9, 2)).astype(np.float32)
    whole = layer.forward(x)
    monkeypatch.setattr("glyphforge.layers.IM2COL_BUDGET_BYTES", 1)
    assert layer.forward(x).tobytes() == whole.tobytes()


def test_conv_backward_zero_grad(rng):
    layer = Conv2D(2, 3, rng=rng)
    x = rng.standard_normal((1, 5, 5, 2)).astype(np.float32)
    out = layer.forward(x)
    gx = layer.backward(np.zeros_like(out))
    assert not gx.any() and not layer.grads[0].any() and not layer.grads[1].any()


def test_conv_single_pixel_grad_is_input_patch(rng):
    layer = Conv2D(2, 3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 6, 6, 2))
    out = layer.forward(x)
    g = np.zeros_like(out)
    g[0, 2, 1, 1] = 1.0
    layer.backward(g)
    np.testing.assert_array_equal(layer.grads[0][:, :, :, 1], x[0, 2:5, 1:4, :])
    assert not layer.grads[0][:, :, :, [0, 2]].any()


def test_conv_finite_differences(rng):
    layer = Conv2D(2, 3, rng=rng, dtype=np.float64)
    fd_check(layer, rng.standard_normal((2, 6, 5, 2)), rng)


def test_conv_errors():
    layer = Conv2D(1, 2)
    with pytest.raises(StateError):
        layer.backward(np.zeros((1, 1, 1, 2)))
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((1, 2, 5, 1)))
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((1, 5, 5, 3)))


# ---------------------------------------------------------------- pool --


def test_maxpool_basic():
    out = MaxPool2D().forward(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    assert out.reshape(-1).tolist() == [4.0]


@pytest.mark.parametrize("size,expected", [(109, 54), (24, 12), (5, 2)])
def test_maxpool_floor_shapes(size, expected):
    out = MaxPool2D().forward(np.zeros((1, size, size, 3), dtype=np.float32))
    assert out.shape == (1, expected, expected, 3)


def test_maxpool_backward_routes_to_argmax(rng):
    pool = MaxPool2D()
    x = rng.standard_normal((2, 7, 5, 3))
    out = pool.forward(x)
    g = rng.uniform(0.5, 1.0, size=out.shape)
    gx = pool.backward(g)
    # odd trailing row/column receive nothing
    assert not gx[:, 6, :, :].any() and not gx[:, :, 4, :].any()
    windows = gx[:, :6, :4, :].reshape(2, 3, 2, 2, 2, 3)
    nonzero = (windows != 0).sum(axis=(2, 4))
    assert nonzero.max() <= 1
    np.testing.assert_array_equal(windows.sum(axis=(2, 4)), g)
    # the routed cell holds the window maximum
    x_windows = x[:, :6, :4, :].reshape(2, 3, 2, 2, 2, 3)
    np.testing.assert_array_equal((x_windows * (windows != 0)).sum(axis=(2, 4)), out)


def test_maxpool_tie_goes_to_first_cell():
    pool = MaxPool2D()
    pool.forward(np.ones((1, 2, 2, 1)))
    gx = pool.backward(np.ones((1, 1, 1, 1)))
    assert gx[0, :, :, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_maxpool_finite_differences(rng):
    vals = rng.permutation(2 * 6 * 7 * 2).astype(np.float64).reshape(2, 6, 7, 2) * 0.01
    fd_check(MaxPool2D(), vals, rng)


def test_maxpool_too_small():
    with pytest.raises(ShapeError):
        MaxPool2D().forward(np.zeros((1, 1, 4, 1)))


# --------------------------------------------------------------- dense --


def test_dense_identity():
    layer = Dense(4, 4)
    layer.weights[...] = np.eye(4)
    x = np.arange(8, dtype=np.float32).reshape(2, 4)
    assert np.array_equal(layer.forward(x), x)


def test_dense_base_hidden_shape(rng):
    layer = Dense(9216, 64, rng=rng)
    assert layer.forward(rng.standard_normal((2, 9216)).astype(np.float32)).shape == (2, 64)


def test_dense_finite_differences(rng):
    layer = Dense(6, 4, rng=rng, dtype=np.float64)
    layer.bias[...] = rng.standard_normal(4)
    fd_check(layer, rng.standard_normal((3, 6)), rng)


def test_dense_length_mismatch():
    with pytest.raises(ShapeError):
        Dense(3, 2).forward(np.zeros((1, 4)))


# ---------------------------------------------------------------- relu --


def test_relu_examples():
    relu = ReLU()
    out = relu.forward(np.array([[-1.0, 0.0, 2.0]]))
    assert out.tolist() == [[0.0, 0.0, 2.0]]
    assert relu.backward(np.ones((1, 3))).tolist() == [[0.0, 0.0, 1.0]]
    neg = -np.ones((2, 3))
    assert not relu.forward(neg).any()
    assert not relu.backward(np.ones((2, 3))).any()


def test_relu_finite_differences(rng):
    x = rng.uniform(0.02, 1.0, (3, 8)) * rng.choice([-1.0, 1.0], (3, 8))
    fd_check(ReLU(), x, rng)


# ------------------------------------------------------------- softmax --


def test_softmax_uniform_and_stable():
    p = softmax(np.zeros(26, dtype=np.float32))
    np.testing.assert_allclose(p, 1 / 26, rtol=1e-6)
    p = softmax(np.array([1000.0, 0.0], dtype=np.float32))
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-30)


def test_softmax_matches_wide_precision(rng):
    z = (rng.standard_normal((50, 26)) * 5).astype(np.float32)
    p = softmax(z)
    z64 = z.astype(np.float64)
    ref = np.exp(z64) / np.exp(z64).sum(axis=1, keepdims=True)
    assert np.abs(p - ref).max() < 1e-6
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-6)
    assert (p > 0).all()


# ------------------------------------------------------------- dropout --


def test_dropout_identities(rng):
    x = rng.standard_normal((4, 10)).astype(np.float32)
    zero = Dropout(0.0)
    assert zero.forward(x, training=True).tobytes() == x.tobytes()
    assert zero.forward(x).tobytes() == x.tobytes()
    half = Dropout(0.5)
    assert half.forward(x, training=False).tobytes() == x.tobytes()


def test_dropout_expectation():
    layer = Dropout(0.5, rng=np.random.default_rng(7))
    out = layer.forward(np.ones((100_000, 8), dtype=np.float32), training=True)
    means = out.mean(axis=0)
    assert np.all((means >= 0.97) & (means <= 1.03))
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_backward_uses_mask(rng):
    layer = Dropout(0.3, rng=rng)
    out = layer.forward(np.ones((5, 6)), training=True)
    g = layer.backward(np.ones((5, 6)))
    np.testing.assert_array_equal(g, out)


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rate_validation(rate):
    with pytest.raises(ConfigError):
        Dropout(rate)


# --------------------------------------------------------------- stack --


def test_best_model_flatten_size():
    model = build_model(best_config())
    assert model.shape_after("flatten") == (3200,)
    assert model.output_shape == (26,)


def test_stack_gradient_check():
    for seed in range(3):
        for r in gradcheck.check_stack(np.random.default_rng(seed)):
            assert r.rel_error < 1e-4, r


def test_stack_backward_returns_declaration_order(rng):
    model = build_model(gradcheck.toy_config(), dtype=np.float64)
    x = rng.uniform(size=(2, 16, 16, 1))
    out = model.forward(x, training=True)
    grads = model.backward(np.ones_like(out))
    assert [g.shape for g in grads] == [p.shape for p in model.params]


def test_stack_rejects_wrong_input():
    model = build_model(gradcheck.toy_config())
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 15, 15, 1)))


def test_eval_forward_batch_invariant(rng):
    cfg = best_config(input_size=94)
    model = build_model(cfg)
    x = rng.uniform(size=(7, 94, 94, 1)).astype(np.float32)
    batch = model.logits(x)
    for i in range(7):
        assert model.logits(x[i]).tobytes() == batch[i].tobytes()
    assert model.logits(x).tobytes() == batch.tobytes()


def test_eval_forward_ignores_dropout(rng):
    model = build_model(best_config(input_size=94))
    x = rng.uniform(size=(3, 94, 94, 1)).astype(np.float32)
    assert model.forward(x).tobytes() == model.forward(x).tobytes()
    assert model.forward(x, training=True).tobytes() != model.forward(x).tobytes()


def test_incompatible_stack_is_config_error():
    with pytest.raises(ConfigError):
        build_model(ModelConfig(input_size=6, conv_filters=[4, 4], hidden_neurons=[]))
    assert base_config().conv_filters == [32, 64, 64, 64]
