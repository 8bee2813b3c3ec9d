import numpy as np
import pytest

from oracles import adam_scalar, conv2d_loops, numeric_gradient, relative_error, unet_gradient_errors
from soundseg.errors import FormatError
from soundseg.nn import (
    LossKind,
    UNetConfig,
    adam_init,
    adam_step,
    init_params,
    param_shapes,
    unet_forward,
)
from soundseg.nn.layers import (
    concat_channels,
    conv2d,
    conv2d_backward,
    conv2d_transpose,
    conv2d_transpose_backward,
    loss,
    mae,
    maxpool2d,
    maxpool2d_backward,
    mse,
    relu,
    relu_backward,
    split_channels,
)
from soundseg.nn.train import train
from soundseg.nn.weights import load_weights, save_weights, weights_from_bytes, weights_to_bytes

TINY = UNetConfig(depth=2, base_filters=2, input_shape=(16, 8, 1))


# -- layers -------------------------------------------------------------------


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 5, 6, 3))
    k = np.zeros((3, 3, 3, 3))
    k[1, 1] = np.eye(3)
    np.testing.assert_allclose(conv2d(x, k, np.zeros(3)), x, atol=1e-12)


def test_conv_ones_interior():
    x = np.ones((1, 5, 5, 1))
    out = conv2d(x, np.ones((3, 3, 1, 1)), np.zeros(1))
    assert out[0, 2, 2, 0] == 9.0
    assert out[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("stride,padding,pad", [(1, "same", 1), (2, "valid", 0), (1, "valid", 0)])
def test_conv_matches_loops(rng, stride, padding, pad):
    x = rng.standard_normal((2, 6, 8, 3))
    k = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(conv2d(x, k, b, stride, padding), conv2d_loops(x, k, b, stride, pad), atol=1e-10)


def test_conv_backward_matches_finite_differences(rng):
    x = rng.standard_normal((2, 4, 5, 2))
    k = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    w = rng.standard_normal((2, 4, 5, 3))
    dx, dk, db = conv2d_backward(w, x, k)

    def f():
        return float(np.sum(conv2d(x, k, b) * w))

    for analytic, array in ((dx, x), (dk, k), (db, b)):
        assert relative_error(analytic, numeric_gradient(f, array, 1e-6)) < 1e-8


def test_transpose_shape_and_backward(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    k = rng.standard_normal((2, 2, 3, 5))
    b = rng.standard_normal(3)
    out = conv2d_transpose(x, k, b)
    assert out.shape == (2, 6, 8, 3)
    w = rng.standard_normal(out.shape)
    dx, dk, db = conv2d_transpose_backward(w, x, k)

    def f():
        return float(np.sum(conv2d_transpose(x, k, b) * w))

    for analytic, array in ((dx, x), (dk, k), (db, b)):
        assert relative_error(analytic, numeric_gradient(f, array, 1e-6)) < 1e-8


def test_transpose_is_adjoint_of_strided_conv(rng):
    x = rng.standard_normal((1, 8, 6, 2))
    y = rng.standard_normal((1, 4, 3, 3))
    k = rng.standard_normal((2, 2, 2, 3))
    lhs = np.sum(conv2d(x, k, np.zeros(3), stride=2, padding="valid") * y)
    # the transpose kernel layout is (kh, kw, out, in): the same array
    rhs = np.sum(x * conv2d_transpose(y, k, np.zeros(2)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_maxpool_values_and_routing():
    x = np.array([[1.0, 2.0], [4.0, 3.0]]).reshape(1, 2, 2, 1)
    out, idx = maxpool2d(x)
    assert out.item() == 4.0
    g = maxpool2d_backward(np.ones((1, 1, 1, 1)), idx)
    np.testing.assert_array_equal(g[0, :, :, 0], [[0, 0], [1, 0]])


def test_maxpool_ties_go_to_first():
    out, idx = maxpool2d(np.ones((1, 2, 2, 1)))
    g = maxpool2d_backward(np.ones((1, 1, 1, 1)), idx)
    np.testing.assert_array_equal(g[0, :, :, 0], [[1, 0], [0, 0]])


def test_maxpool_gradient(rng):
    x = rng.standard_normal((2, 4, 6, 3))
    w = rng.standard_normal((2, 2, 3, 3))
    _, idx = maxpool2d(x)
    g = maxpool2d_backward(w, idx)

    def f():
        return float(np.sum(maxpool2d(x)[0] * w))

    assert relative_error(g, numeric_gradient(f, x, 1e-6)) < 1e-8


def test_relu_and_concat():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(x), [0, 0, 2])
    np.testing.assert_array_equal(relu_backward(np.ones(3), relu(x)), [0, 0, 1])
    a = np.ones((1, 2, 2, 3))
    b = np.zeros((1, 2, 2, 2))
    c = concat_channels(a, b)
    assert c.shape == (1, 2, 2, 5)
    ga, gb = split_channels(c, 3)
    np.testing.assert_array_equal(ga, a)
    np.testing.assert_array_equal(gb, b)
    with pytest.raises(ValueError):
        concat_channels(a, np.zeros((1, 3, 2, 2)))


def test_losses():
    pred = np.array([1.0, 2.0])
    target = np.array([0.0, 4.0])
    assert mae(pred, target)[0] == 1.5
    assert mse(pred, target)[0] == 2.5
    np.testing.assert_array_equal(mae(pred, target)[1], [0.5, -0.5])
    np.testing.assert_array_equal(mse(pred, target)[1], [1.0, -2.0])
    assert mae(pred, pred)[1].tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        loss("huber", pred, target)
    with pytest.raises(ValueError):
        mae(pred, target[:1])


# -- U-Net --------------------------------------------------------------------


def test_param_layout():
    shapes = param_shapes(UNetConfig())
    assert shapes["enc0_conv0_kernel"] == (3, 3, 1, 16)
    assert shapes["bottleneck_conv1_kernel"] == (3, 3, 256, 256)
    assert shapes["dec0_up_kernel"] == (2, 2, 16, 32)
    assert shapes["dec0_conv0_kernel"] == (3, 3, 32, 16)
    assert shapes["head_kernel"] == (1, 1, 16, 1)
    assert len(shapes) == 4 * 4 + 4 + 6 * 4 + 2


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        UNetConfig(depth=4, input_shape=(24, 8, 1))
    with pytest.raises(ValueError):
        UNetConfig(kernel_size=2)


def test_forward_shapes_and_zero_input():
    params = init_params(TINY, seed=0)
    out = unet_forward(TINY, params, np.zeros((3, 16, 8, 1), np.float32))
    assert out.shape == (3, 16, 8, 1)
    # zero biases and zero input give exactly zero
    assert np.all(out == 0)
    params["head_bias"][:] = 0.25
    assert np.all(unet_forward(TINY, params, np.zeros((1, 16, 8, 1), np.float32)) == 0.25)
    with pytest.raises(ValueError):
        unet_forward(TINY, params, np.zeros((1, 8, 8, 1)))


def test_full_size_forward_shape():
    config = UNetConfig(depth=4, base_filters=1)
    out = unet_forward(config, init_params(config), np.ones((1, 512, 128, 1), np.float32))
    assert out.shape == (1, 512, 128, 1)


def test_init_is_seeded():
    a, b, c = init_params(TINY, 3), init_params(TINY, 3), init_params(TINY, 4)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["enc0_conv0_kernel"], c["enc0_conv0_kernel"])
    assert all(np.all(a[k] == 0) for k in a if k.endswith("_bias"))


@pytest.mark.parametrize("kind", [LossKind.MSE, LossKind.MAE])
def test_unet_gradients(kind):
    errors = unet_gradient_errors(kind)
    worst = max(errors, key=errors.get)
    assert errors[worst] <= 1e-4, (worst, errors[worst])


# -- Adam ---------------------------------------------------------------------


def test_adam_first_step_closed_form():
    # with bias correction the first step moves each weight by lr * sign(g)
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([3.0, -0.01, 0.0])}
    new, state = adam_step(params, grads, adam_init(params, lr=0.1))
    np.testing.assert_allclose(new["w"], [0.9, -1.9, 0.5], atol=1e-7)
    assert state.step == 1
    assert params["w"][0] == 1.0


def test_adam_matches_scalar_oracle():
    path = adam_scalar(lambda x: 2 * x, 1.0, 100, lr=0.01)
    params = {"x": np.array(1.0)}
    state = adam_init(params, lr=0.01)
    for expected in path:
        params, state = adam_step(params, {"x": 2 * params["x"]}, state)
        assert float(params["x"]) == pytest.approx(expected, abs=1e-12)
    assert abs(float(params["x"])) < 0.5


def test_adam_rejects_mismatched_names():
    params = {"a": np.zeros(2)}
    with pytest.raises(ValueError):
        adam_step(params, {"b": np.zeros(2)}, adam_init(params))


# -- training -----------------------------------------------------------------


def _pairs(rng, n):
    mixes = rng.uniform(0, 1, (n, 16, 8)).astype(np.float32)
    mixes[:, 0] = 0
    return mixes, 0.5 * mixes


def test_train_reduces_loss_and_is_deterministic(rng):
    from soundseg.dataset import NormalizationSpec

    data = _pairs(rng, 8)
    spec = NormalizationSpec()
    p1, r1 = train(data, data, TINY, spec, LossKind.MSE, epochs=15, batch_size=4, seed=2, learning_rate=0.01)
    p2, r2 = train(data, data, TINY, spec, LossKind.MSE, epochs=15, batch_size=4, seed=2, learning_rate=0.01)
    assert r1.val_loss == r2.val_loss
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert min(r1.val_loss) < 0.5 * r1.val_loss[0]
    assert r1.val_loss[r1.selected_epoch] == min(r1.val_loss)
    assert r1.steps == 30


def test_train_rejects_empty(rng):
    from soundseg.dataset import NormalizationSpec

    data = _pairs(rng, 2)
    with pytest.raises(ValueError):
        train(data, (data[0][:0], data[1][:0]), TINY, NormalizationSpec(), LossKind.MAE)


# -- weights ------------------------------------------------------------------


def test_weights_round_trip(tmp_path):
    params = init_params(TINY, 1)
    save_weights(params, tmp_path / "w.sswt", TINY, {"loss": "mae"})
    loaded, config, experiment = load_weights(tmp_path / "w.sswt", TINY)
    assert config == TINY and experiment == {"loss": "mae"}
    assert list(loaded) == list(params)
    assert all(np.array_equal(loaded[k], params[k]) for k in params)


def test_weights_errors():
    params = init_params(TINY, 1)
    data = weights_to_bytes(params, TINY)
    other = UNetConfig(depth=1, base_filters=2, input_shape=(16, 8, 1))
    with pytest.raises(FormatError, match="config mismatch.*depth=2.*depth=1"):
        weights_from_bytes(data, other)
    with pytest.raises(FormatError, match="truncated.*dec0_conv1_bias|truncated.*head"):
        weights_from_bytes(data[:-6])
    with pytest.raises(FormatError, match="bad magic"):
        weights_from_bytes(b"JUNK" + data[4:])
    with pytest.raises(FormatError, match="trailing"):
        weights_from_bytes(data + b"\0")
    corrupt = bytearray(data)
    corrupt[-8] ^= 0xFF
    with pytest.raises(FormatError, match="head_bias: checksum"):
        weights_from_bytes(bytes(corrupt))


def test_weights_reject_wrong_layout():
    params = init_params(TINY, 1)
    del params["head_bias"]
    with pytest.raises(ValueError):
        weights_to_bytes(params, TINY)
