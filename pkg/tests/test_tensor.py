import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src import tensor as T
from src.errors import ConfigError, ContextError, ShapeError
from src.gradcheck import numeric_grad, rel_error


def test_as_tensor_checks_shape():
    t = T.as_tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
    assert t.dtype == np.float64
    assert t.shape == (2, 3)
    assert t[1, 0] == 4.0
    with pytest.raises(ShapeError):
        T.as_tensor([1, 2, 3], shape=(2, 2))
    with pytest.raises(ShapeError):
        T.as_tensor([], shape=(0,))


# --- conv2d


def test_conv2d_hand_computed():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    K = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    out, _ = T.conv2d(x, K, np.zeros(1))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 5.0


def test_conv2d_zero_kernel_gives_bias(rng):
    x = rng.normal(size=(3, 7, 9))
    out, _ = T.conv2d(x, np.zeros((2, 3, 3, 3)), np.array([0.25, -1.5]))
    assert out.shape == (2, 5, 7)
    assert np.all(out[0] == 0.25)
    assert np.all(out[1] == -1.5)


def test_conv2d_gradients_match_finite_differences(rng):
    x = rng.normal(size=(2, 6, 6))
    K = rng.normal(size=(3, 2, 5, 5))
    b = rng.normal(size=3)
    up = rng.normal(size=(3, 2, 2))
    _, ctx = T.conv2d(x, K, b)
    dx, dK, db = T.conv2d_backward(ctx, up)

    def f():
        return float(np.sum(T.conv2d(x, K, b)[0] * up))

    assert rel_error(dx, numeric_grad(f, x)) < 1e-6
    assert rel_error(dK, numeric_grad(f, K)) < 1e-6
    assert rel_error(db, numeric_grad(f, b)) < 1e-6


def test_conv2d_is_linear_in_input_and_kernels(rng):
    x, y = rng.normal(size=(2, 9, 9)), rng.normal(size=(2, 9, 9))
    K, L = rng.normal(size=(3, 2, 5, 5)), rng.normal(size=(3, 2, 5, 5))
    zero = np.zeros(3)
    a, b = 1.7, -0.4

    def conv(inp, ker):
        return T.conv2d(inp, ker, zero)[0]

    assert_allclose(conv(a * x + b * y, K), a * conv(x, K) + b * conv(y, K), rtol=0, atol=1e-12)
    assert_allclose(conv(x, a * K + b * L), a * conv(x, K) + b * conv(x, L), rtol=0, atol=1e-12)


def test_conv2d_shape_errors_name_the_dimension(rng):
    with pytest.raises(ShapeError, match="channels"):
        T.conv2d(rng.normal(size=(2, 6, 6)), rng.normal(size=(1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError, match="height"):
        T.conv2d(rng.normal(size=(1, 2, 6)), rng.normal(size=(1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError, match="bias"):
        T.conv2d(rng.normal(size=(1, 6, 6)), rng.normal(size=(2, 1, 3, 3)), np.zeros(3))


# --- pooling


def test_maxpool2_single_block():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    out, ctx = T.maxpool2(x)
    assert_array_equal(out, [[[4.0]]])
    assert_array_equal(T.maxpool2_backward(ctx, np.array([[[1.0]]])), [[[0.0, 0.0], [0.0, 1.0]]])


def test_maxpool2_tie_routes_to_first_position():
    x = np.full((1, 4, 4), 3.0)
    out, ctx = T.maxpool2(x)
    assert_array_equal(out, np.full((1, 2, 2), 3.0))
    g = T.maxpool2_backward(ctx, np.ones((1, 2, 2)))
    expected = np.zeros((1, 4, 4))
    expected[0, ::2, ::2] = 1.0
    assert_array_equal(g, expected)


def test_maxpool2_matches_brute_force_and_finite_differences(rng):
    # a permutation keeps every value distinct, so no argmax flips under +-eps
    x = rng.permutation(64).reshape(1, 8, 8).astype(np.float64) * 0.1
    out, ctx = T.maxpool2(x)
    brute = x.reshape(1, 4, 2, 4, 2).max(axis=(2, 4))
    assert_array_equal(out, brute)
    up = rng.normal(size=(1, 4, 4))
    num = numeric_grad(lambda: float(np.sum(T.maxpool2(x)[0] * up)), x)
    assert rel_error(T.maxpool2_backward(ctx, up), num) < 1e-6


def test_maxpool2_rejects_odd_extents(rng):
    with pytest.raises(ShapeError):
        T.maxpool2(rng.normal(size=(1, 5, 4)))


def test_quadrant_pool_hand_computed():
    x = np.arange(1.0, 17.0).reshape(1, 4, 4)
    out, _ = T.quadrant_pool(x)
    assert_array_equal(out, [[[6.0, 8.0], [14.0, 16.0]]])


def test_quadrant_pool_constant():
    out, _ = T.quadrant_pool(np.full((2, 3, 5), -0.5))
    assert_array_equal(out, np.full((2, 2, 2), -0.5))


def test_quadrant_pool_odd_extents_brute_force(rng):
    x = rng.normal(size=(4, 17, 17))
    out, ctx = T.quadrant_pool(x)
    brute = np.empty((4, 2, 2))
    for c in range(4):
        brute[c, 0, 0] = x[c, :8, :8].max()
        brute[c, 0, 1] = x[c, :8, 8:].max()
        brute[c, 1, 0] = x[c, 8:, :8].max()
        brute[c, 1, 1] = x[c, 8:, 8:].max()
    assert_array_equal(out, brute)
    g = T.quadrant_pool_backward(ctx, np.ones((4, 2, 2)))
    assert g.sum() == 16.0
    assert_array_equal(np.sort(x[g == 1.0]), np.sort(out.reshape(-1)))


def test_quadrant_pool_rejects_tiny_input():
    with pytest.raises(ShapeError):
        T.quadrant_pool(np.zeros((1, 1, 4)))


# --- activation / linear / dropout / mse


def test_relu_and_tanh_values():
    out, _ = T.activation(np.array([-1.0, 0.0, 2.0]), "relu")
    assert_array_equal(out, [0.0, 0.0, 2.0])
    out, ctx = T.activation(np.array([0.0]), "tanh")
    assert_array_equal(out, [0.0])
    assert_array_equal(T.activation_backward(ctx, np.array([1.0])), [1.0])


@pytest.mark.parametrize("kind", ["relu", "tanh"])
def test_activation_gradients(rng, kind):
    x = rng.uniform(1e-3, 2.0, size=20) * rng.choice([-1.0, 1.0], size=20)
    up = rng.normal(size=20)
    _, ctx = T.activation(x, kind)
    num = numeric_grad(lambda: float(np.sum(T.activation(x, kind)[0] * up)), x)
    assert rel_error(T.activation_backward(ctx, up), num) < 1e-7


def test_unknown_activation_kind():
    with pytest.raises(ConfigError):
        T.activation(np.zeros(2), "sigmoid")


def test_linear_hand_computed():
    out, _ = T.linear(np.array([3.0, 7.0]), np.eye(2), np.zeros(2))
    assert_array_equal(out, [3.0, 7.0])
    out, _ = T.linear(np.array([3.0, 4.0]), np.array([[1.0, 2.0]]), np.array([1.0]))
    assert_array_equal(out, [12.0])


def test_linear_gradients(rng):
    x = rng.normal(size=5)
    W = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    up = rng.normal(size=3)
    _, ctx = T.linear(x, W, b)
    dx, dW, db = T.linear_backward(ctx, up)

    def f():
        return float(np.sum(T.linear(x, W, b)[0] * up))

    assert rel_error(dx, numeric_grad(f, x)) < 1e-8
    assert rel_error(dW, numeric_grad(f, W)) < 1e-8
    assert rel_error(db, numeric_grad(f, b)) < 1e-8


def test_linear_batch_rows_match_single_calls(rng):
    X = rng.normal(size=(4, 5))
    W = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    batch, _ = T.linear(X, W, b)
    for i in range(4):
        assert_allclose(batch[i], T.linear(X[i], W, b)[0], rtol=0, atol=1e-12)
    with pytest.raises(ShapeError):
        T.linear(rng.normal(size=4), W, b)


def test_dropout_eval_and_zero_p_are_identity(rng):
    x = rng.normal(size=50)
    out, ctx = T.dropout(x, 0.5, "eval", rng)
    assert_array_equal(out, x)
    out, _ = T.dropout(x, 0.0, "train", rng)
    assert_array_equal(out, x)


def test_dropout_inverted_scaling():
    x = np.ones(10_000)
    out, ctx = T.dropout(x, 0.5, "train", np.random.default_rng(42))
    assert 0.97 <= out.mean() <= 1.03
    assert set(np.unique(out)) <= {0.0, 2.0}
    up = np.ones(10_000)
    assert_array_equal(T.dropout_backward(ctx, up), out)


def test_dropout_rejects_bad_probability(rng):
    with pytest.raises(ConfigError):
        T.dropout(np.ones(3), 1.0, "train", rng)
    with pytest.raises(ConfigError):
        T.dropout(np.ones(3), -0.1, "train", rng)


def test_mse_loss_values():
    loss, ctx = T.mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0]))
    assert loss == 5.0
    assert_array_equal(T.mse_loss_backward(ctx), [-1.0, -3.0])
    loss, ctx = T.mse_loss(np.array([0.3, -0.2]), np.array([0.3, -0.2]))
    assert loss == 0.0
    assert_array_equal(T.mse_loss_backward(ctx), [0.0, 0.0])


def test_mse_loss_gradient(rng):
    pred, target = rng.normal(size=9), rng.normal(size=9)
    _, ctx = T.mse_loss(pred, target)
    num = numeric_grad(lambda: T.mse_loss(pred, target)[0], pred)
    assert rel_error(T.mse_loss_backward(ctx), num) < 1e-9


def test_mse_loss_errors():
    with pytest.raises(ShapeError):
        T.mse_loss(np.zeros(2), np.zeros(3))
    with pytest.raises(ShapeError):
        T.mse_loss(np.zeros(0), np.zeros(0))


def test_backward_rejects_foreign_context():
    _, ctx = T.maxpool2(np.zeros((1, 2, 2)))
    with pytest.raises(ContextError):
        T.conv2d_backward(ctx, np.zeros((1, 1, 1)))
    with pytest.raises(ContextError):
        T.maxpool2_backward(ctx, np.zeros((1, 2, 2)))
