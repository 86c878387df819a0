import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sno import kernels
from sno.errors import ConfigError, DimensionError, EmptyBatchError
from sno.kernels import LayerCache

from helpers import central_diff


def naive_matmul_affine(W, b, X):
    n, k = X.shape
    out = W.shape[0]
    Y = np.zeros((n, out))
    for i in range(n):
        for j in range(out):
            s = 0.0
            for t in range(k):
                s += X[i, t] * W[j, t]
            Y[i, j] = s + b[j]
    return Y


def rel_err(a, b, floor=1e-8):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


# --------------------------------------------------------------------------
# affine


def test_affine_identity_and_scalar():
    Y, cache = kernels.affine_forward([[1, 0], [0, 1]], [0, 0], [[3, 4]])
    assert np.array_equal(Y, [[3.0, 4.0]])
    assert np.array_equal(cache.input, [[3.0, 4.0]])
    Y, _ = kernels.affine_forward([[2]], [1], [[3]])
    assert Y[0, 0] == 7.0


def test_affine_matches_triple_loop():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    X = rng.normal(size=(4, 5))
    Y, _ = kernels.affine_forward(W, b, X)
    assert np.max(np.abs(Y - naive_matmul_affine(W, b, X))) < 1e-12


def test_affine_shape_errors_name_operands():
    with pytest.raises(DimensionError, match="X has 3 columns"):
        kernels.affine_forward(np.ones((2, 4)), np.zeros(2), np.ones((5, 3)))
    with pytest.raises(DimensionError, match="b has shape"):
        kernels.affine_forward(np.ones((2, 4)), np.zeros(3), np.ones((5, 4)))
    _, cache = kernels.affine_forward(np.ones((2, 4)), np.zeros(2), np.ones((5, 4)))
    with pytest.raises(DimensionError, match="dY"):
        kernels.affine_backward(np.ones((5, 3)), np.ones((2, 4)), cache)


def test_affine_backward_scalar_chain_rule():
    W = np.array([[2.0]])
    _, cache = kernels.affine_forward(W, [0.0], [[3.0]])
    dX, dW, db = kernels.affine_backward([[1.0]], W, cache)
    assert dX[0, 0] == 2.0 and dW[0, 0] == 3.0 and db[0] == 1.0


def test_affine_backward_zero_upstream():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(3, 4))
    _, cache = kernels.affine_forward(W, np.zeros(3), rng.normal(size=(6, 4)))
    for g in kernels.affine_backward(np.zeros((6, 3)), W, cache):
        assert not g.any()


def test_affine_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    W = rng.uniform(-2, 2, (3, 5))
    b = rng.uniform(-2, 2, 3)
    X = rng.uniform(-2, 2, (4, 5))
    R = rng.normal(size=(4, 3))  # scalar objective sum(R * Y)

    def f_X(Xv):
        return np.sum(R * kernels.affine_forward(W, b, Xv)[0])

    def f_W(Wv):
        return np.sum(R * kernels.affine_forward(Wv, b, X)[0])

    def f_b(bv):
        return np.sum(R * kernels.affine_forward(W, bv, X)[0])

    _, cache = kernels.affine_forward(W, b, X)
    dX, dW, db = kernels.affine_backward(R, W, cache)
    assert rel_err(dX, central_diff(f_X, X)) < 1e-6
    assert rel_err(dW, central_diff(f_W, W)) < 1e-6
    assert rel_err(db, central_diff(f_b, b)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_linearity(seed, a, c):
    # zero bias: f(a X1 + c X2) = a f(X1) + c f(X2)
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(3, 4))
    X1, X2 = rng.normal(size=(2, 5, 4))
    zero = np.zeros(3)
    lhs = kernels.affine_forward(W, zero, a * X1 + c * X2)[0]
    rhs = a * kernels.affine_forward(W, zero, X1)[0] + c * kernels.affine_forward(W, zero, X2)[0]
    assert np.allclose(lhs, rhs, atol=1e-10)


# --------------------------------------------------------------------------
# activations


def test_leaky_relu_values_and_derivative():
    Y, _ = kernels.leaky_relu([[-1.0]], 0.2)
    assert Y[0, 0] == pytest.approx(-0.2, abs=0)
    Y, _ = kernels.leaky_relu([[5.0]], 0.2)
    assert Y[0, 0] == 5.0
    _, cache = kernels.leaky_relu([[-3.0, 3.0]], 0.2)
    d = kernels.leaky_relu_backward(np.ones((1, 2)), cache, 0.2)
    assert d.tolist() == [[0.2, 1.0]]


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(ConfigError):
        kernels.leaky_relu([[1.0]], 1.0)


def test_tanh_values():
    assert kernels.tanh_layer([[0.0]])[0][0, 0] == 0.0
    assert abs(kernels.tanh_layer([[1e3]])[0][0, 0] - 1.0) < 1e-12


@pytest.mark.parametrize("layer", ["leaky", "tanh"])
def test_activation_backward_matches_finite_differences(layer):
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, (6, 7))
    R = rng.normal(size=X.shape)
    if layer == "leaky":
        fwd = lambda Z: kernels.leaky_relu(Z, 0.2)  # noqa: E731
        bwd = lambda dY, c: kernels.leaky_relu_backward(dY, c, 0.2)  # noqa: E731
    else:
        fwd, bwd = kernels.tanh_layer, kernels.tanh_backward
    _, cache = fwd(X)
    analytic = bwd(R, cache)
    numeric = central_diff(lambda Z: np.sum(R * fwd(Z)[0]), X)
    assert rel_err(analytic, numeric) < 1e-5


# --------------------------------------------------------------------------
# dropout


def test_dropout_eval_is_bit_identical():
    X = np.random.default_rng(0).normal(size=(8, 9))
    Y, cache = kernels.dropout(X, 0.3, "eval", np.random.default_rng(1))
    assert np.array_equal(Y, X) and cache.mask is None


def test_dropout_rate_zero_passthrough():
    X = np.random.default_rng(0).normal(size=(4, 4))
    Y, _ = kernels.dropout(X, 0.0, "train", np.random.default_rng(1))
    assert np.array_equal(Y, X)


def test_dropout_rejects_rate_one():
    with pytest.raises(ConfigError):
        kernels.dropout(np.ones((1, 1)), 1.0, "train", np.random.default_rng(0))


def test_dropout_monte_carlo_mean_and_mask_values():
    rng = np.random.default_rng(2024)
    Y, cache = kernels.dropout(np.ones((1, 100_000)), 0.3, "train", rng)
    assert 0.98 <= Y.mean() <= 1.02
    assert set(np.unique(cache.mask)) <= {0.0, 1.0 / 0.7}


def test_dropout_backward_uses_mask():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 5))
    _, cache = kernels.dropout(X, 0.5, "train", rng)
    assert np.array_equal(kernels.dropout_backward(np.ones_like(X), cache), cache.mask)


# --------------------------------------------------------------------------
# loss


def test_mse_zero_and_single():
    loss, d = kernels.mse_loss([[1.0], [2.0]], [[1.0], [2.0]])
    assert loss == 0.0 and not d.any()
    loss, d = kernels.mse_loss([[2.0]], [[0.0]])
    assert loss == 4.0 and d[0, 0] == 4.0


def test_mse_matches_brute_force():
    rng = np.random.default_rng(7)
    p = rng.normal(size=(7, 1))
    t = rng.normal(size=(7, 1))
    brute = 0.0
    for i in range(7):
        brute += (p[i, 0] - t[i, 0]) ** 2
    brute /= 7
    loss, d = kernels.mse_loss(p, t)
    assert abs(loss - brute) < 1e-12
    assert np.max(np.abs(d - central_diff(lambda q: kernels.mse_loss(q, t)[0], p))) < 1e-8


def test_mse_errors():
    with pytest.raises(EmptyBatchError):
        kernels.mse_loss(np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(DimensionError):
        kernels.mse_loss(np.zeros((2, 1)), np.zeros((3, 1)))


def test_kernels_keep_finite():
    rng = np.random.default_rng(1)
    X = rng.uniform(-50, 50, (10, 6))
    for Y, _ in (kernels.leaky_relu(X), kernels.tanh_layer(X),
                 kernels.dropout(X, 0.3, "train", rng),
                 kernels.affine_forward(rng.normal(size=(2, 6)), np.zeros(2), X)):
        assert np.isfinite(Y).all()
    assert isinstance(kernels.affine_forward(np.eye(2), np.zeros(2), np.eye(2))[1], LayerCache)
