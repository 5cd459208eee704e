"""Gradient checks for every op against central finite differences."""

import numpy as np
import pytest

from cmtf import autodiff as ad
from cmtf.errors import ContractError, DimensionError, NumericError

RNG = np.random.default_rng(20260816)
H = 1e-6
REL_TOL = 1e-4


def numeric_grad(f, x: np.ndarray) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + H
        up = f(x)
        flat[i] = orig - H
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * H)
    return g


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray):
    denom = max(np.abs(numeric).max(), 1e-8)
    rel = np.abs(analytic - numeric).max() / denom
    assert rel < REL_TOL, f"relative gradient error {rel:.3e}"


def check_unary(make_loss, shape):
    x0 = RNG.normal(size=shape)

    def f(x):
        t = ad.Tensor(x.copy(), requires_grad=True)
        return float(make_loss(t).data)

    t = ad.Tensor(x0.copy(), requires_grad=True)
    loss = make_loss(t)
    ad.backward(loss)
    assert t.grad is not None and t.grad.shape == x0.shape
    assert_grad_close(t.grad, numeric_grad(f, x0.copy()))


def test_matmul_grads_both_sides():
    a0 = RNG.normal(size=(4, 3))
    b0 = RNG.normal(size=(3, 5))

    def run(a_val, b_val):
        a = ad.Tensor(a_val.copy(), requires_grad=True)
        b = ad.Tensor(b_val.copy(), requires_grad=True)
        loss = ad.tensor_sum(ad.mul(ad.matmul(a, b), ad.matmul(a, b)))
        return a, b, loss

    a, b, loss = run(a0, b0)
    ad.backward(loss)
    na = numeric_grad(lambda x: float(run(x, b0)[2].data), a0.copy())
    nb = numeric_grad(lambda x: float(run(a0, x)[2].data), b0.copy())
    assert_grad_close(a.grad, na)
    assert_grad_close(b.grad, nb)


def test_matmul_transpose_b():
    a0 = RNG.normal(size=(2, 4, 3))
    b0 = RNG.normal(size=(2, 5, 3))

    def run(a_val, b_val):
        a = ad.Tensor(a_val.copy(), requires_grad=True)
        b = ad.Tensor(b_val.copy(), requires_grad=True)
        return a, b, ad.tensor_sum(ad.matmul(a, b, transpose_b=True))

    a, b, loss = run(a0, b0)
    np.testing.assert_allclose(loss.data, (a0 @ np.swapaxes(b0, -1, -2)).sum())
    ad.backward(loss)
    assert_grad_close(a.grad, numeric_grad(lambda x: float(run(x, b0)[2].data), a0.copy()))
    assert_grad_close(b.grad, numeric_grad(lambda x: float(run(a0, x)[2].data), b0.copy()))


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        ad.matmul(ad.Tensor(np.ones(3)), ad.Tensor(np.ones((3, 2))))
    with pytest.raises(DimensionError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))


def test_add_broadcast_bias_grad():
    x0 = RNG.normal(size=(5, 4))
    b0 = RNG.normal(size=(4,))

    def run(x_val, b_val):
        x = ad.Tensor(x_val.copy(), requires_grad=True)
        b = ad.Tensor(b_val.copy(), requires_grad=True)
        return x, b, ad.tensor_sum(ad.mul(ad.add(x, b), ad.add(x, b)))

    x, b, loss = run(x0, b0)
    ad.backward(loss)
    assert b.grad.shape == (4,)  # unbroadcast back to the bias shape
    assert_grad_close(x.grad, numeric_grad(lambda v: float(run(v, b0)[2].data), x0.copy()))
    assert_grad_close(b.grad, numeric_grad(lambda v: float(run(x0, v)[2].data), b0.copy()))


def test_add_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 5))))


def test_mul_grads():
    x0 = RNG.normal(size=(3, 4))
    y0 = RNG.normal(size=(3, 4))

    def run(x_val, y_val):
        x = ad.Tensor(x_val.copy(), requires_grad=True)
        y = ad.Tensor(y_val.copy(), requires_grad=True)
        return x, y, ad.tensor_sum(ad.mul(x, y))

    x, y, loss = run(x0, y0)
    ad.backward(loss)
    assert_grad_close(x.grad, y0)
    assert_grad_close(y.grad, x0)


def test_relu_grad():
    # shift away from zero so the finite-difference probe cannot straddle the kink
    x0 = RNG.normal(size=(6, 3))
    x0[np.abs(x0) < 0.05] = 0.1
    check_unary(lambda t: ad.tensor_sum(ad.mul(ad.relu(t), ad.relu(t))), x0.shape)


def test_sigmoid_grad():
    check_unary(lambda t: ad.tensor_sum(ad.sigmoid(t)), (4, 3))


def test_softmax_rows_sum_to_one():
    x = ad.Tensor(RNG.normal(size=(3, 7)) * 10.0)
    out = ad.softmax(x)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_grad():
    check_unary(lambda t: ad.tensor_sum(ad.mul(ad.softmax(t), ad.softmax(t))), (2, 5))


def test_softmax_stable_under_large_shift():
    x = RNG.normal(size=(2, 4))
    a = ad.softmax(ad.Tensor(x)).data
    b = ad.softmax(ad.Tensor(x + 1000.0)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_layer_norm_grads_all_inputs():
    x0 = RNG.normal(size=(3, 6))
    g0 = RNG.normal(size=(6,))
    b0 = RNG.normal(size=(6,))

    def run(xv, gv, bv):
        x = ad.Tensor(xv.copy(), requires_grad=True)
        g = ad.Tensor(gv.copy(), requires_grad=True)
        b = ad.Tensor(bv.copy(), requires_grad=True)
        out = ad.layer_norm(x, g, b)
        return x, g, b, ad.tensor_sum(ad.mul(out, out))

    x, g, b, loss = run(x0, g0, b0)
    ad.backward(loss)
    assert_grad_close(x.grad, numeric_grad(lambda v: float(run(v, g0, b0)[3].data), x0.copy()))
    assert_grad_close(g.grad, numeric_grad(lambda v: float(run(x0, v, b0)[3].data), g0.copy()))
    assert_grad_close(b.grad, numeric_grad(lambda v: float(run(x0, g0, v)[3].data), b0.copy()))


def test_layer_norm_shape_guard():
    with pytest.raises(DimensionError):
        ad.layer_norm(ad.Tensor(np.ones((2, 4))), ad.Tensor(np.ones(3)), ad.Tensor(np.ones(4)))


def test_concat_grad_routes_to_parts():
    a0 = RNG.normal(size=(3, 2))
    b0 = RNG.normal(size=(3, 4))

    def run(av, bv):
        a = ad.Tensor(av.copy(), requires_grad=True)
        b = ad.Tensor(bv.copy(), requires_grad=True)
        out = ad.concat([a, b], axis=-1)
        return a, b, ad.tensor_sum(ad.mul(out, out))

    a, b, loss = run(a0, b0)
    ad.backward(loss)
    assert_grad_close(a.grad, numeric_grad(lambda v: float(run(v, b0)[2].data), a0.copy()))
    assert_grad_close(b.grad, numeric_grad(lambda v: float(run(a0, v)[2].data), b0.copy()))


def test_take_scatters_grad():
    x0 = RNG.normal(size=(5, 3))

    def run(xv):
        x = ad.Tensor(xv.copy(), requires_grad=True)
        return x, ad.tensor_sum(ad.mul(x[1:4], x[1:4]))

    x, loss = run(x0)
    ad.backward(loss)
    assert np.all(x.grad[0] == 0.0) and np.all(x.grad[4] == 0.0)
    assert_grad_close(x.grad, numeric_grad(lambda v: float(run(v)[1].data), x0.copy()))


def test_mean_and_sum_grads():
    check_unary(lambda t: ad.mean(ad.mul(t, t)), (4, 4))
    check_unary(lambda t: ad.tensor_sum(ad.mul(t, t)), (4, 4))


def test_bce_matches_reference_and_grad():
    z0 = RNG.normal(size=(6, 2)) * 3.0
    t0 = (RNG.random(size=(6, 2)) > 0.5).astype(np.float64)

    p = 1.0 / (1.0 + np.exp(-z0))
    ref = -(t0 * np.log(p) + (1 - t0) * np.log(1 - p)).mean()
    loss = ad.binary_cross_entropy_with_logits(ad.Tensor(z0), ad.Tensor(t0))
    np.testing.assert_allclose(float(loss.data), ref, rtol=1e-10)

    def run(zv):
        z = ad.Tensor(zv.copy(), requires_grad=True)
        return z, ad.binary_cross_entropy_with_logits(z, ad.Tensor(t0))

    z, loss = run(z0)
    ad.backward(loss)
    assert_grad_close(z.grad, numeric_grad(lambda v: float(run(v)[1].data), z0.copy()))


def test_bce_survives_extreme_logits():
    z = ad.Tensor(np.array([[800.0, -800.0]]))
    t = ad.Tensor(np.array([[1.0, 0.0]]))
    loss = ad.binary_cross_entropy_with_logits(z, t)
    assert float(loss.data) < 1e-10


def test_mse_grad():
    p0 = RNG.normal(size=(5, 2))
    t0 = RNG.normal(size=(5, 2))

    def run(pv):
        p = ad.Tensor(pv.copy(), requires_grad=True)
        return p, ad.mean_squared_error(p, ad.Tensor(t0))

    p, loss = run(p0)
    ad.backward(loss)
    assert_grad_close(p.grad, numeric_grad(lambda v: float(run(v)[1].data), p0.copy()))


def test_backward_requires_scalar_loss():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        ad.backward(y)


def test_backward_accumulates_over_reuse():
    # x appears twice in the graph, so d/dx sum(x + x) = 2 everywhere
    x = ad.Tensor(RNG.normal(size=(3,)), requires_grad=True)
    loss = ad.tensor_sum(ad.add(x, x))
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 2.0)


def test_non_finite_input_rejected():
    with pytest.raises(NumericError):
        ad.Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NumericError):
        ad.Tensor(np.array([np.inf]))


def test_overflow_in_op_raises():
    big = ad.Tensor(np.array([[1e308]]))
    with np.errstate(over="ignore"), pytest.raises(NumericError):
        ad.mul(big, big)


def test_topo_order_handles_deep_chains():
    # iterative traversal must not hit the recursion limit
    x = ad.Tensor(np.ones((1, 1)), requires_grad=True)
    out = x
    for _ in range(5000):
        out = ad.add(out, 1e-9)
    loss = ad.tensor_sum(out)
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, 1.0)


def test_xavier_uniform_bounds():
    rng = np.random.default_rng(3)
    w = ad.xavier_uniform(rng, 64, 64)
    limit = np.sqrt(6.0 / 128)
    assert w.shape == (64, 64)
    assert np.all(np.abs(w) <= limit)
