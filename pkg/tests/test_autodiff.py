"""Autodiff engine: closed-form oracles and finite-difference checks."""

import math

import numpy as np
import pytest

from envgnn import autodiff as ad
from envgnn.errors import ArgumentError, NumericError, ShapeError, StateError

from helpers import fd_check, fd_gradient, matmul_oracle


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 5))))
        b = rng.standard_normal((a.shape[1], int(rng.integers(1, 5))))
        out = ad.matmul(ad.Tensor(a), ad.Tensor(b))
        assert np.allclose(out.data, matmul_oracle(a, b), atol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.matmul(ad.Tensor(np.ones(3)), ad.Tensor(np.ones((3, 2))))


def test_softmax_closed_form():
    out = ad.softmax_rows(ad.Tensor([[0.0, math.log(3.0)]]))
    assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-12)
    rows = ad.softmax_rows(ad.Tensor(np.random.default_rng(1).standard_normal((5, 4))))
    assert np.allclose(rows.data.sum(axis=1), 1.0, atol=1e-12)
    # Large equal logits stay finite and uniform.
    big = ad.softmax_rows(ad.Tensor([[1000.0, 1000.0]]))
    assert np.allclose(big.data, [[0.5, 0.5]], atol=1e-12)
    with pytest.raises(NumericError):
        ad.softmax_rows(ad.Tensor([[np.nan, 0.0]]))


def test_cross_entropy_closed_form():
    logits = ad.Tensor(np.zeros((2, 2)))
    labels = np.array([0, 1])
    assert ad.cross_entropy(logits, labels).item() == pytest.approx(math.log(2.0), abs=1e-12)
    three = ad.cross_entropy(ad.Tensor(np.zeros((4, 3))), np.array([0, 1, 2, 0]))
    assert three.item() == pytest.approx(math.log(3.0), abs=1e-12)
    confident = ad.cross_entropy(ad.Tensor([[30.0, 0.0]]), np.array([0]))
    assert confident.item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ArgumentError):
        ad.cross_entropy(ad.Tensor(np.zeros((2, 2))), np.array([0, 2]))
    with pytest.raises(ArgumentError):
        ad.cross_entropy(ad.Tensor(np.zeros((0, 2))), np.zeros(0, dtype=int))


def test_cross_entropy_prob_floor_caps_loss_and_gradient():
    # Row 0 has label probability ~ sigmoid(-40) << 1e-4 -> capped at
    # -log(floor); row 1 sits at 0.5 >> floor -> unchanged.
    logits = ad.Tensor([[-20.0, 20.0], [0.0, 0.0]], requires_grad=True)
    labels = np.array([0, 1])
    loss = ad.cross_entropy(logits, labels, prob_floor=1e-4)
    expected = 0.5 * (-math.log(1e-4) + math.log(2.0))
    assert loss.item() == pytest.approx(expected, abs=1e-12)
    ad.backward(loss)
    assert np.all(logits.grad[0] == 0.0)
    assert np.any(logits.grad[1] != 0.0)
    # Floor inactive when every label probability clears it.
    easy = ad.cross_entropy(ad.Tensor(np.zeros((2, 2))), labels, prob_floor=1e-4)
    assert easy.item() == pytest.approx(math.log(2.0), abs=1e-12)
    with pytest.raises(ArgumentError):
        ad.cross_entropy(ad.Tensor(np.zeros((2, 2))), labels, prob_floor=1.0)


def test_cross_entropy_prob_floor_gradient_matches_fd():
    rng = np.random.default_rng(21)
    # Spread rows across capped and uncapped regimes; keep every row away
    # from the cap boundary so central differences stay one-sided-free.
    logits0 = rng.standard_normal((6, 3))
    logits0[0] += np.array([-15.0, 15.0, 0.0])
    logits0[3] += np.array([0.0, -12.0, 12.0])
    labels = np.array([0, 2, 1, 1, 0, 2])

    def f(arr):
        t = ad.Tensor(arr, requires_grad=True)
        return t, ad.cross_entropy(t, labels, prob_floor=1e-4)

    t, loss = f(logits0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr)[1].item(), logits0, t.grad)


def test_kl_bernoulli_closed_form():
    # 0.9 ln(0.9/0.5) + 0.1 ln(0.1/0.5), frozen independently.
    val = ad.kl_bernoulli(ad.Tensor([0.9]), 0.5).item()
    assert val == pytest.approx(0.3680642071684971, abs=1e-12)
    assert ad.kl_bernoulli(ad.Tensor([0.3, 0.7]), ad.Tensor(0.3)).item() == pytest.approx(
        0.5 * (0.0 + (0.7 * math.log(0.7 / 0.3) + 0.3 * math.log(0.3 / 0.7))), abs=1e-12
    )
    assert ad.kl_bernoulli(ad.Tensor([0.25, 0.25]), 0.25).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NumericError):
        ad.kl_bernoulli(ad.Tensor([0.0, 0.5]), 0.5)
    with pytest.raises(NumericError):
        ad.kl_bernoulli(ad.Tensor([0.5]), 1.0)


def test_binary_concrete_matches_sigmoid_formula():
    p = ad.Tensor(np.array([0.2, 0.5, 0.8]))
    u = np.array([0.3, 0.9, 0.5])
    tau = 0.7
    out = ad.binary_concrete_sample(p, tau, uniforms=u)
    z = (np.log(p.data / (1 - p.data)) + np.log(u / (1 - u))) / tau
    assert np.allclose(out.data, 1.0 / (1.0 + np.exp(-z)), atol=1e-12)
    with pytest.raises(ArgumentError):
        ad.binary_concrete_sample(p, 0.0, uniforms=u)
    with pytest.raises(NumericError):
        ad.binary_concrete_sample(ad.Tensor([1.0]), 0.5, uniforms=np.array([0.5]))


def test_gaussian_sample_scales_noise():
    noise = np.array([[1.0, -2.0]])
    t = ad.gaussian_sample((1, 2), 0.5, noise=noise)
    assert np.allclose(t.data, [[0.5, -1.0]])
    assert not t.requires_grad
    zero = ad.gaussian_sample((3,), 0.0, rng=np.random.default_rng(0))
    assert np.all(zero.data == 0.0)


def test_backward_requires_scalar_and_runs_once():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.scale(x, 2.0)
    with pytest.raises(ShapeError):
        ad.backward(y)
    loss = ad.sum_all(y)
    ad.backward(loss)
    assert np.allclose(x.grad, [2.0, 2.0])
    with pytest.raises(StateError):
        ad.backward(loss)


def test_gradient_accumulates_across_losses():
    x = ad.Tensor([3.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.scale(x, 1.0)))
    ad.backward(ad.sum_all(ad.scale(x, 2.0)))
    assert np.allclose(x.grad, [3.0])


def test_diamond_graph_accumulation():
    # y = x*x + x: grad = 2x + 1, the shared leaf is visited once per path.
    x = ad.Tensor([1.5], requires_grad=True)
    y = ad.add(ad.elementwise_mul(x, x), x)
    ad.backward(ad.sum_all(y))
    assert np.allclose(x.grad, [4.0])


def test_clamp_gradient_mask():
    x = ad.Tensor([-1.0, 0.5, 2.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.clamp(x, 0.0, 1.0)))
    assert np.allclose(x.grad, [0.0, 1.0, 0.0])


def test_grad_reverse_identity_forward_negated_backward():
    # By construction this op is not FD-consistent: the forward value is
    # the identity while the backward pass negates the incoming gradient.
    rng = np.random.default_rng(21)
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))
    x = ad.Tensor(x0, requires_grad=True)
    out = ad.grad_reverse(x)
    assert np.array_equal(out.data, x0)
    loss = ad.sum_all(ad.elementwise_mul(out, ad.Tensor(w)))
    ad.backward(loss)
    assert np.allclose(x.grad, -w, atol=1e-15)

    # Below the reversal, gradients are untouched: a parameter applied to
    # the reversed tensor sees its ordinary derivative.
    x = ad.Tensor(x0, requires_grad=True)
    v = ad.Tensor(w.copy(), requires_grad=True)
    ad.backward(ad.sum_all(ad.elementwise_mul(ad.grad_reverse(x), v)))
    assert np.allclose(v.grad, x0, atol=1e-15)
    assert np.allclose(x.grad, -w, atol=1e-15)


def _scalar_fn(op, x_shape, aux=None, seed=0):
    """Build (f(ndarray)->float, analytic grad) for FD comparison."""
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(x_shape)

    def run(arr):
        t = ad.Tensor(arr, requires_grad=True)
        out = op(t)
        loss = ad.sum_all(ad.elementwise_mul(out, ad.Tensor(aux[: out.size].reshape(out.shape))))
        return t, loss

    weights = rng.standard_normal(1024)
    aux = weights
    t, loss = run(x0)
    ad.backward(loss)
    return x0, t.grad, lambda arr: run(arr)[1].item()


OPS = {
    "sigmoid": lambda t: ad.sigmoid(t),
    "tanh": lambda t: ad.tanh(t),
    "relu": lambda t: ad.relu(t),
    "exp": lambda t: ad.exp(t),
    "softmax": lambda t: ad.softmax_rows(t),
    "mean_rows": lambda t: ad.mean_rows(t),
    "transpose": lambda t: ad.transpose(t),
    "reshape": lambda t: ad.reshape(t, (t.size,)),
    "scale": lambda t: ad.scale(t, -1.7),
    "shift": lambda t: ad.shift(t, 0.3),
    "neg": lambda t: ad.neg(t),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_unary_op_gradients(name):
    for seed in range(5):
        x0, grad, f = _scalar_fn(OPS[name], (3, 4), seed=seed)
        fd_check(f, x0, grad)


def test_log_and_power_gradients():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0.5, 2.0, size=(3, 3))
    w = rng.standard_normal((3, 3))

    def f(arr, op):
        t = ad.Tensor(arr, requires_grad=True)
        return t, ad.sum_all(ad.elementwise_mul(op(t), ad.Tensor(w)))

    for op in (ad.log, lambda t: ad.power(t, -0.5), lambda t: ad.power(t, 2.0)):
        t, loss = f(x0, op)
        ad.backward(loss)
        fd_check(lambda arr: f(arr, op)[1].item(), x0, t.grad)


def test_matmul_and_bmm_gradients():
    rng = np.random.default_rng(4)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))
    w = rng.standard_normal((3, 2))

    def f(a_arr, b_arr):
        a = ad.Tensor(a_arr, requires_grad=True)
        b = ad.Tensor(b_arr, requires_grad=True)
        return a, b, ad.sum_all(ad.elementwise_mul(ad.matmul(a, b), ad.Tensor(w)))

    a, b, loss = f(a0, b0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr, b0)[2].item(), a0, a.grad)
    fd_check(lambda arr: f(a0, arr)[2].item(), b0, b.grad)

    a3 = rng.standard_normal((2, 3, 4))
    b3 = rng.standard_normal((2, 4, 2))
    w3 = rng.standard_normal((2, 3, 2))

    def g(a_arr, b_arr):
        a = ad.Tensor(a_arr, requires_grad=True)
        b = ad.Tensor(b_arr, requires_grad=True)
        return a, b, ad.sum_all(ad.elementwise_mul(ad.bmm(a, b), ad.Tensor(w3)))

    a, b, loss = g(a3, b3)
    ad.backward(loss)
    fd_check(lambda arr: g(arr, b3)[2].item(), a3, a.grad)
    fd_check(lambda arr: g(a3, arr)[2].item(), b3, b.grad)


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((4, 3))
    bias0 = rng.standard_normal(3)
    col0 = rng.standard_normal((4, 1))
    w = rng.standard_normal((4, 3))

    def f(x_arr, b_arr, c_arr):
        x = ad.Tensor(x_arr, requires_grad=True)
        b = ad.Tensor(b_arr, requires_grad=True)
        c = ad.Tensor(c_arr, requires_grad=True)
        out = ad.elementwise_mul(ad.add(x, b), c)
        return x, b, c, ad.sum_all(ad.elementwise_mul(out, ad.Tensor(w)))

    x, b, c, loss = f(x0, bias0, col0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr, bias0, col0)[3].item(), x0, x.grad)
    fd_check(lambda arr: f(x0, arr, col0)[3].item(), bias0, b.grad)
    fd_check(lambda arr: f(x0, bias0, arr)[3].item(), col0, c.grad)


def test_gather_scatter_gradients():
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((5, 3))
    idx = np.array([0, 2, 2, 4, 1, 0])
    w = rng.standard_normal((6, 3))
    w2 = rng.standard_normal((5, 3))

    def f(arr):
        t = ad.Tensor(arr, requires_grad=True)
        gathered = ad.gather_rows(t, idx)
        return t, ad.sum_all(ad.elementwise_mul(gathered, ad.Tensor(w)))

    t, loss = f(x0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr)[1].item(), x0, t.grad)

    y0 = rng.standard_normal((6, 3))

    def g(arr):
        t = ad.Tensor(arr, requires_grad=True)
        out = ad.scatter_add(t, idx, 5)
        return t, ad.sum_all(ad.elementwise_mul(out, ad.Tensor(w2)))

    t, loss = g(y0)
    ad.backward(loss)
    fd_check(lambda arr: g(arr)[1].item(), y0, t.grad)


def test_concat_gradients():
    rng = np.random.default_rng(7)
    a0 = rng.standard_normal((2, 3))
    b0 = rng.standard_normal((2, 2))
    w = rng.standard_normal((2, 5))

    def f(a_arr, b_arr):
        a = ad.Tensor(a_arr, requires_grad=True)
        b = ad.Tensor(b_arr, requires_grad=True)
        return a, b, ad.sum_all(ad.elementwise_mul(ad.concat([a, b], axis=1), ad.Tensor(w)))

    a, b, loss = f(a0, b0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr, b0)[2].item(), a0, a.grad)
    fd_check(lambda arr: f(a0, arr)[2].item(), b0, b.grad)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(8)
    logits0 = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1, 1, 0])

    def f(arr):
        t = ad.Tensor(arr, requires_grad=True)
        return t, ad.cross_entropy(t, labels)

    t, loss = f(logits0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr)[1].item(), logits0, t.grad)


def test_kl_bernoulli_gradients():
    rng = np.random.default_rng(9)
    p0 = rng.uniform(0.05, 0.95, size=8)
    r0 = np.asarray(0.4)

    def f(p_arr, r_arr):
        p = ad.Tensor(p_arr, requires_grad=True)
        r = ad.Tensor(r_arr, requires_grad=True)
        return p, r, ad.kl_bernoulli(p, r)

    p, r, loss = f(p0, r0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr, r0)[2].item(), p0, p.grad)
    fd_check(lambda arr: f(p0, arr)[2].item(), r0, r.grad)


def test_binary_concrete_gradient_fixed_noise():
    rng = np.random.default_rng(10)
    p0 = rng.uniform(0.1, 0.9, size=6)
    u = rng.random(6)
    w = rng.standard_normal(6)

    def f(arr):
        p = ad.Tensor(arr, requires_grad=True)
        a = ad.binary_concrete_sample(p, 0.8, uniforms=u)
        return p, ad.sum_all(ad.elementwise_mul(a, ad.Tensor(w)))

    p, loss = f(p0)
    ad.backward(loss)
    fd_check(lambda arr: f(arr)[1].item(), p0, p.grad)


def test_fd_gradient_helper_on_quadratic():
    grad = fd_gradient(lambda x: float((x**2).sum()), np.array([1.0, -2.0]))
    assert np.allclose(grad, [2.0, -4.0], atol=1e-8)


def test_parameter_store_registration_and_glorot_bounds():
    store = ad.ParameterStore(seed=0)
    w = store.glorot("w", 30, 10)
    bound = np.sqrt(6.0 / 40.0)
    assert np.all(np.abs(w.data) <= bound)
    assert w.requires_grad
    store.zeros("b", (10,))
    store.scalar("s", 0.5)
    assert store.names() == ["w", "b", "s"]
    with pytest.raises(ArgumentError):
        store.zeros("w", (1,))
    store2 = ad.ParameterStore(seed=0)
    assert np.array_equal(store2.glorot("w", 30, 10).data, w.data)


def test_snapshot_and_load_state():
    store = ad.ParameterStore(seed=1)
    store.glorot("w", 4, 4)
    snap32 = store.snapshot("float32")
    assert not np.array_equal(snap32["w"], store["w"].data)
    assert np.array_equal(snap32["w"], store["w"].data.astype(np.float32).astype(np.float64))
    store.load_state(snap32)
    assert np.array_equal(store["w"].data, snap32["w"])
    with pytest.raises(ShapeError):
        store.load_state({"w": np.zeros((2, 2))})
