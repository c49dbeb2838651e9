import numpy as np
import pytest

from sigent import autodiff as ad
from sigent.autodiff import Tensor
from sigent.errors import StructuralError


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


UNARY = {
    "exp": ad.exp,
    "log": lambda t: ad.log(ad.exp(t) + 1.0),
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
    "log1m_tanh_sq": ad.log1m_tanh_sq,
    "square": ad.square,
    "reciprocal": lambda t: ad.reciprocal(ad.exp(t)),
    "relu": ad.relu,
    "clip": lambda t: ad.clip(t, -0.5, 0.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(0)
    # keep away from the kinks of relu and clip
    x = rng.uniform(-2, 2, size=(3, 4))
    x[np.abs(x) < 0.05] = 0.3
    x[np.abs(np.abs(x) - 0.5) < 0.05] = 0.8
    w = rng.normal(size=x.shape)
    t = Tensor(x, requires_grad=True)

    def value():
        return float((UNARY[name](Tensor(x)) * w).sum().data)

    (g,) = ad.grad((UNARY[name](t) * w).sum(), [t])
    assert np.allclose(g, fd(value, x), rtol=1e-5, atol=1e-8)


def test_log1m_tanh_sq_is_stable_for_large_inputs():
    x = np.array([-100.0, -20.0, 0.0, 20.0, 100.0])
    out = ad.log1m_tanh_sq(Tensor(x)).data
    assert np.all(np.isfinite(out))
    expected = 2 * (np.log(2) - np.abs(x) - np.log1p(np.exp(-2 * np.abs(x))))
    assert np.allclose(out, expected, rtol=1e-14, atol=0)


def test_broadcast_mul_and_add_gradients():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3,))
    ta, tb = Tensor(a, True), Tensor(b, True)
    ga, gb = ad.grad(((ta * tb) + tb).sum(), [ta, tb])
    assert np.allclose(ga, np.tile(b, (4, 1)))
    assert np.allclose(gb, a.sum(axis=0) + 4)


def test_logsumexp_matches_direct_and_softmax_gradient():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 6)) * 30
    t = Tensor(x, True)
    out = ad.logsumexp(t, axis=1)
    m = x.max(axis=1, keepdims=True)
    assert np.allclose(out.data, (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0])
    (g,) = ad.grad(out.sum(), [t])
    assert np.allclose(g, np.exp(x - m) / np.exp(x - m).sum(axis=1, keepdims=True))


def test_maximum_minimum_route_gradient():
    a = Tensor(np.array([1.0, 3.0, 2.0]), True)
    b = np.array([2.0, 1.0, 2.0])
    (gmax,) = ad.grad(ad.maximum(a, b).sum(), [a])
    (gmin,) = ad.grad(ad.minimum(a, b).sum(), [a])
    assert np.array_equal(gmax, [0.0, 1.0, 1.0])
    assert np.array_equal(gmin, [1.0, 0.0, 1.0])


def test_getitem_concat_reshape_broadcast():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 4))
    t = Tensor(x, True)
    y = ad.concat([t[:, :1], t[:, 1:] * 2.0], axis=1).reshape(6, 4)
    z = ad.broadcast_to(Tensor(x[:1, :1, :], True), (2, 3, 4))
    (g,) = ad.grad(y.sum() + (t[np.array([0, 0])]).sum(), [t])
    expected = np.ones_like(x) * 2.0
    expected[:, 0, :] = 1.0
    expected[0] += 2.0
    assert np.allclose(g, expected)
    assert z.shape == (2, 3, 4)


def test_linear_and_matmul_gradients():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(2, 3))
    b = rng.normal(size=2)
    tx, tw, tb = Tensor(x, True), Tensor(w, True), Tensor(b, True)
    out = ad.linear(tx, tw, tb)
    assert np.allclose(out.data, x @ w.T + b)
    gx, gw, gb = ad.grad(ad.square(out).sum(), [tx, tw, tb])
    assert np.allclose(gx, fd(lambda: float(((x @ w.T + b) ** 2).sum()), x), atol=1e-6)
    assert np.allclose(gw, fd(lambda: float(((x @ w.T + b) ** 2).sum()), w), atol=1e-6)
    assert np.allclose(gb, 2 * (x @ w.T + b).sum(axis=0))


def test_grad_needs_scalar_tensor():
    t = Tensor(np.ones(3), True)
    with pytest.raises(StructuralError):
        ad.grad(t * 2.0, [t])


def test_unreached_parameter_gets_zero_gradient():
    a, b = Tensor(np.ones(2), True), Tensor(np.ones(3), True)
    ga, gb = ad.grad(a.sum(), [a, b])
    assert np.array_equal(gb, np.zeros(3))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), True)
    y = x * x
    (g,) = ad.grad(y + y, [x])
    assert float(g) == 12.0
