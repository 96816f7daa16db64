import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kscontrol import autodiff as ad
from oracles import central_diff

ARRAYS = st.integers(min_value=1, max_value=5)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def check_grad(build_loss, x0, rtol=1e-5, h=1e-6):
    """build_loss maps a flat numpy array to a Var scalar loss."""

    def f(x):
        return float(build_loss(x).value)

    loss = build_loss(x0)
    ad.backward(loss)
    return loss


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_elementwise_op_gradients(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-2.0, 2.0, size=6)
    ops = [
        lambda v: ad.vsum(ad.tanh(v) * ad.exp(v * 0.3)),
        lambda v: ad.vmean(ad.square(v) + ad.softplus(v)),
        lambda v: ad.vsum(v * v - v / 2.0 + 1.5),
    ]
    for op in ops:
        v = ad.Var(x0.copy())
        loss = op(v)
        ad.backward(loss)
        num = central_diff(lambda x: float(op(ad.Var(x)).value), x0)
        denom = max(np.abs(num).max(), 1.0)
        assert np.abs(v.grad - num).max() / denom < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_log_gradient_positive_domain(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0.5, 3.0, size=4)
    v = ad.Var(x0.copy())
    loss = ad.vsum(ad.log(v) * 2.0)
    ad.backward(loss)
    assert np.allclose(v.grad, 2.0 / x0, atol=1e-10)


@pytest.mark.parametrize(
    "sa,sb",
    [((3, 4), (4, 2)), ((4,), (4, 2)), ((3, 4), (4,)), ((4,), (4,))],
)
def test_matmul_gradients_all_shape_cases(sa, sb):
    rng = np.random.default_rng(7)
    a0, b0 = _rand(rng, *sa), _rand(rng, *sb)
    va, vb = ad.Var(a0.copy()), ad.Var(b0.copy())
    loss = ad.vsum(ad.square(ad.matmul(va, vb)))
    ad.backward(loss)

    def f_a(flat):
        return float(
            ad.vsum(ad.square(ad.matmul(ad.Var(flat.reshape(sa)), ad.Var(b0)))).value
        )

    def f_b(flat):
        return float(
            ad.vsum(ad.square(ad.matmul(ad.Var(a0), ad.Var(flat.reshape(sb))))).value
        )

    assert np.allclose(va.grad.ravel(), central_diff(f_a, a0.ravel()), atol=1e-5)
    assert np.allclose(vb.grad.ravel(), central_diff(f_b, b0.ravel()), atol=1e-5)


def test_broadcast_bias_gradient():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((5, 3))
    b0 = rng.standard_normal(3)
    vb = ad.Var(b0.copy())
    loss = ad.vsum(ad.square(ad.Var(x) + vb))
    ad.backward(loss)
    assert vb.grad.shape == (3,)
    assert np.allclose(vb.grad, 2.0 * (x + b0).sum(axis=0), atol=1e-10)


def test_minimum_and_clip_subgradients():
    a = ad.Var(np.array([1.0, 3.0]))
    b = ad.Var(np.array([2.0, 2.0]))
    loss = ad.vsum(ad.minimum(a, b))
    ad.backward(loss)
    assert np.array_equal(a.grad, [1.0, 0.0])
    assert np.array_equal(b.grad, [0.0, 1.0])

    v = ad.Var(np.array([-5.0, 0.5, 5.0]))
    loss = ad.vsum(ad.clip(v, -1.0, 1.0))
    ad.backward(loss)
    assert np.array_equal(v.grad, [0.0, 1.0, 0.0])


def test_take_and_concat_gradients():
    v = ad.Var(np.arange(6.0).reshape(2, 3))
    sl = v[(slice(None), slice(0, 2))]
    loss = ad.vsum(sl * 2.0)
    ad.backward(loss)
    assert np.array_equal(v.grad, [[2.0, 2.0, 0.0], [2.0, 2.0, 0.0]])

    a, b = ad.Var(np.ones(2)), ad.Var(np.ones(3))
    loss = ad.vsum(ad.concat([a * 2.0, b * 3.0]))
    ad.backward(loss)
    assert np.array_equal(a.grad, [2.0, 2.0])
    assert np.array_equal(b.grad, [3.0, 3.0, 3.0])


def test_shared_subexpression_accumulates():
    v = ad.Var(np.array(2.0))
    y = v * v + v * v  # v appears in two paths
    ad.backward(y)
    assert float(v.grad) == pytest.approx(8.0)


def test_adam_converges_on_quadratic():
    store = ad.ParamStore()
    store.add("theta", np.array(0.0))
    for _ in range(800):
        vm = store.make_vars()
        loss = ad.square(vm["theta"] - 3.0)
        ad.backward(loss)
        ad.adam_step(store, store.collect_grads(vm), lr=0.05)
    assert float(store["theta"]) == pytest.approx(3.0, abs=1e-2)


def test_param_store_trainable_flags_and_clone():
    store = ad.ParamStore()
    store.add("a", np.ones(3))
    store.add("b", np.ones(2), trainable=False)
    assert store.trainable_names() == ["a"]
    vm = store.make_vars()
    loss = ad.vsum(vm["a"]) + ad.vsum(vm["b"])
    ad.backward(loss)
    grads = store.collect_grads(vm)
    assert "a" in grads and "b" not in grads

    clone = store.clone()
    clone["a"][:] = 5.0
    assert store["a"][0] == 1.0  # deep copy


def test_reset_optimizer_clears_moments():
    store = ad.ParamStore()
    store.add("w", np.zeros(2))
    vm = store.make_vars()
    loss = ad.vsum(ad.square(vm["w"] - 1.0))
    ad.backward(loss)
    ad.adam_step(store, store.collect_grads(vm), lr=0.1)
    assert store.entry("w")["step"] == 1
    store.reset_optimizer()
    assert store.entry("w")["step"] == 0
    assert np.array_equal(store.entry("w")["m"], np.zeros(2))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(2, 8))
def test_orthogonal_init_columns(seed, n, m):
    rng = np.random.default_rng(seed)
    W = ad.orthogonal(rng, (n, m), gain=1.0)
    if n >= m:
        assert np.allclose(W.T @ W, np.eye(m), atol=1e-10)
    else:
        assert np.allclose(W @ W.T, np.eye(n), atol=1e-10)
