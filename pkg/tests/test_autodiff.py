import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urlmatch import autodiff as ad
from urlmatch.autodiff import Tape, Tensor
from urlmatch.errors import ContractError, DimensionError, NumericError
from urlmatch.params import ParamStore


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def check_op(build, shapes, seed=0, tol=1e-6, positive=False):
    """Compare backward() of sum(w * build(*params)) with central differences."""
    rng = np.random.default_rng(seed)
    store = ParamStore({f"p{i}": rng.normal(size=s) for i, s in enumerate(shapes)})
    if positive:
        for name in store:
            store[name] = np.abs(store[name].value) + 0.5
    probe = None

    def loss():
        nonlocal probe
        out = build(*[store[f"p{i}"] for i in range(len(shapes))])
        if probe is None:
            probe = rng.normal(size=out.shape)
        return ad.sum(ad.mul(out, probe))

    with Tape():
        value = loss()
    grads = ad.backward(value, store)
    for name in store:
        fd = numeric_grad(lambda: float(loss().value), store[name].value)
        np.testing.assert_allclose(grads[name], fd, rtol=tol, atol=tol)


@pytest.mark.parametrize(
    "build,shapes",
    [
        (ad.add, [(3, 4), (4,)]),
        (ad.sub, [(3, 1), (3, 4)]),
        (ad.mul, [(2, 3), (2, 3)]),
        (ad.mul, [(2, 3), (1, 3)]),
        (lambda a: ad.scale(a, -2.5), [(3,)]),
        (ad.matmul, [(3, 4), (4, 2)]),
        (ad.transpose, [(2, 5)]),
        (ad.tanh, [(4, 3)]),
        (ad.row_softmax, [(3, 5)]),
        (lambda a: ad.sum(a, axis=0), [(3, 4)]),
        (lambda a: ad.sum(a, axis=1), [(3, 4)]),
        (lambda a: ad.mean(a), [(3, 4)]),
        (lambda a: ad.gather_rows(a, [2, 0, 2, 1]), [(3, 2)]),
        (lambda a, b: ad.concat([a, b], axis=0), [(2, 3), (1, 3)]),
        (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 1)]),
    ],
)
def test_primitive_gradients(build, shapes):
    check_op(build, shapes)


def test_log_gradient():
    check_op(lambda a: ad.log(a), [(3, 3)], positive=True)


def test_relu_and_clamp_away_from_kinks():
    # draws of N(0,1) are far from 0 and +-0.5 with overwhelming probability at h = 1e-6
    check_op(ad.relu, [(5, 4)], seed=3)
    check_op(lambda a: ad.clamp(a, -0.5, 0.5), [(5, 4)], seed=4)


def test_relu_kink_takes_zero_slope():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    store = {"x": x}
    with Tape():
        y = ad.sum(ad.relu(x))
    assert ad.backward(y, store)["x"].tolist() == [0.0, 1.0, 0.0]


def test_log_floor_blocks_gradient():
    x = Tensor(np.array([1e-20, 2.0]), requires_grad=True)
    with Tape():
        y = ad.sum(ad.log(x, floor=1e-12))
    assert y.value == pytest.approx(np.log(1e-12) + np.log(2.0))
    assert ad.backward(y, {"x": x})["x"].tolist() == [0.0, 0.5]


def test_dropout_scales_kept_entries():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    mask = np.array([[True, False], [True, True]])
    with Tape():
        y = ad.sum(ad.dropout(x, mask, 0.5))
    assert y.value == 6.0
    assert ad.backward(y, {"x": x})["x"].tolist() == [[2.0, 0.0], [2.0, 2.0]]


def test_softmax_rows_sum_to_one_for_large_logits():
    out = ad.row_softmax(np.array([[1000.0, 0.0, -1000.0], [0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.value[1], 1 / 3)


def test_reused_tensor_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    with Tape():
        y = ad.add(ad.mul(x, x), x)  # x^2 + x
    assert ad.backward(y, {"x": x})["x"] == 7.0


def test_backward_is_repeatable():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape():
        y = ad.sum(ad.tanh(x))
    g1 = ad.backward(y, {"x": x})["x"]
    g2 = ad.backward(y, {"x": x})["x"]
    assert np.array_equal(g1, g2)


def test_unused_parameter_gets_zeros():
    x = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones((2, 3)), requires_grad=True)
    with Tape():
        y = ad.sum(x)
    grads = ad.backward(y, {"x": x, "u": unused})
    assert np.array_equal(grads["u"], np.zeros((2, 3)))


def test_outside_tape_nothing_is_recorded():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ad.sum(ad.mul(x, 2.0))
    assert y.value == 4.0
    assert np.array_equal(ad.backward(y, {"x": x})["x"], np.zeros(2))


def test_tape_records_only_differentiable_ops():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        ad.add(np.ones(2), np.ones(2))
        ad.add(x, 1.0)
    assert len(tape) == 1


def test_cleared_tape_releases_intermediates():
    import gc
    import weakref

    gc.disable()
    try:
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            hidden = ad.mul(x, 3.0)
            loss = ad.sum(hidden)
        grad = ad.backward(loss, {"x": x})["x"]
        ref = weakref.ref(hidden.value)
        tape.clear()
        del hidden, loss, tape
        assert ref() is None
    finally:
        gc.enable()
    assert grad.tolist() == [3.0, 3.0, 3.0]


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape():
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        ad.backward(y, {"x": x})


def test_non_finite_values_raise():
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        ad.mul(np.array([1e308]), 10.0)
    with pytest.raises(NumericError):
        ad.log(np.array([0.0]))


def test_shape_errors():
    with pytest.raises(DimensionError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(DimensionError):
        ad.gather_rows(np.ones((2, 2)), [2])


def test_grad_check_detects_wrong_vjp():
    store = ParamStore({"w": np.array([1.0, 2.0])})

    def bad_square(a):
        return ad.custom(a.value**2, (a,), lambda g: (g * a.value,), "bad_square")

    assert ad.grad_check(lambda s: ad.sum(bad_square(s["w"])), store) > 0.1
    assert ad.grad_check(lambda s: ad.sum(ad.mul(s["w"], s["w"])), store) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_two_layer_network_gradient(n, h, c, seed):
    rng = np.random.default_rng(seed)
    store = ParamStore({"w1": rng.normal(size=(3, h)), "w2": rng.normal(size=(h, c)), "b": rng.normal(size=c)})
    x = rng.normal(size=(n, 3))

    def f(s):
        hidden = ad.tanh(ad.matmul(x, s["w1"]))
        return ad.sum(ad.log(ad.row_softmax(ad.add(ad.matmul(hidden, s["w2"]), s["b"]))))

    assert ad.grad_check(f, store, h=1e-6) < 1e-6
