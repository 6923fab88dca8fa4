import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from upliftlab import diffkernel as dk
from upliftlab.diffkernel import Tensor
from upliftlab.errors import DimensionError


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(dk.matmul(Tensor(np.eye(2)), a).data, a.data)
    np.testing.assert_array_equal((a @ Tensor([[5.0], [6.0]])).data, [[17.0], [39.0]])
    np.testing.assert_array_equal((Tensor(np.zeros((3, 2))) @ a).data, np.zeros((3, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_elementwise_examples():
    assert dk.tanh(Tensor(0.0)).item() == 0.0
    assert dk.softplus(Tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)
    mpmath.mp.dps = 50
    exact = float(mpmath.log(1 + mpmath.e ** 50))
    assert dk.softplus(Tensor(50.0)).item() == pytest.approx(exact, rel=1e-15)
    assert dk.softplus(Tensor(800.0)).item() == 800.0
    np.testing.assert_array_equal(dk.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_softmax_examples():
    np.testing.assert_allclose(dk.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    x = np.array([1.0, 2.0, 3.0])
    direct = np.array([math.exp(v) for v in x]) / sum(math.exp(v) for v in x)
    np.testing.assert_allclose(dk.softmax(Tensor(x)).data, direct, rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_softmax_properties(x, c):
    out = dk.softmax(Tensor(x), axis=1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(dk.softmax(Tensor(x + c), axis=1).data, out, atol=1e-12)


def test_mse_and_frobenius():
    x = Tensor([1.0, 2.0])
    assert dk.mse(x, x).item() == 0.0
    assert dk.mse(Tensor([1.0, 1.0]), Tensor([0.0, 0.0])).item() == 1.0
    assert dk.mse(Tensor([1.0, 3.0]), Tensor([0.0, 0.0])).item() == 5.0
    with pytest.raises(DimensionError):
        dk.mse(Tensor([1.0]), Tensor([1.0, 2.0]))
    assert dk.frob_norm_sq(Tensor(np.zeros((2, 2)))).item() == 0.0
    assert dk.frob_norm_sq(Tensor([[3.0, 4.0]])).item() == 25.0
    r = np.random.default_rng(0).normal(size=(2, 2))
    brute = sum(r[i, j] ** 2 for i in range(2) for j in range(2))
    assert dk.frob_norm_sq(Tensor(r)).item() == pytest.approx(brute, rel=1e-15)


def test_backward_simple():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    dk.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    z = Tensor(0.0, requires_grad=True)
    dk.backward(dk.tanh(z))
    assert z.grad == pytest.approx(1.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(DimensionError):
        dk.backward(x * 2.0)
    dk.current_tape().clear()


def test_two_consumers_sum(rng):
    w = rng.normal(size=(3, 2))
    x = rng.normal(size=(4, 3))

    def grads(f):
        p = Tensor(w.copy(), requires_grad=True)
        dk.backward(f(p))
        return p.grad

    first = lambda p: dk.tanh(Tensor(x) @ p).sum()
    second = lambda p: dk.frob_norm_sq(p * 3.0)
    both = lambda p: first(p) + second(p)
    np.testing.assert_allclose(grads(both), grads(first) + grads(second), rtol=1e-13)


def _check(fn, *shapes, seed=0, low=-2.0, high=2.0, away_from_zero=False):
    r = np.random.default_rng(seed)
    inputs = []
    for s in shapes:
        v = r.uniform(low, high, size=s)
        if away_from_zero:
            v = np.where(np.abs(v) < 0.1, v + 0.3, v)
        inputs.append(Tensor(v))
    return dk.grad_check(lambda: fn(*inputs), inputs)


PRIMITIVES = {
    "add": (lambda a, b: (dk.tanh(a + b)).sum(), [(3, 4), (4,)]),
    "sub": (lambda a, b: (dk.tanh(a - b)).sum(), [(3, 1), (3, 4)]),
    "mul": (lambda a, b: (a * b).sum(), [(2, 3), (2, 3)]),
    "div": (lambda a, b: (a / (dk.exp(b) + 1.0)).sum(), [(2, 3), (2, 3)]),
    "pow": (lambda a: (dk.exp(a) ** 1.5).sum(), [(5,)]),
    "matmul": (lambda a, b: dk.tanh(a @ b).sum(), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: dk.tanh(a @ b).sum(), [(2, 3, 4), (4, 5)]),
    "exp_log": (lambda a: dk.log(dk.exp(a) + 1.0).sum(), [(4,)]),
    "sqrt": (lambda a: dk.sqrt(a * a + 1.0).sum(), [(4,)]),
    "tanh": (lambda a: (dk.tanh(a) * a).sum(), [(3, 3)]),
    "sigmoid": (lambda a: (dk.sigmoid(a) * a).sum(), [(3, 3)]),
    "softplus": (lambda a: (dk.softplus(a) * a).sum(), [(3, 3)]),
    "softmax": (lambda a, b: (dk.softmax(a, axis=1) * b).sum(), [(3, 4), (3, 4)]),
    "sum_axis": (lambda a: (dk.tsum(a, axis=1) ** 2).sum(), [(3, 4)]),
    "mean_axis": (lambda a: (dk.mean(a, axis=0, keepdims=True) * a).sum(), [(3, 4)]),
    "concat": (lambda a, b: (dk.concat([a, b], axis=1) ** 2).sum(), [(2, 3), (2, 1)]),
    "reshape_swap": (lambda a: (dk.swapaxes(a.reshape(2, 3, 2), 1, 2) * dk.tanh(a.reshape(2, 2, 3))).sum(), [(12,)]),
    "take": (lambda a: (dk.take(a, [0, 2, 0]) ** 2).sum(), [(3, 2)]),
    "getitem": (lambda a: (a[:, 1] * a[0, 2]).sum(), [(3, 4)]),
    "mse": (lambda a, b: dk.mse(a, b), [(5,), (5,)]),
    "scale_shift": (lambda w, b: dk.tanh(dk.scale_shift(np.arange(6.0).reshape(2, 3) - 2.0, w, b)).sum(),
                    [(3, 4), (3, 4)]),
    "frob": (lambda a: dk.frob_norm_sq(dk.tanh(a)), [(3, 2)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    fn, shapes = PRIMITIVES[name]
    for seed in range(3):
        assert _check(fn, *shapes, seed=seed) < 1e-4


def test_kinked_primitives_away_from_kink():
    for seed in range(3):
        assert _check(lambda a: (dk.relu(a) * a).sum(), (4, 3), seed=seed, away_from_zero=True) < 1e-4
        assert _check(lambda a: (dk.tabs(a) * a).sum(), (4, 3), seed=seed, away_from_zero=True) < 1e-4
        assert _check(lambda a, b: (dk.minimum(a, b) * a).sum(), (4,), (4,), seed=seed) < 1e-4
        assert _check(lambda a, b: (dk.maximum(a, b) * a).sum(), (4,), (4,), seed=seed) < 1e-4


def test_grad_check_detects_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]))

    def bad():
        out = dk.tanh(x)
        if out._node is not None:
            out._node.backward_fn = lambda g: (2.0 * g,)
        return out.sum()

    assert dk.grad_check(bad, [x]) > 0.1


def test_linear_and_attention_block_grad_check():
    r = np.random.default_rng(3)
    layer = dk.Linear(4, 3, r)
    x = Tensor(r.normal(size=(5, 4)))
    assert dk.grad_check(lambda: dk.frob_norm_sq(layer(x)), [layer.weight, layer.bias]) < 1e-6

    q = Tensor(r.normal(size=(2, 3)))
    k = Tensor(r.normal(size=(4, 3)))
    v = Tensor(r.normal(size=(4, 2)))
    attn = lambda: dk.frob_norm_sq(dk.softmax(q @ k.T / np.sqrt(3.0), axis=1) @ v)
    assert dk.grad_check(attn, [q, k, v]) < 1e-5


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    state = dk.AdamState()
    dk.adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_single_step_hand_value():
    g = np.array([0.5, -3.0])
    p = np.zeros(2)
    state = dk.AdamState(lr=1e-3)
    dk.adam_step([p], [g], state)
    # step 1: m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps)
    expected = -1e-3 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p, expected, rtol=1e-12)
    assert state.step == 1


def test_adam_determinism():
    def run():
        r = dk.substream(11, "adam")
        w = Tensor(r.normal(size=(3, 2)), requires_grad=True)
        x = Tensor(r.normal(size=(8, 3)))
        opt = dk.Adam([w], lr=1e-2)
        for _ in range(20):
            opt.zero_grad()
            dk.backward(dk.frob_norm_sq(dk.tanh(x @ w) - 0.5))
            opt.step()
        return w.data

    assert run().tobytes() == run().tobytes()


def test_substreams_independent_and_replayable():
    a = dk.substream(5, "user", 3).normal(size=4)
    b = dk.substream(5, "user", 3).normal(size=4)
    c = dk.substream(5, "user", 4).normal(size=4)
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a, c)


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    dk.current_tape().clear()
    with dk.no_grad():
        out = dk.tanh(w * 2.0)
    assert len(dk.current_tape()) == 0
    assert not out.requires_grad


def test_nonfinite_forward_raises():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        dk.log(Tensor([-1.0]))


def test_graph_dump_lists_edges():
    w = Tensor(np.ones(2), requires_grad=True)
    with dk.fresh_tape() as tape:
        dk.tanh(w * 2.0).sum()
        text = tape.dump()
    assert "mul" in text and "tanh" in text and "sum" in text
