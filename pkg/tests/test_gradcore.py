import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src import gradcore as gc
from src.gradcore import GradientError, NonFiniteError, OptimizerState, ShapeError, Tensor


def numeric_grad(f, tensors, eps=1e-6):
    out = []
    for t in tensors:
        g = np.zeros_like(t.data)
        it = np.nditer(t.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t.data[idx]
            t.data[idx] = orig + eps
            up = f(*tensors).item()
            t.data[idx] = orig - eps
            down = f(*tensors).item()
            t.data[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def rel_error(a, b):
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a) + np.abs(b))))


def check_grads(f, *shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    tensors = [Tensor(rng.normal(size=s), requires_grad=True, name=f"x{i}") for i, s in enumerate(shapes)]
    gc.backward(f(*tensors))
    analytic = [t.grad.copy() for t in tensors]
    for a, n in zip(analytic, numeric_grad(f, tensors)):
        assert rel_error(a, n) < tol


@pytest.mark.parametrize(
    "f, shapes",
    [
        (lambda a, b: (a + b).sum(), [(3, 4), (4,)]),
        (lambda a, b: ((a - b) * a).sum(), [(2, 3), (2, 1)]),
        (lambda a, b: (gc.tanh(a @ b)).sum(), [(3, 4), (4, 2)]),
        (lambda a, b: (a @ b).sum(), [(2, 3, 4), (4, 5)]),
        (lambda a, b: gc.sigmoid(gc.concat([a, b], axis=-1)).sum(), [(2, 3), (2, 2)]),
        (lambda a, b: (gc.stack([a, b], axis=1) * gc.stack([b, a], axis=1)).sum(), [(3, 2), (3, 2)]),
        (lambda a: (a[:, 1:3] * a[:, 0:2]).sum(), [(3, 4)]),
        (lambda a: (a.transpose(1, 0) @ a).sum(), [(3, 2)]),
        (lambda a: (a.reshape(2, 6) * a.reshape(2, 6)).sum(), [(3, 4)]),
        (lambda a: (gc.softmax(a, axis=-1) * a).sum(), [(2, 5)]),
        (lambda a: (gc.log_softmax(a, axis=0) * a).sum(), [(4, 3)]),
        (lambda a: gc.mean(a * a, axis=1).sum(), [(3, 4)]),
    ],
)
def test_gradients_match_central_differences(f, shapes):
    check_grads(f, *shapes)


def test_take_and_gather_gradients():
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    check_grads(lambda table: (gc.take(table, ids) * gc.take(table, ids)).sum(), (4, 3))
    picks = np.array([1, 0, 2])
    check_grads(lambda x: gc.gather(gc.log_softmax(x), picks).sum(), (3, 4))


def test_cross_entropy_gradient_respects_mask():
    targets = np.array([[1, 2, 0], [3, 0, 0]])
    mask = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    check_grads(lambda x: gc.softmax_cross_entropy(x, targets, mask), (2, 3, 4))
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)), requires_grad=True)
    gc.backward(gc.softmax_cross_entropy(x, targets, mask))
    assert np.all(x.grad[0, 2] == 0.0)
    assert np.all(x.grad[1, 1:] == 0.0)


def test_cross_entropy_empty_mask_raises():
    x = Tensor(np.zeros((1, 2, 4)), requires_grad=True)
    with pytest.raises(GradientError):
        gc.softmax_cross_entropy(x, np.zeros((1, 2), dtype=int), np.zeros((1, 2)))


def test_shape_errors():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3)))
    with pytest.raises(ShapeError):
        gc.add(a, b)
    with pytest.raises(ShapeError):
        gc.matmul(a, Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        gc.concat([a, Tensor(np.ones((2, 3, 1)))])
    with pytest.raises(ShapeError):
        gc.softmax(a, axis=2)
    with pytest.raises(ShapeError):
        gc.reshape(a, (4, 2))


def test_non_finite_activation_input_raises():
    with pytest.raises(NonFiniteError):
        gc.sigmoid(Tensor(np.array([0.0, np.inf])))
    with pytest.raises(NonFiniteError):
        gc.softmax(Tensor(np.array([np.nan, 1.0])))


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradientError):
        gc.backward(x * 2.0)


def test_gradients_accumulate_across_uses_and_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True, name="x")
    grads = gc.backward((x * x + x).sum())
    np.testing.assert_allclose(grads["x"], [3.0, 5.0])
    gc.backward(x.sum())
    np.testing.assert_allclose(x.grad, [4.0, 6.0])
    gc.zero_grad({"x": x})
    assert x.grad is None


def test_frozen_tensor_gets_no_gradient():
    w = Tensor(np.ones((2, 2)), requires_grad=False, name="w")
    x = Tensor(np.ones((1, 2)), requires_grad=True, name="x")
    grads = gc.backward((x @ w).sum())
    assert "w" not in grads and w.grad is None
    np.testing.assert_allclose(grads["x"], [[2.0, 2.0]])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with gc.no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    assert gc.backward(y) == {}


def test_tensor_op_dispatch():
    a, b = Tensor(np.ones((2, 2))), Tensor(np.full((2, 2), 2.0))
    np.testing.assert_allclose(gc.tensor_op("matmul", a, b).data, np.full((2, 2), 4.0))
    np.testing.assert_allclose(gc.tensor_op("slice", a, index=(0, slice(None))).data, [1.0, 1.0])
    m = gc.tensor_op("matmul", Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])), Tensor(np.array([[5.0, 6.0], [7.0, 8.0]])))
    np.testing.assert_array_equal(m.data, [[19.0, 22.0], [43.0, 50.0]])
    np.testing.assert_allclose(gc.activation("sigmoid", Tensor(np.zeros(1))).data, [0.5])
    np.testing.assert_allclose(gc.activation("softmax", Tensor(np.full(3, 7.0))).data, 1 / 3)
    with pytest.raises(ValueError):
        gc.tensor_op("conv", a, b)
    with pytest.raises(ValueError):
        gc.activation("relu", a)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    s = gc.softmax(Tensor(x), axis=-1).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_adam_first_step_moves_by_learning_rate():
    p = Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True, name="p")
    state = OptimizerState.init({"p": p}, lr=0.01)
    gc.adam_step({"p": p}, {"p": np.array([0.3, -2.0, 1e-3])}, state)
    np.testing.assert_allclose(p.data, [0.99, -0.99, 0.49], atol=1e-6)
    assert state.step == 1


def test_adam_minimizes_a_quadratic():
    w = Tensor(np.array([1.0, 1.0]), requires_grad=True, name="w")
    state = OptimizerState.init({"w": w}, lr=0.1)
    for _ in range(200):
        gc.adam_step({"w": w}, {"w": 2.0 * w.data}, state)
    assert np.linalg.norm(w.data) < 0.05
    zero = Tensor(np.array([0.3]), requires_grad=True)
    gc.adam_step({"z": zero}, {"z": np.zeros(1)}, OptimizerState.init({"z": zero}))
    np.testing.assert_array_equal(zero.data, [0.3])


def test_adam_skips_frozen_and_requires_all_gradients():
    p = Tensor(np.ones(2), requires_grad=True)
    q = Tensor(np.ones(2), requires_grad=False)
    state = OptimizerState.init({"p": p, "q": q})
    assert set(state.m) == {"p"}
    gc.adam_step({"p": p, "q": q}, {"p": np.ones(2)}, state)
    np.testing.assert_array_equal(q.data, np.ones(2))
    with pytest.raises(GradientError):
        gc.adam_step({"p": p}, {}, state)
    with pytest.raises(ShapeError):
        gc.adam_step({"p": p}, {"p": np.ones(3)}, state)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    clipped, total = gc.clip_grad_norm(grads, 1.0)
    assert total == pytest.approx(5.0)
    norm = np.sqrt(sum(np.sum(g * g) for g in clipped.values()))
    assert norm == pytest.approx(1.0)
    same, _ = gc.clip_grad_norm(grads, 10.0)
    np.testing.assert_array_equal(same["a"], grads["a"])
