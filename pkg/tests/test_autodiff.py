import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peercl.autodiff import (
    GraphError,
    ShapeError,
    Tensor,
    backward,
    detach,
    log_softmax,
    matmul,
    no_grad,
    relu,
    softmax,
)
from peercl.gradcheck import CheckCase, run_case


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((eye @ m).data, m.data)


def test_matmul_projector():
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    m = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal((p @ m).data, [[5.0, 6.0], [0.0, 0.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    err = run_case(CheckCase([a, b], lambda: (a @ b).sum()))
    assert err < 1e-6


def test_softmax_symmetric_pair():
    out = softmax(Tensor([[1.0, 1.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_extreme_logits_no_overflow():
    out = softmax(Tensor([[1000.0, 0.0]]))
    assert abs(out.data[0, 0] - 1.0) < 1e-12
    assert out.data[0, 1] < 1e-12
    assert np.isfinite(out.data).all()


def test_softmax_temperature_two():
    # direct evaluation: softmax((2,0)/2) = (e/(e+1), 1/(e+1))
    out = softmax(Tensor([[2.0, 0.0]]), temperature=2.0)
    expected = math.e / (math.e + 1.0)
    assert abs(out.data[0, 0] - expected) < 1e-12


def test_softmax_temperature_equals_prescaled_logits():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 7)) * 3
    for tau in (0.5, 1.0, 3.0, 7.3):
        a = softmax(Tensor(z), temperature=tau).data
        b = softmax(Tensor(z / tau), temperature=1.0).data
        assert np.array_equal(a, b)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        softmax(Tensor([[1.0, 2.0]]), temperature=0.0)
    with pytest.raises(ValueError):
        log_softmax(Tensor([[1.0, 2.0]]), temperature=-1.0)


def test_relu_values():
    out = relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_mean_value_and_gradient():
    x = Tensor([2.0, 4.0], requires_grad=True)
    m = x.mean()
    assert m.item() == 3.0
    backward(m)
    assert np.array_equal(x.grad, [0.5, 0.5])


def test_backward_sum_gives_ones():
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(w.sum())
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_zero_scaled_loss_gives_zero_grad():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * w).sum() * 0.0
    backward(loss)
    assert np.array_equal(w.grad, [0.0, 0.0])


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        backward(w * 2.0)


def test_backward_twice_raises():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * w).sum()
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_backward_on_shared_consumed_subgraph_raises():
    w = Tensor([1.0, 2.0], requires_grad=True)
    mid = w * 3.0
    backward(mid.sum())
    with pytest.raises(GraphError):
        backward(mid.mean())


def test_composite_mlp_loss_gradient():
    rng = np.random.default_rng(11)
    w1 = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)) + 0.5)

    def fn():
        h = relu(x @ w1)
        return (softmax(h @ w2) * Tensor(np.ones((5, 3)) / 5)).sum()

    err = run_case(CheckCase([w1, w2], fn))
    assert err < 1e-6


def test_detach_values_equal_and_blocks_grad():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    d = detach(x)
    assert np.array_equal(d.data, x.data)
    assert not d.requires_grad
    loss = (d * d).sum()
    assert not loss.requires_grad  # nothing to backprop through
    assert x.grad is None


def test_detached_teacher_gets_zero_gradient():
    rng = np.random.default_rng(5)
    student = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    teacher = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    loss = ((log_softmax(student) - log_softmax(teacher.detach())) * Tensor(np.ones((3, 4)))).sum()
    backward(loss)
    assert teacher.grad is None
    assert student.grad is not None


def test_no_grad_blocks_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        out = (x * x).sum()
    assert not out.requires_grad


def test_forward_determinism():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(6, 9))
    first = softmax(Tensor(z)).data
    second = softmax(Tensor(z)).data
    assert np.array_equal(first, second)


@settings(deadline=None, max_examples=50)
@given(
    st.lists(
        st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=6),
        min_size=1,
        max_size=5,
    ).filter(lambda rows: len({len(r) for r in rows}) == 1)
)
def test_softmax_rows_are_distributions(rows):
    p = softmax(Tensor(rows)).data
    assert np.all(p >= 0.0) and np.all(p <= 1.0)
    assert np.abs(p.sum(axis=-1) - 1.0).max() < 1e-12


@settings(deadline=None, max_examples=50)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_forward_ops_stay_finite(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(scale=100.0, size=(3, 4)))
    b = Tensor(rng.normal(scale=100.0, size=(3, 4)))
    outs = [
        (a + b).data,
        (a - b).data,
        (a * b).data,
        relu(a).data,
        a.mean().data,
        a.sum(axis=1).data,
        softmax(a).data,
        log_softmax(a).data,
        (a @ Tensor(rng.normal(size=(4, 2)))).data,
    ]
    for out in outs:
        assert np.isfinite(out).all()
