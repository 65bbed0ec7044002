import numpy as np
import pytest

from vtalign import autodiff as ad


def numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar-valued function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return g


def check_op(build, x0: np.ndarray, tol: float = 1e-7):
    """Backprop through `build` (Tensor -> scalar Tensor) vs central differences."""
    t = ad.Tensor(x0.copy(), requires_grad=True)
    out = build(t)
    out.backward()

    def value(x):
        return float(build(ad.Tensor(x.copy(), requires_grad=True)).value)

    fd = numeric_grad(value, x0.copy())
    assert np.allclose(t.grad, fd, atol=tol, rtol=1e-5), (t.grad, fd)


def test_add_mul_with_broadcasting(rng):
    x = rng.standard_normal((3, 4))
    b = ad.Tensor(rng.standard_normal(4))
    check_op(lambda t: ((t + b) * (t * 2.0 - 1.0)).sum(), x)


def test_division(rng):
    x = rng.uniform(0.5, 2.0, size=(3, 3))
    c = ad.Tensor(rng.uniform(0.5, 2.0, size=(3, 3)))
    check_op(lambda t: (c / t + t / 3.0).sum(), x)


def test_matmul_2d(rng):
    x = rng.standard_normal((3, 4))
    w = ad.Tensor(rng.standard_normal((4, 2)))
    check_op(lambda t: (t @ w).sum(), x)


def test_matmul_batched_broadcast(rng):
    # (M, D) @ (B, D, L): the unbatched side accumulates over the batch
    x = rng.standard_normal((2, 4))
    k = ad.Tensor(rng.standard_normal((3, 4, 5)))
    check_op(lambda t: (t @ k).sum(), x)
    y = rng.standard_normal((3, 4, 5))
    q = ad.Tensor(rng.standard_normal((2, 4)))
    check_op(lambda t: ((q @ t) * 0.7).sum(), y)


def test_elementwise_chain(rng):
    x = rng.uniform(0.2, 1.5, size=(4,))
    check_op(lambda t: (t.exp() + t.log() + t.sqrt() + t.tanh()).sum(), x)


def test_relu_away_from_kink(rng):
    x = rng.standard_normal(10)
    x[np.abs(x) < 0.1] = 0.5
    check_op(lambda t: (t.relu() * 3.0).sum(), x)


def test_sum_axis_keepdims(rng):
    x = rng.standard_normal((3, 4, 2))
    check_op(lambda t: (t.sum(axis=1, keepdims=True) * 2.0).sum(), x)
    check_op(lambda t: t.sum(), x)
    check_op(lambda t: t.mean(axis=0).sum(), x)


def test_max_with_unique_argmax(rng):
    x = rng.standard_normal((3, 5))
    check_op(lambda t: t.max(axis=1).sum(), x)


def test_max_splits_ties():
    x = np.array([[1.0, 1.0, 0.0]])
    t = ad.Tensor(x, requires_grad=True)
    t.max(axis=1).sum().backward()
    assert np.allclose(t.grad, [[0.5, 0.5, 0.0]])


def test_softmax_backward(rng):
    x = rng.standard_normal((2, 5))
    w = ad.Tensor(rng.standard_normal(5))
    check_op(lambda t: (t.softmax(axis=-1) * w).sum(), x)


def test_logsumexp_backward_and_stability(rng):
    x = rng.standard_normal((3, 4))
    check_op(lambda t: t.logsumexp(axis=1).sum(), x)
    big = ad.Tensor(np.array([[1e4, -1e4, 3.0]]), requires_grad=True)
    out = big.logsumexp(axis=1)
    assert np.isfinite(out.value).all() and abs(out.value[0] - 1e4) < 1e-9


def test_concat_and_stack_columns(rng):
    x = rng.standard_normal((3, 2))
    other = ad.Tensor(rng.standard_normal((2, 2)))
    check_op(lambda t: (ad.concat([t, other], axis=0) * 1.5).sum(), x)
    y = rng.standard_normal(4)
    check_op(lambda t: (ad.stack_columns([t * 2.0, t + 1.0]) * 0.5).sum(), y)


def test_reshape_swap_last(rng):
    x = rng.standard_normal((2, 6))
    check_op(lambda t: (t.reshape(3, 4).swap_last() * 2.0).sum(), x)


def test_diamond_reuse_accumulates(rng):
    # the same node feeds two branches; adjoints must add
    x = rng.standard_normal(5)
    check_op(lambda t: ((t * 2.0) + (t * t)).sum(), x)


def test_constant_subgraphs_fold():
    c = ad.Tensor(np.ones(3)) + ad.Tensor(np.ones(3))
    assert not c.requires_grad and c._parents == ()
    p = ad.Tensor(np.ones(3), requires_grad=True)
    out = (p * c).sum()
    assert out.requires_grad
    out.backward()
    assert np.allclose(p.grad, 2.0)


def test_backward_requires_tracked_scalar(rng):
    c = ad.Tensor(rng.standard_normal(3))
    with pytest.raises(ValueError):
        c.sum().backward()
    p = ad.Tensor(rng.standard_normal(3), requires_grad=True)
    with pytest.raises(ValueError):
        (p * 2.0).backward()  # non-scalar without explicit seed


def test_grad_accumulates_across_backward_structures(rng):
    p = ad.Tensor(rng.standard_normal(4), requires_grad=True)
    loss = (p * 3.0).sum()
    loss.backward()
    assert np.allclose(p.grad, 3.0)
