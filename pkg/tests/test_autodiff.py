"""Finite-difference checks for the reverse-mode engine."""

import numpy as np
import pytest

from mdmp import autodiff as ad


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def check_grads(build, shapes, seed, rtol=1e-6, atol=1e-8):
    """Compare backward() gradients against central differences.

    ``build`` maps a list of Tensors to a scalar Tensor; ``shapes`` gives
    one shape per input.
    """
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(tensors).backward()
    for k, (arr, t) in enumerate(zip(arrays, tensors)):
        def f(x, k=k):
            inputs = [ad.Tensor(a) for a in arrays]
            inputs[k] = ad.Tensor(x)
            return build(inputs).item()

        expected = numeric_grad(f, arr.copy())
        np.testing.assert_allclose(t.grad, expected, rtol=rtol, atol=atol)


def test_add_mul_broadcast():
    check_grads(
        lambda ts: ((ts[0] + ts[1]) * ts[2]).sum(),
        [(3, 4), (4,), (3, 1)],
        seed=0,
    )


def test_sub_div():
    check_grads(
        lambda ts: (ts[0] / (ts[1] * ts[1] + 2.0) - ts[1]).sum(),
        [(5,), (5,)],
        seed=1,
    )


def test_matmul_broadcast_batches():
    # (B, N, K) @ (K, M) exercises the unbroadcast path for the weight.
    check_grads(
        lambda ts: (ts[0] @ ts[1]).sum(),
        [(2, 3, 4), (4, 5)],
        seed=2,
    )


def test_matmul_batched_both():
    check_grads(
        lambda ts: ((ts[0] @ ts[1]) * ts[2]).sum(),
        [(2, 3, 4), (2, 4, 3), (2, 3, 3)],
        seed=3,
    )


def test_exp_log_square():
    check_grads(
        lambda ts: (ad.texp(ts[0]) + ad.tlog(ad.square(ts[0]) + 1.5)).sum(),
        [(6,)],
        seed=4,
    )


def test_reductions_axis_keepdims():
    check_grads(
        lambda ts: (ts[0] - ts[0].mean(axis=-1, keepdims=True)).sum(),
        [(3, 5)],
        seed=5,
    )
    check_grads(
        lambda ts: ad.tsum(ts[0], axis=0).mean(),
        [(4, 3)],
        seed=6,
    )


def test_reshape_transpose_getitem_concat():
    def build(ts):
        a = ts[0].reshape(6, 2)
        b = ad.transpose(ts[1], (1, 0))
        c = ad.concat([a, b], axis=0)
        return (c[2:7] * c[2:7]).sum()

    check_grads(build, [(3, 4), (2, 6)], seed=7)


def test_getitem_same_source_twice_accumulates():
    x = ad.Tensor(np.arange(4.0), requires_grad=True)
    y = (x[1:3] + x[1:3]).sum()
    y.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 2.0, 2.0, 0.0])


def test_gelu():
    check_grads(lambda ts: ad.gelu(ts[0]).sum(), [(7,)], seed=8)


def test_gelu_matches_closed_form():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    from scipy.special import erf

    expected = 0.5 * x * (1 + erf(x / np.sqrt(2)))
    np.testing.assert_allclose(ad.gelu(ad.Tensor(x)).data, expected, rtol=1e-12)


def test_softmax():
    check_grads(
        lambda ts: (ad.softmax(ts[0], axis=-1) * ts[1]).sum(),
        [(2, 5), (2, 5)],
        seed=9,
    )


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(10)
    y = ad.softmax(ad.Tensor(rng.standard_normal((4, 6)))).data
    np.testing.assert_allclose(y.sum(axis=-1), np.ones(4), rtol=1e-12)


def test_layernorm():
    check_grads(
        lambda ts: (ad.layernorm(ts[0], ts[1], ts[2]) * ts[3]).sum(),
        [(2, 3, 8), (8,), (8,), (2, 3, 8)],
        seed=11,
        rtol=1e-5,
        atol=1e-7,
    )


def test_clip_gradient_masks_outside():
    x = ad.Tensor(np.array([-1.0, 0.25, 0.5, 1.5]), requires_grad=True)
    ad.clip(x, 0.0, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0, 0.0])


def test_detach_blocks_gradient():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = (x.detach() * x).sum()
    y.backward()
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_grad_accumulates_across_backward_calls():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    ad.square(x).sum().backward()
    ad.square(x).sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_shared_subexpression_counted_once_per_use():
    x = ad.Tensor(np.array([3.0]), requires_grad=True)
    y = ad.square(x)  # y = x^2
    z = (y + y).sum()  # z = 2 x^2, dz/dx = 4x = 12
    z.backward()
    np.testing.assert_allclose(x.grad, [12.0])
