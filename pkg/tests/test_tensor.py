"""Tests for the reverse-mode autodiff engine."""

import numpy as np
import pytest

from voicelink.nn.tensor import ConsumedCacheError, Tensor


def _gradcheck(build, shapes, seeds=(0,), eps=1e-6, tol=1e-6):
    """Compare analytic gradients of scalar build(*tensors) with central
    finite differences for every input element."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal(s) * 0.5 + 0.7 for s in shapes]
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = build(*tensors)
        out.backward()
        for i, (a, t) in enumerate(zip(arrays, tensors)):
            for idx in np.ndindex(a.shape):
                def feval(delta):
                    mod = [x.copy() for x in arrays]
                    mod[i][idx] += delta
                    return float(build(*[Tensor(x) for x in mod]).data)
                fd = (feval(eps) - feval(-eps)) / (2 * eps)
                an = t.grad[idx] if t.grad.shape else float(t.grad)
                assert abs(fd - an) <= tol * max(1.0, abs(fd)), f"input {i} at {idx}"


def test_add_mul_grad():
    _gradcheck(lambda a, b: ((a + b) * a).sum(), [(3, 4), (3, 4)])


def test_broadcast_grad():
    _gradcheck(lambda a, b: (a * b).sum(), [(3, 4), (4,)])


def test_sub_div_grad():
    _gradcheck(lambda a, b: ((a - b) / b).sum(), [(5,), (5,)])


def test_pow_sqrt_log_grad():
    _gradcheck(lambda a: ((a ** 3).sqrt().log()).sum(), [(6,)])


def test_tanh_softplus_grad():
    _gradcheck(lambda a: (a.tanh() + a.softplus()).mean(), [(4, 5)])


def test_reshape_slice_grad():
    _gradcheck(lambda a: a.reshape(2, 6).slice((0, slice(1, 4))).sum(), [(12,)])


def test_conv1d_grad():
    _gradcheck(lambda x, w, b: x.conv1d(w, b, stride=2, padding=1).sum(),
               [(2, 11), (3, 2, 4), (3,)], tol=1e-5)


def test_conv1d_transpose_grad():
    _gradcheck(lambda x, w: x.conv1d_transpose(w, stride=3).sum(),
               [(2, 5), (2, 3, 4)], tol=1e-5)


def test_conv1d_matches_direct_computation():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 10))
    w = rng.standard_normal((3, 2, 4))
    y = Tensor(x).conv1d(Tensor(w), stride=2).data
    # Direct oracle from the definition.
    t_out = (10 - 4) // 2 + 1
    expect = np.zeros((3, t_out))
    for o in range(3):
        for t in range(t_out):
            expect[o, t] = np.sum(w[o] * x[:, 2 * t:2 * t + 4])
    assert np.allclose(y, expect, atol=1e-12)


def test_conv1d_transpose_is_adjoint():
    # <conv(x), y> == <x, conv_transpose(y)> for matching weights.
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 12))
    w = rng.standard_normal((3, 2, 4))
    y = rng.standard_normal((3, (12 - 4) // 2 + 1))
    fwd = Tensor(x).conv1d(Tensor(w), stride=2).data
    wt = np.transpose(w, (0, 1, 2))  # (Cout, Cin, K) layout for transpose input
    back = Tensor(y).conv1d_transpose(Tensor(wt), stride=2).data
    assert np.allclose(np.sum(fwd * y), np.sum(x * back), atol=1e-10)


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2).backward()


def test_grad_accumulates_over_reuse():
    a = Tensor(np.array(2.0), requires_grad=True)
    out = a * a + a  # d/da = 2a + 1 = 5
    out.backward()
    assert float(a.grad) == pytest.approx(5.0)


def test_consumed_graph_rejected():
    a = Tensor(np.array(1.5), requires_grad=True)
    out = (a * a).sum()
    out.backward()
    with pytest.raises(ConsumedCacheError):
        out.backward()


def test_consumed_intermediate_rejected():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    mid = a * 2
    (mid.sum()).backward()
    with pytest.raises(ConsumedCacheError):
        (mid * 3).sum().backward()


def test_no_grad_tracking_without_requires_grad():
    a = Tensor(np.ones(3))
    out = (a * 2).sum()
    assert not out.requires_grad
    assert out._backward is None


def test_float64_everywhere():
    t = Tensor(np.ones(3, dtype=np.float32))
    assert t.data.dtype == np.float64
