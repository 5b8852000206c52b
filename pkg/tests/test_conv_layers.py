"""conv2d against a naive 6-loop oracle, plus every layer-suite kind."""

import numpy as np
import pytest

from auswap.tensor import Tensor, check_gradients, core
from auswap.tensor import kernels
from auswap.tensor.kernels import numpy_backend
from auswap.tensor.layers import build_layer_check, layer_check_registry


def naive_conv2d(x, w, stride, padding):
    """Direct six-loop cross-correlation (independent oracle)."""
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, c_out, ho, wo))
    for ni in range(n):
        for co in range(c_out):
            for ci in range(c_in):
                for yo in range(ho):
                    for xo in range(wo):
                        patch = xp[ni, ci, yo * stride:yo * stride + kh,
                                   xo * stride:xo * stride + kw]
                        out[ni, co, yo, xo] += float((patch * w[co, ci]).sum())
    return out


def test_identity_kernel_reproduces_input():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    y = core.conv2d(Tensor(x), Tensor(w), stride=1, padding=1)
    np.testing.assert_array_equal(y.data, x)


def test_strided_output_shape():
    x = Tensor(np.zeros((1, 1, 4, 4)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    assert core.conv2d(x, w, stride=2, padding=1).shape == (1, 1, 2, 2)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (2, 0)])
@pytest.mark.parametrize("impl", ["active", "numpy"])
def test_conv_matches_loop_oracle(stride, padding, impl):
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    backend = kernels if impl == "active" else numpy_backend
    got = backend.conv2d_forward(x, w, stride, padding)
    want = naive_conv2d(x, w, stride, padding)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_conv_kernel4_matches_loop_oracle():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 2, 9, 9))
    w = rng.standard_normal((3, 2, 4, 4))
    np.testing.assert_allclose(kernels.conv2d_forward(x, w, 2, 1),
                               naive_conv2d(x, w, 2, 1), rtol=0, atol=1e-12)


def test_conv_backward_matches_numpy_backend():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    g = rng.standard_normal((2, 4, 4, 4))
    for fn in ("conv2d_grad_input", "conv2d_grad_weight"):
        a = getattr(kernels, fn)(w if "input" in fn else x, g,
                                 x.shape if "input" in fn else w.shape, 2, 1)
        b = getattr(numpy_backend, fn)(w if "input" in fn else x, g,
                                       x.shape if "input" in fn else w.shape, 2, 1)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-11)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ValueError, match="channel"):
        core.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv_zero_size_output_rejected():
    with pytest.raises(ValueError, match="zero-size"):
        core.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))),
                    stride=1, padding=0)


def test_global_avg_pool_of_ones():
    y = core.global_avg_pool(Tensor(np.ones((1, 2, 4, 4))))
    np.testing.assert_array_equal(y.data, [[1.0, 1.0]])


def test_softmax_uniform():
    y = core.softmax(Tensor([[0.0, 0.0, 0.0]]), axis=1)
    np.testing.assert_allclose(y.data, [[1 / 3] * 3], atol=1e-15)


def test_every_layer_kind_passes_gradient_check():
    rng = np.random.default_rng(2024)
    for kind in sorted(layer_check_registry(rng)):
        fn, holder = build_layer_check(kind, rng)
        report = check_gradients(fn, list(holder.named_parameters()), h=1e-5)
        assert report.max_rel_err <= 1e-6, f"{kind}: {report}"


def test_unknown_layer_kind_rejected():
    with pytest.raises(ValueError, match="unknown layer kind"):
        build_layer_check("deformable_conv", np.random.default_rng(0))
