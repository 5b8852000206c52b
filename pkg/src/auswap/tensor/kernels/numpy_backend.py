"""Pure-numpy convolution kernels (fallback backend).

All three entry points implement plain 2-D cross-correlation in NCHW layout
with symmetric zero padding and a single stride for both axes, the same
contract as the compiled backend.  Forward and the weight gradient are one
im2col plus one GEMM; the input gradient scatters a GEMM result back with
one vectorized slice-add per kernel tap.
"""

import threading

import numpy as np
from numpy.lib.stride_tricks import as_strided

_scratch = threading.local()


def _workspace(key: str, shape) -> np.ndarray:
    """Reusable per-thread scratch buffer (contents are garbage)."""
    buffers = getattr(_scratch, "buffers", None)
    if buffers is None:
        buffers = _scratch.buffers = {}
    buf = buffers.get(key)
    size = int(np.prod(shape))
    if buf is None or buf.size < size:
        buf = buffers[key] = np.empty(size)
    return buf[:size].reshape(shape)


def out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col(x_pad, kh, kw, stride, ho, wo):
    n, c, _, _ = x_pad.shape
    sn, sc, sh, sw = x_pad.strides
    patches = as_strided(
        x_pad,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
    )
    # rows ordered (c, kh, kw) to line up with weight.reshape(c_out, -1)
    col = _workspace("col", (c, kh, kw, n, ho, wo))
    np.copyto(col, patches.transpose(1, 2, 3, 0, 4, 5))
    return col.reshape(c * kh * kw, n * ho * wo)


def _padded(x, padding):
    if padding == 0:
        return x
    n, c, h, w = x.shape
    xp = _workspace("pad", (n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, :padding, :] = 0.0
    xp[:, :, -padding:, :] = 0.0
    xp[:, :, padding:-padding, :padding] = 0.0
    xp[:, :, padding:-padding, -padding:] = 0.0
    xp[:, :, padding:-padding, padding:-padding] = x
    return xp


def conv2d_forward(x, w, stride, padding):
    n, c_in, h, wdt = x.shape
    c_out, _, kh, kw = w.shape
    ho = out_size(h, kh, stride, padding)
    wo = out_size(wdt, kw, stride, padding)
    col = _im2col(_padded(x, padding), kh, kw, stride, ho, wo)
    out = _workspace("out", (c_out, n * ho * wo))
    np.matmul(w.reshape(c_out, -1), col, out=out)
    return np.ascontiguousarray(out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_grad_weight(x, grad_out, w_shape, stride, padding):
    n, c_in, h, wdt = x.shape
    c_out, _, kh, kw = w_shape
    _, _, ho, wo = grad_out.shape
    col = _im2col(_padded(x, padding), kh, kw, stride, ho, wo)
    go = _workspace("go", (c_out, n * ho * wo))
    np.copyto(go.reshape(c_out, n, ho, wo), grad_out.transpose(1, 0, 2, 3))
    return (go @ col.T).reshape(w_shape)


def conv2d_grad_input(w, grad_out, x_shape, stride, padding):
    n, c_in, h, wdt = x_shape
    c_out, _, kh, kw = w.shape
    _, _, ho, wo = grad_out.shape
    go = _workspace("go", (c_out, n * ho * wo))
    np.copyto(go.reshape(c_out, n, ho, wo), grad_out.transpose(1, 0, 2, 3))
    colg = _workspace("colg", (c_in * kh * kw, n * ho * wo))
    np.matmul(w.reshape(c_out, -1).T, go, out=colg)
    colg = colg.reshape(c_in, kh, kw, n, ho, wo)
    gx_pad = np.zeros((n, c_in, h + 2 * padding, wdt + 2 * padding))
    for ki in range(kh):
        for kj in range(kw):
            gx_pad[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                colg[:, ki, kj].transpose(1, 0, 2, 3)
            )
    if padding:
        return np.ascontiguousarray(gx_pad[:, :, padding:-padding, padding:-padding])
    return gx_pad
