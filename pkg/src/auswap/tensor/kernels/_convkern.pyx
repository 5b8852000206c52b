# Compiled conv2d kernels: im2col/col2im in C loops, GEMM through BLAS.
# Same contract as numpy_backend (NCHW, symmetric zero padding, one stride).

import threading

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ctypedef cnp.float64_t f64

_scratch = threading.local()


def _workspace(key, Py_ssize_t rows, Py_ssize_t cols):
    # Reusable per-thread scratch; contents are garbage on entry.
    buffers = getattr(_scratch, "buffers", None)
    if buffers is None:
        buffers = _scratch.buffers = {}
    buf = buffers.get(key)
    cdef Py_ssize_t size = rows * cols
    if buf is None or buf.size < size:
        buf = buffers[key] = np.empty(size)
    return buf[:size].reshape(rows, cols)


cdef void _gemm_rm(char ta, char tb, int m, int n, int k,
                   f64* a, int a_cols, f64* b, int b_cols, f64* c) nogil:
    # Row-major C(m,n) = op(A) @ op(B) via column-major BLAS with swapped
    # operands; leading dims are the row-major column counts.
    cdef double alpha = 1.0
    cdef double beta = 0.0
    cdef int mm = n
    cdef int nn = m
    cdef int kk = k
    dgemm(&tb, &ta, &mm, &nn, &kk, &alpha, b, &b_cols, a, &a_cols, &beta, c, &mm)


cdef void _im2col(f64[:, :, :, ::1] x, f64[:, ::1] col,
                  int kh, int kw, int stride, int padding,
                  int ho, int wo) nogil:
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ni, ci, ki, kj, yo, xo, yi, xi, row
    cdef Py_ssize_t base
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ci * kh + ki) * kw + kj
                for ni in range(n):
                    for yo in range(ho):
                        yi = yo * stride + ki - padding
                        base = ((<Py_ssize_t> ni * ho) + yo) * wo
                        if yi < 0 or yi >= h:
                            for xo in range(wo):
                                col[row, base + xo] = 0.0
                            continue
                        for xo in range(wo):
                            xi = xo * stride + kj - padding
                            if 0 <= xi < w:
                                col[row, base + xo] = x[ni, ci, yi, xi]
                            else:
                                col[row, base + xo] = 0.0


cdef void _col2im_add(f64[:, ::1] col, f64[:, :, :, ::1] gx,
                      int kh, int kw, int stride, int padding,
                      int ho, int wo) nogil:
    cdef int n = gx.shape[0], c = gx.shape[1], h = gx.shape[2], w = gx.shape[3]
    cdef int ni, ci, ki, kj, yo, xo, yi, xi, row
    cdef Py_ssize_t base
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                row = (ci * kh + ki) * kw + kj
                for ni in range(n):
                    for yo in range(ho):
                        yi = yo * stride + ki - padding
                        if yi < 0 or yi >= h:
                            continue
                        base = ((<Py_ssize_t> ni * ho) + yo) * wo
                        for xo in range(wo):
                            xi = xo * stride + kj - padding
                            if 0 <= xi < w:
                                gx[ni, ci, yi, xi] += col[row, base + xo]


def out_size(int size, int k, int stride, int padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d_forward(cnp.ndarray x, cnp.ndarray w, int stride, int padding):
    cdef int n = x.shape[0], c_in = x.shape[1], h = x.shape[2], wdt = x.shape[3]
    cdef int c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = out_size(h, kh, stride, padding)
    cdef int wo = out_size(wdt, kw, stride, padding)
    cdef int ckk = c_in * kh * kw
    cdef int cols = n * ho * wo

    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    col_arr = _workspace("col", ckk, cols)
    outm = _workspace("out", c_out, cols)
    cdef f64[:, ::1] col = col_arr
    cdef f64[:, ::1] om = outm
    cdef f64[:, ::1] wm = w.reshape(c_out, ckk)
    cdef f64[:, :, :, ::1] xm = x
    with nogil:
        _im2col(xm, col, kh, kw, stride, padding, ho, wo)
        _gemm_rm(b'N', b'N', c_out, cols, ckk, &wm[0, 0], ckk, &col[0, 0], cols, &om[0, 0])
    return np.ascontiguousarray(outm.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_grad_weight(cnp.ndarray x, cnp.ndarray grad_out, w_shape, int stride, int padding):
    cdef int n = x.shape[0], c_in = x.shape[1], h = x.shape[2], wdt = x.shape[3]
    cdef int c_out = w_shape[0], kh = w_shape[2], kw = w_shape[3]
    cdef int ho = grad_out.shape[2], wo = grad_out.shape[3]
    cdef int ckk = c_in * kh * kw
    cdef int cols = n * ho * wo

    x = np.ascontiguousarray(x)
    col_arr = _workspace("col", ckk, cols)
    go = _workspace("go", c_out, cols)
    np.copyto(go.reshape(c_out, n, ho, wo), grad_out.transpose(1, 0, 2, 3))
    gw = np.empty((c_out, ckk))
    cdef f64[:, ::1] col = col_arr
    cdef f64[:, ::1] gom = go
    cdef f64[:, ::1] gwm = gw
    cdef f64[:, :, :, ::1] xm = x
    with nogil:
        _im2col(xm, col, kh, kw, stride, padding, ho, wo)
        _gemm_rm(b'N', b'T', c_out, ckk, cols, &gom[0, 0], cols, &col[0, 0], cols, &gwm[0, 0])
    return gw.reshape(w_shape)


def conv2d_grad_input(cnp.ndarray w, cnp.ndarray grad_out, x_shape, int stride, int padding):
    cdef int n = x_shape[0], c_in = x_shape[1], h = x_shape[2], wdt = x_shape[3]
    cdef int c_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = grad_out.shape[2], wo = grad_out.shape[3]
    cdef int ckk = c_in * kh * kw
    cdef int cols = n * ho * wo

    w = np.ascontiguousarray(w)
    go = _workspace("go", c_out, cols)
    np.copyto(go.reshape(c_out, n, ho, wo), grad_out.transpose(1, 0, 2, 3))
    colg = _workspace("colg", ckk, cols)
    gx = np.zeros((n, c_in, h, wdt))
    cdef f64[:, ::1] colgm = colg
    cdef f64[:, ::1] gom = go
    cdef f64[:, ::1] wm = w.reshape(c_out, ckk)
    cdef f64[:, :, :, ::1] gxm = gx
    with nogil:
        _gemm_rm(b'T', b'N', ckk, cols, c_out, &wm[0, 0], ckk, &gom[0, 0], cols, &colgm[0, 0])
        _col2im_add(colgm, gxm, kh, kw, stride, padding, ho, wo)
    return gx
