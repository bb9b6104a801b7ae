# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Same contract as ``_pykernels``: flat row-major float64 buffers, identical
loop/accumulation order, ``*_bwd`` kernels accumulate.
"""

from libc.math cimport exp, log, tanh, sqrt

NAME = "compiled"


def fill(Py_ssize_t n, double value, double[::1] x):
    cdef Py_ssize_t i
    for i in range(n):
        x[i] = value


def copy(Py_ssize_t n, double[::1] x, double[::1] y):
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = x[i]


def scale(Py_ssize_t n, double alpha, double[::1] x, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = alpha * x[i]


def axpy(Py_ssize_t n, double alpha, double[::1] x, double[::1] y):
    cdef Py_ssize_t i
    for i in range(n):
        y[i] += alpha * x[i]


def add_scalar(Py_ssize_t n, double alpha, double[::1] x):
    cdef Py_ssize_t i
    for i in range(n):
        x[i] += alpha


def add(Py_ssize_t n, double[::1] a, double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + b[i]


def sub(Py_ssize_t n, double[::1] a, double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] - b[i]


def mul(Py_ssize_t n, double[::1] a, double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * b[i]


def mul_acc(Py_ssize_t n, double[::1] a, double[::1] b, double[::1] out):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] += a[i] * b[i]


def total_sum(Py_ssize_t n, double[::1] x):
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += x[i]
    return s


cdef void _gemm(Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
                double[::1] a, double[::1] b, double[::1] c,
                bint ta, bint tb, bint acc) except *:
    cdef Py_ssize_t i, j, kk, aoff, boff, coff
    cdef double aik, s
    if not acc:
        for i in range(m * n):
            c[i] = 0.0
    if not ta and not tb:
        for i in range(m):
            for kk in range(k):
                aik = a[i * k + kk]
                if aik == 0.0:
                    continue
                boff = kk * n
                coff = i * n
                for j in range(n):
                    c[coff + j] += aik * b[boff + j]
    elif not ta and tb:
        for i in range(m):
            aoff = i * k
            coff = i * n
            for j in range(n):
                boff = j * k
                s = 0.0
                for kk in range(k):
                    s += a[aoff + kk] * b[boff + kk]
                c[coff + j] += s
    elif ta and not tb:
        for kk in range(k):
            aoff = kk * m
            boff = kk * n
            for i in range(m):
                aik = a[aoff + i]
                if aik == 0.0:
                    continue
                coff = i * n
                for j in range(n):
                    c[coff + j] += aik * b[boff + j]
    else:
        raise ValueError("gemm: ta and tb cannot both be set")


def gemm(Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
         double[::1] a, double[::1] b, double[::1] c,
         bint ta, bint tb, bint acc):
    _gemm(m, k, n, a, b, c, ta, tb, acc)


def bgemm(Py_ssize_t batch, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n,
          double[::1] a, double[::1] b, double[::1] c,
          bint ta, bint tb, bint acc):
    cdef Py_ssize_t p
    for p in range(batch):
        _gemm(m, k, n,
              a[p * m * k:(p + 1) * m * k],
              b[p * k * n:(p + 1) * k * n],
              c[p * m * n:(p + 1) * m * n],
              ta, tb, acc)


def relu_fwd(Py_ssize_t n, double[::1] x, double[::1] y):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        y[i] = v if v > 0.0 else 0.0


def relu_bwd(Py_ssize_t n, double[::1] y, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i
    for i in range(n):
        if y[i] > 0.0:
            dx[i] += dy[i]


def tanh_fwd(Py_ssize_t n, double[::1] x, double[::1] y):
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = tanh(x[i])


def tanh_bwd(Py_ssize_t n, double[::1] y, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] += dy[i] * (1.0 - y[i] * y[i])


def exp_fwd(Py_ssize_t n, double[::1] x, double[::1] y):
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = exp(x[i])


def exp_bwd(Py_ssize_t n, double[::1] y, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] += dy[i] * y[i]


def log_fwd(Py_ssize_t n, double[::1] x, double[::1] y):
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = log(x[i])


def log_bwd(Py_ssize_t n, double[::1] x, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i
    for i in range(n):
        dx[i] += dy[i] / x[i]


def softmax_rows_fwd(Py_ssize_t rows, Py_ssize_t cols, double[::1] x, double[::1] y):
    cdef Py_ssize_t r, j, off
    cdef double m, s, e, inv
    for r in range(rows):
        off = r * cols
        m = x[off]
        for j in range(1, cols):
            if x[off + j] > m:
                m = x[off + j]
        s = 0.0
        for j in range(cols):
            e = exp(x[off + j] - m)
            y[off + j] = e
            s += e
        inv = 1.0 / s
        for j in range(cols):
            y[off + j] *= inv


def softmax_rows_bwd(Py_ssize_t rows, Py_ssize_t cols,
                     double[::1] y, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t r, j, off
    cdef double dot
    for r in range(rows):
        off = r * cols
        dot = 0.0
        for j in range(cols):
            dot += dy[off + j] * y[off + j]
        for j in range(cols):
            dx[off + j] += (dy[off + j] - dot) * y[off + j]


def logsumexp_rows_fwd(Py_ssize_t rows, Py_ssize_t cols, double[::1] x, double[::1] y):
    cdef Py_ssize_t r, j, off
    cdef double m, s
    for r in range(rows):
        off = r * cols
        m = x[off]
        for j in range(1, cols):
            if x[off + j] > m:
                m = x[off + j]
        s = 0.0
        for j in range(cols):
            s += exp(x[off + j] - m)
        y[r] = m + log(s)


def logsumexp_rows_bwd(Py_ssize_t rows, Py_ssize_t cols,
                       double[::1] x, double[::1] lse, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t r, j, off
    cdef double g
    for r in range(rows):
        off = r * cols
        g = dy[r]
        for j in range(cols):
            dx[off + j] += g * exp(x[off + j] - lse[r])


def bias_add_fwd(Py_ssize_t rows, Py_ssize_t cols,
                 double[::1] x, double[::1] b, double[::1] y):
    cdef Py_ssize_t r, j, off
    for r in range(rows):
        off = r * cols
        for j in range(cols):
            y[off + j] = x[off + j] + b[j]


def sub_colvec_fwd(Py_ssize_t rows, Py_ssize_t cols,
                   double[::1] x, double[::1] col, double[::1] y):
    cdef Py_ssize_t r, j, off
    cdef double c
    for r in range(rows):
        off = r * cols
        c = col[r]
        for j in range(cols):
            y[off + j] = x[off + j] - c


def col_sum(Py_ssize_t rows, Py_ssize_t cols, double[::1] x, double[::1] out):
    cdef Py_ssize_t r, j, off
    for r in range(rows):
        off = r * cols
        for j in range(cols):
            out[j] += x[off + j]


def row_sum_fwd(Py_ssize_t rows, Py_ssize_t cols, double[::1] x, double[::1] y):
    cdef Py_ssize_t r, j, off
    cdef double s
    for r in range(rows):
        off = r * cols
        s = 0.0
        for j in range(cols):
            s += x[off + j]
        y[r] = s


def row_sum_bwd(Py_ssize_t rows, Py_ssize_t cols, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t r, j, off
    cdef double g
    for r in range(rows):
        off = r * cols
        g = dy[r]
        for j in range(cols):
            dx[off + j] += g


def gather_rows(Py_ssize_t nidx, Py_ssize_t cols,
                long long[::1] idx, double[::1] x, double[::1] y):
    cdef Py_ssize_t i, j, src, dst
    for i in range(nidx):
        src = idx[i] * cols
        dst = i * cols
        for j in range(cols):
            y[dst + j] = x[src + j]


def scatter_add_rows(Py_ssize_t nidx, Py_ssize_t cols,
                     long long[::1] idx, double[::1] dy, double[::1] dx):
    cdef Py_ssize_t i, j, src, dst
    for i in range(nidx):
        dst = idx[i] * cols
        src = i * cols
        for j in range(cols):
            dx[dst + j] += dy[src + j]


def pack_cols(Py_ssize_t rows, Py_ssize_t ca, Py_ssize_t cb,
              double[::1] a, double[::1] b, double[::1] out):
    cdef Py_ssize_t r, j, off
    for r in range(rows):
        off = r * (ca + cb)
        for j in range(ca):
            out[off + j] = a[r * ca + j]
        for j in range(cb):
            out[off + ca + j] = b[r * cb + j]


def unpack_cols_acc(Py_ssize_t rows, Py_ssize_t ca, Py_ssize_t cb,
                    double[::1] dout, double[::1] da, double[::1] db):
    cdef Py_ssize_t r, j, off
    for r in range(rows):
        off = r * (ca + cb)
        for j in range(ca):
            da[r * ca + j] += dout[off + j]
        for j in range(cb):
            db[r * cb + j] += dout[off + ca + j]


def split_heads(Py_ssize_t bsz, Py_ssize_t length, Py_ssize_t heads, Py_ssize_t dh,
                double[::1] x, double[::1] y):
    cdef Py_ssize_t b, h, t, j, src, dst
    for b in range(bsz):
        for h in range(heads):
            for t in range(length):
                src = (b * length + t) * heads * dh + h * dh
                dst = ((b * heads + h) * length + t) * dh
                for j in range(dh):
                    y[dst + j] = x[src + j]


def merge_heads(Py_ssize_t bsz, Py_ssize_t length, Py_ssize_t heads, Py_ssize_t dh,
                double[::1] x, double[::1] y):
    cdef Py_ssize_t b, h, t, j, src, dst
    for b in range(bsz):
        for h in range(heads):
            for t in range(length):
                src = ((b * heads + h) * length + t) * dh
                dst = (b * length + t) * heads * dh + h * dh
                for j in range(dh):
                    y[dst + j] = x[src + j]


def transpose3(Py_ssize_t batch, Py_ssize_t r, Py_ssize_t c,
               double[::1] x, double[::1] y):
    cdef Py_ssize_t p, i, j, off
    for p in range(batch):
        off = p * r * c
        for i in range(r):
            for j in range(c):
                y[off + j * r + i] = x[off + i * c + j]


def adam_step(Py_ssize_t n, double[::1] p, double[::1] g,
              double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps,
              double bc1, double bc2):
    cdef Py_ssize_t i
    cdef double gi, mhat, vhat
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
