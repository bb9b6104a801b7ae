"""Pure-Python kernel backend.

Reference implementation of the dense kernels behind the tensor engine.
Loop order mirrors the compiled backend so both produce identical floats.
Buffers are flat ``array('d')`` (row-major); index buffers are ``array('q')``.
All ``*_bwd`` kernels accumulate into their gradient output.
"""

import math

NAME = "python"


def fill(n, value, x):
    for i in range(n):
        x[i] = value


def copy(n, x, y):
    y[:n] = x[:n]


def scale(n, alpha, x, out):
    for i in range(n):
        out[i] = alpha * x[i]


def axpy(n, alpha, x, y):
    for i in range(n):
        y[i] += alpha * x[i]


def add_scalar(n, alpha, x):
    for i in range(n):
        x[i] += alpha


def add(n, a, b, out):
    for i in range(n):
        out[i] = a[i] + b[i]


def sub(n, a, b, out):
    for i in range(n):
        out[i] = a[i] - b[i]


def mul(n, a, b, out):
    for i in range(n):
        out[i] = a[i] * b[i]


def mul_acc(n, a, b, out):
    for i in range(n):
        out[i] += a[i] * b[i]


def total_sum(n, x):
    s = 0.0
    for i in range(n):
        s += x[i]
    return s


def gemm(m, k, n, a, b, c, ta, tb, acc):
    """c[m,n] (+)= op(a) @ op(b); transpose combination (ta, tb) != (1, 1)."""
    if not acc:
        fill(m * n, 0.0, c)
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
                aki = a[aoff + i]
                if aki == 0.0:
                    continue
                coff = i * n
                for j in range(n):
                    c[coff + j] += aki * b[boff + j]
    else:
        raise ValueError("gemm: ta and tb cannot both be set")


def bgemm(batch, m, k, n, a, b, c, ta, tb, acc):
    """Batched gemm over contiguous (m*k), (k*n), (m*n) slices."""
    # memoryview slices alias the buffers; plain array slices would copy
    av, bv, cv = memoryview(a), memoryview(b), memoryview(c)
    for p in range(batch):
        gemm(m, k, n,
             av[p * m * k:(p + 1) * m * k],
             bv[p * k * n:(p + 1) * k * n],
             cv[p * m * n:(p + 1) * m * n],
             ta, tb, acc)


def relu_fwd(n, x, y):
    for i in range(n):
        v = x[i]
        y[i] = v if v > 0.0 else 0.0


def relu_bwd(n, y, dy, dx):
    for i in range(n):
        if y[i] > 0.0:
            dx[i] += dy[i]


def tanh_fwd(n, x, y):
    for i in range(n):
        y[i] = math.tanh(x[i])


def tanh_bwd(n, y, dy, dx):
    for i in range(n):
        dx[i] += dy[i] * (1.0 - y[i] * y[i])


def exp_fwd(n, x, y):
    for i in range(n):
        y[i] = math.exp(x[i])


def exp_bwd(n, y, dy, dx):
    for i in range(n):
        dx[i] += dy[i] * y[i]


def log_fwd(n, x, y):
    for i in range(n):
        y[i] = math.log(x[i])


def log_bwd(n, x, dy, dx):
    for i in range(n):
        dx[i] += dy[i] / x[i]


def softmax_rows_fwd(rows, cols, x, y):
    for r in range(rows):
        off = r * cols
        m = x[off]
        for j in range(1, cols):
            if x[off + j] > m:
                m = x[off + j]
        s = 0.0
        for j in range(cols):
            e = math.exp(x[off + j] - m)
            y[off + j] = e
            s += e
        inv = 1.0 / s
        for j in range(cols):
            y[off + j] *= inv


def softmax_rows_bwd(rows, cols, y, dy, dx):
    for r in range(rows):
        off = r * cols
        dot = 0.0
        for j in range(cols):
            dot += dy[off + j] * y[off + j]
        for j in range(cols):
            dx[off + j] += (dy[off + j] - dot) * y[off + j]


def logsumexp_rows_fwd(rows, cols, x, y):
    for r in range(rows):
        off = r * cols
        m = x[off]
        for j in range(1, cols):
            if x[off + j] > m:
                m = x[off + j]
        s = 0.0
        for j in range(cols):
            s += math.exp(x[off + j] - m)
        y[r] = m + math.log(s)


def logsumexp_rows_bwd(rows, cols, x, lse, dy, dx):
    for r in range(rows):
        off = r * cols
        g = dy[r]
        for j in range(cols):
            dx[off + j] += g * math.exp(x[off + j] - lse[r])


def bias_add_fwd(rows, cols, x, b, y):
    for r in range(rows):
        off = r * cols
        for j in range(cols):
            y[off + j] = x[off + j] + b[j]


def sub_colvec_fwd(rows, cols, x, col, y):
    for r in range(rows):
        off = r * cols
        c = col[r]
        for j in range(cols):
            y[off + j] = x[off + j] - c


def col_sum(rows, cols, x, out):
    for r in range(rows):
        off = r * cols
        for j in range(cols):
            out[j] += x[off + j]


def row_sum_fwd(rows, cols, x, y):
    for r in range(rows):
        off = r * cols
        s = 0.0
        for j in range(cols):
            s += x[off + j]
        y[r] = s


def row_sum_bwd(rows, cols, dy, dx):
    for r in range(rows):
        off = r * cols
        g = dy[r]
        for j in range(cols):
            dx[off + j] += g


def gather_rows(nidx, cols, idx, x, y):
    for i in range(nidx):
        src = idx[i] * cols
        dst = i * cols
        for j in range(cols):
            y[dst + j] = x[src + j]


def scatter_add_rows(nidx, cols, idx, dy, dx):
    for i in range(nidx):
        dst = idx[i] * cols
        src = i * cols
        for j in range(cols):
            dx[dst + j] += dy[src + j]


def pack_cols(rows, ca, cb, a, b, out):
    for r in range(rows):
        off = r * (ca + cb)
        for j in range(ca):
            out[off + j] = a[r * ca + j]
        for j in range(cb):
            out[off + ca + j] = b[r * cb + j]


def unpack_cols_acc(rows, ca, cb, dout, da, db):
    for r in range(rows):
        off = r * (ca + cb)
        for j in range(ca):
            da[r * ca + j] += dout[off + j]
        for j in range(cb):
            db[r * cb + j] += dout[off + ca + j]


def split_heads(bsz, length, heads, dh, x, y):
    """(B, L, H*dh) row-major -> (B*H, L, dh)."""
    for b in range(bsz):
        for h in range(heads):
            for t in range(length):
                src = (b * length + t) * heads * dh + h * dh
                dst = ((b * heads + h) * length + t) * dh
                for j in range(dh):
                    y[dst + j] = x[src + j]


def merge_heads(bsz, length, heads, dh, x, y):
    """(B*H, L, dh) -> (B, L, H*dh); inverse of split_heads."""
    for b in range(bsz):
        for h in range(heads):
            for t in range(length):
                src = ((b * heads + h) * length + t) * dh
                dst = (b * length + t) * heads * dh + h * dh
                for j in range(dh):
                    y[dst + j] = x[src + j]


def transpose3(batch, r, c, x, y):
    """(N, r, c) -> (N, c, r) on the last two axes."""
    for p in range(batch):
        off = p * r * c
        for i in range(r):
            for j in range(c):
                y[off + j * r + i] = x[off + i * c + j]


def adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One Adam update; bc1/bc2 are the bias-correction factors 1-beta^t."""
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (math.sqrt(vhat) + eps)
