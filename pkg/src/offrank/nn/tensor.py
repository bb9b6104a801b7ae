"""Flat-buffer tensors with tape-based reverse-mode autodiff.

Buffers are row-major ``array('d')``, shapes plain tuples.  Ops record
backward closures on the active tape; gradients are allocated lazily and
always accumulated, so a tensor used twice gets both contributions.  The
heavy loops live in the kernel backend (compiled when available).
"""
from __future__ import annotations

from array import array
from contextlib import contextmanager

import numpy as np

from .backend import kernels as K


def _size(shape) -> int:
    n = 1
    for s in shape:
        n *= s
    return n


class Tensor:
    __slots__ = ("shape", "data", "grad", "requires_grad")

    def __init__(self, shape, data=None, requires_grad=False):
        self.shape = tuple(int(s) for s in shape)
        n = _size(self.shape)
        if data is None:
            data = array("d", bytes(8 * n))
        if len(data) != n:
            raise ValueError(f"buffer length {len(data)} does not match shape {self.shape}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def size(self) -> int:
        return len(self.data)

    def item(self) -> float:
        if len(self.data) != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return self.data[0]

    def ensure_grad(self):
        if self.grad is None:
            self.grad = array("d", bytes(8 * len(self.data)))
        return self.grad

    def zero_grad(self):
        if self.grad is not None:
            K.fill(len(self.grad), 0.0, self.grad)

    def to_numpy(self):
        return np.frombuffer(self.data, dtype=np.float64).reshape(self.shape).copy()

    @staticmethod
    def from_numpy(arr, requires_grad=False) -> "Tensor":
        a = np.ascontiguousarray(arr, dtype=np.float64)
        buf = array("d")
        buf.frombytes(a.tobytes())
        return Tensor(a.shape, buf, requires_grad=requires_grad)

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(shape, requires_grad=requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered list of backward closures, run in reverse on backward()."""

    def __init__(self):
        self.nodes = []

    def backward(self, root: Tensor):
        if root.size != 1:
            raise ValueError("backward() root must be a scalar tensor")
        g = root.ensure_grad()
        g[0] = 1.0
        for fn in reversed(self.nodes):
            fn()


_ACTIVE: Tape | None = None


@contextmanager
def tape_scope(tape: Tape):
    global _ACTIVE
    prev = _ACTIVE
    _ACTIVE = tape
    try:
        yield tape
    finally:
        _ACTIVE = prev


def active_tape() -> Tape | None:
    return _ACTIVE


def _record(out: Tensor, inputs, fn) -> Tensor:
    if _ACTIVE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE.nodes.append(fn)
    return out


def _same_shape(a: Tensor, b: Tensor, opname: str):
    if a.shape != b.shape:
        raise ValueError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.shape)
    K.add(out.size, a.data, b.data, out.data)

    def bwd():
        if a.requires_grad:
            K.axpy(out.size, 1.0, out.grad, a.ensure_grad())
        if b.requires_grad:
            K.axpy(out.size, 1.0, out.grad, b.ensure_grad())

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.shape)
    K.sub(out.size, a.data, b.data, out.data)

    def bwd():
        if a.requires_grad:
            K.axpy(out.size, 1.0, out.grad, a.ensure_grad())
        if b.requires_grad:
            K.axpy(out.size, -1.0, out.grad, b.ensure_grad())

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.shape)
    K.mul(out.size, a.data, b.data, out.data)

    def bwd():
        if a.requires_grad:
            K.mul_acc(out.size, out.grad, b.data, a.ensure_grad())
        if b.requires_grad:
            K.mul_acc(out.size, out.grad, a.data, b.ensure_grad())

    return _record(out, (a, b), bwd)


def scale(x: Tensor, alpha: float) -> Tensor:
    out = Tensor(x.shape)
    K.scale(out.size, float(alpha), x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.axpy(out.size, float(alpha), out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(x.shape)
    K.relu_fwd(out.size, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.relu_bwd(out.size, out.data, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = Tensor(x.shape)
    K.tanh_fwd(out.size, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.tanh_bwd(out.size, out.data, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    out = Tensor(x.shape)
    K.exp_fwd(out.size, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.exp_bwd(out.size, out.data, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    out = Tensor(x.shape)
    K.log_fwd(out.size, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.log_bwd(out.size, x.data, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def _rows_cols(x: Tensor, opname: str):
    if len(x.shape) != 2:
        raise ValueError(f"{opname} expects a 2-d tensor, got shape {x.shape}")
    return x.shape


def matmul(a: Tensor, b: Tensor, ta: bool = False, tb: bool = False) -> Tensor:
    if ta and tb:
        raise ValueError("matmul: ta and tb cannot both be set")
    ar, ac = _rows_cols(a, "matmul")
    br, bc = _rows_cols(b, "matmul")
    m, k = (ac, ar) if ta else (ar, ac)
    kb, n = (bc, br) if tb else (br, bc)
    if k != kb:
        raise ValueError(f"matmul: inner dims {k} vs {kb}")
    out = Tensor((m, n))
    K.gemm(m, k, n, a.data, b.data, out.data, int(ta), int(tb), 0)

    def bwd():
        dy = out.grad
        if not ta and not tb:
            if a.requires_grad:
                K.gemm(m, n, k, dy, b.data, a.ensure_grad(), 0, 1, 1)
            if b.requires_grad:
                K.gemm(k, m, n, a.data, dy, b.ensure_grad(), 1, 0, 1)
        elif not ta and tb:
            if a.requires_grad:
                K.gemm(m, n, k, dy, b.data, a.ensure_grad(), 0, 0, 1)
            if b.requires_grad:
                K.gemm(n, m, k, dy, a.data, b.ensure_grad(), 1, 0, 1)
        else:
            if a.requires_grad:
                K.gemm(k, n, m, b.data, dy, a.ensure_grad(), 0, 1, 1)
            if b.requires_grad:
                K.gemm(k, m, n, a.data, dy, b.ensure_grad(), 0, 0, 1)

    return _record(out, (a, b), bwd)


def bmm(a: Tensor, b: Tensor, ta: bool = False, tb: bool = False) -> Tensor:
    if ta and tb:
        raise ValueError("bmm: ta and tb cannot both be set")
    if len(a.shape) != 3 or len(b.shape) != 3 or a.shape[0] != b.shape[0]:
        raise ValueError(f"bmm: bad shapes {a.shape} vs {b.shape}")
    nb = a.shape[0]
    ar, ac = a.shape[1], a.shape[2]
    br, bc = b.shape[1], b.shape[2]
    m, k = (ac, ar) if ta else (ar, ac)
    kb, n = (bc, br) if tb else (br, bc)
    if k != kb:
        raise ValueError(f"bmm: inner dims {k} vs {kb}")
    out = Tensor((nb, m, n))
    K.bgemm(nb, m, k, n, a.data, b.data, out.data, int(ta), int(tb), 0)

    def bwd():
        dy = out.grad
        if not ta and not tb:
            if a.requires_grad:
                K.bgemm(nb, m, n, k, dy, b.data, a.ensure_grad(), 0, 1, 1)
            if b.requires_grad:
                K.bgemm(nb, k, m, n, a.data, dy, b.ensure_grad(), 1, 0, 1)
        elif not ta and tb:
            if a.requires_grad:
                K.bgemm(nb, m, n, k, dy, b.data, a.ensure_grad(), 0, 0, 1)
            if b.requires_grad:
                K.bgemm(nb, n, m, k, dy, a.data, b.ensure_grad(), 1, 0, 1)
        else:
            if a.requires_grad:
                K.bgemm(nb, k, n, m, b.data, dy, a.ensure_grad(), 0, 1, 1)
            if b.requires_grad:
                K.bgemm(nb, k, m, n, a.data, dy, b.ensure_grad(), 0, 0, 1)

    return _record(out, (a, b), bwd)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    rows, cols = _rows_cols(x, "bias_add")
    if b.shape != (cols,):
        raise ValueError(f"bias_add: bias shape {b.shape} for {x.shape}")
    out = Tensor(x.shape)
    K.bias_add_fwd(rows, cols, x.data, b.data, out.data)

    def bwd():
        if x.requires_grad:
            K.axpy(out.size, 1.0, out.grad, x.ensure_grad())
        if b.requires_grad:
            K.col_sum(rows, cols, out.grad, b.ensure_grad())

    return _record(out, (x, b), bwd)


def sub_colvec(x: Tensor, col: Tensor) -> Tensor:
    """Subtract a per-row scalar: y[r, j] = x[r, j] - col[r, 0]."""
    rows, cols = _rows_cols(x, "sub_colvec")
    if col.shape != (rows, 1):
        raise ValueError(f"sub_colvec: column shape {col.shape} for {x.shape}")
    out = Tensor(x.shape)
    K.sub_colvec_fwd(rows, cols, x.data, col.data, out.data)

    def bwd():
        if x.requires_grad:
            K.axpy(out.size, 1.0, out.grad, x.ensure_grad())
        if col.requires_grad:
            tmp = array("d", bytes(8 * rows))
            K.row_sum_fwd(rows, cols, out.grad, tmp)
            K.axpy(rows, -1.0, tmp, col.ensure_grad())

    return _record(out, (x, col), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    rows, cols = _rows_cols(x, "softmax_rows")
    out = Tensor(x.shape)
    K.softmax_rows_fwd(rows, cols, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.softmax_rows_bwd(rows, cols, out.data, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def logsumexp_rows(x: Tensor) -> Tensor:
    rows, cols = _rows_cols(x, "logsumexp_rows")
    out = Tensor((rows, 1))
    K.logsumexp_rows_fwd(rows, cols, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.logsumexp_rows_bwd(rows, cols, x.data, out.data, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def row_sum(x: Tensor) -> Tensor:
    rows, cols = _rows_cols(x, "row_sum")
    out = Tensor((rows, 1))
    K.row_sum_fwd(rows, cols, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.row_sum_bwd(rows, cols, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(())
    out.data[0] = K.total_sum(x.size, x.data)
    n = x.size

    def bwd():
        if x.requires_grad:
            K.add_scalar(n, out.grad[0], x.ensure_grad())

    return _record(out, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(())
    out.data[0] = K.total_sum(n, x.data) / n

    def bwd():
        if x.requires_grad:
            K.add_scalar(n, out.grad[0] / n, x.ensure_grad())

    return _record(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if _size(shape) != x.size:
        raise ValueError(f"reshape: {x.shape} -> {shape}")
    out = Tensor(shape, x.data)  # shares the buffer; on-tape tensors are write-once

    def bwd():
        if x.requires_grad:
            K.axpy(x.size, 1.0, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    rows, ca = _rows_cols(a, "concat_cols")
    rb, cb = _rows_cols(b, "concat_cols")
    if rb != rows:
        raise ValueError(f"concat_cols: row mismatch {rows} vs {rb}")
    out = Tensor((rows, ca + cb))
    K.pack_cols(rows, ca, cb, a.data, b.data, out.data)

    def bwd():
        da = a.ensure_grad() if a.requires_grad else None
        db = b.ensure_grad() if b.requires_grad else None
        if da is None and db is None:
            return
        scratch_a = da if da is not None else array("d", bytes(8 * rows * ca))
        scratch_b = db if db is not None else array("d", bytes(8 * rows * cb))
        K.unpack_cols_acc(rows, ca, cb, out.grad, scratch_a, scratch_b)

    return _record(out, (a, b), bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    rows, cols = _rows_cols(x, "gather_rows")
    ib = idx if isinstance(idx, array) else array("q", [int(i) for i in idx])
    for i in ib:
        if i < 0 or i >= rows:
            raise IndexError(f"gather_rows: index {i} out of range for {rows} rows")
    out = Tensor((len(ib), cols))
    K.gather_rows(len(ib), cols, ib, x.data, out.data)

    def bwd():
        if x.requires_grad:
            K.scatter_add_rows(len(ib), cols, ib, out.grad, x.ensure_grad())

    return _record(out, (x,), bwd)


def split_heads(x: Tensor, heads: int) -> Tensor:
    if len(x.shape) != 3:
        raise ValueError(f"split_heads expects (batch, length, dim), got {x.shape}")
    bsz, length, dim = x.shape
    if dim % heads != 0:
        raise ValueError(f"split_heads: {heads} heads do not divide dim {dim}")
    dh = dim // heads
    out = Tensor((bsz * heads, length, dh))
    K.split_heads(bsz, length, heads, dh, x.data, out.data)

    def bwd():
        if x.requires_grad:
            tmp = array("d", bytes(8 * x.size))
            K.merge_heads(bsz, length, heads, dh, out.grad, tmp)
            K.axpy(x.size, 1.0, tmp, x.ensure_grad())

    return _record(out, (x,), bwd)


def merge_heads(x: Tensor, heads: int) -> Tensor:
    if len(x.shape) != 3 or x.shape[0] % heads != 0:
        raise ValueError(f"merge_heads: bad shape {x.shape} for {heads} heads")
    bsz = x.shape[0] // heads
    length, dh = x.shape[1], x.shape[2]
    out = Tensor((bsz, length, heads * dh))
    K.merge_heads(bsz, length, heads, dh, x.data, out.data)

    def bwd():
        if x.requires_grad:
            tmp = array("d", bytes(8 * x.size))
            K.split_heads(bsz, length, heads, dh, out.grad, tmp)
            K.axpy(x.size, 1.0, tmp, x.ensure_grad())

    return _record(out, (x,), bwd)
