"""Parameter plumbing and the network building blocks.

Covers named parameter stores with bit-exact checkpoints, seeded uniform
initialization, MLPs, sinusoidal position codes, batched multi-head
self-attention, Adam, target-network soft updates, and a finite-difference
gradient checker.
"""
from __future__ import annotations

import json
import math
import sys
from array import array
from pathlib import Path

import numpy as np

from .backend import kernels as K
from .tensor import (
    Tensor,
    Tape,
    tape_scope,
    matmul,
    bmm,
    bias_add,
    relu,
    add,
    scale,
    softmax_rows,
    reshape,
    gather_rows,
    split_heads,
    merge_heads,
)

MASK_NEG = -1e9


class ParamStore:
    """Ordered mapping name -> trainable Tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def copy_values_from(self, other: "ParamStore"):
        if self.names() != other.names():
            raise ValueError("parameter stores do not match")
        for name, t in self._params.items():
            src = other[name]
            if t.shape != src.shape:
                raise ValueError(f"shape mismatch for {name!r}: {t.shape} vs {src.shape}")
            K.copy(t.size, src.data, t.data)


def soft_update(target: ParamStore, source: ParamStore, tau: float):
    """target <- (1 - tau) * target + tau * source, elementwise."""
    if target.names() != source.names():
        raise ValueError("parameter stores do not match")
    for name in target.names():
        tp, sp = target[name], source[name]
        if tp.shape != sp.shape:
            raise ValueError(f"shape mismatch for {name!r}: {tp.shape} vs {sp.shape}")
        K.scale(tp.size, 1.0 - tau, tp.data, tp.data)
        K.axpy(tp.size, tau, sp.data, tp.data)


def uniform_init(shape, fan_in: int, rng) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor.from_numpy(rng.uniform(-bound, bound, size=shape))


def _le_bytes(buf: array) -> bytes:
    if sys.byteorder == "little":
        return buf.tobytes()
    swapped = array("d", buf)
    swapped.byteswap()
    return swapped.tobytes()


def _from_le_bytes(raw: bytes) -> array:
    buf = array("d")
    buf.frombytes(raw)
    if sys.byteorder != "little":
        buf.byteswap()
    return buf


def save_checkpoint(path, groups: dict[str, ParamStore]):
    """Write all parameters to <path> (raw little-endian float64) + <path>.json."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for gname, store in groups.items():
        for pname in store.names():
            t = store[pname]
            raw = _le_bytes(t.data)
            entries.append({
                "name": f"{gname}.{pname}",
                "shape": list(t.shape),
                "offset": offset,
            })
            blobs.append(raw)
            offset += len(raw)
    manifest = {"dtype": "float64", "byte_order": "little", "tensors": entries}
    path.write_bytes(b"".join(blobs))
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_checkpoint(path, groups: dict[str, ParamStore]):
    """Fill existing stores from a checkpoint, bit-exact; shapes must match."""
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    raw = path.read_bytes()
    by_name = {e["name"]: e for e in manifest["tensors"]}
    for gname, store in groups.items():
        for pname in store.names():
            full = f"{gname}.{pname}"
            if full not in by_name:
                raise KeyError(f"checkpoint is missing tensor {full!r}")
            e = by_name[full]
            t = store[pname]
            if tuple(e["shape"]) != t.shape:
                raise ValueError(f"checkpoint shape {e['shape']} vs {t.shape} for {full!r}")
            nbytes = 8 * t.size
            t.data = _from_le_bytes(raw[e["offset"]:e["offset"] + nbytes])
            t.grad = None


def mlp_init(store: ParamStore, prefix: str, sizes, rng):
    """Linear layers sizes[0] -> ... -> sizes[-1], weights uniform(+-1/sqrt(fan_in)), zero biases."""
    for i in range(len(sizes) - 1):
        din, dout = sizes[i], sizes[i + 1]
        store.add(f"{prefix}.w{i}", uniform_init((din, dout), din, rng))
        store.add(f"{prefix}.b{i}", Tensor.zeros((dout,)))


def mlp_forward(store: ParamStore, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    """ReLU between layers, linear output."""
    for i in range(n_layers):
        x = bias_add(matmul(x, store[f"{prefix}.w{i}"]), store[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            x = relu(x)
    return x


def positional_encoding(k: int, d: int) -> np.ndarray:
    """Sinusoidal code for position k >= 0: even slots sin, odd slots cos."""
    if k < 0:
        raise ValueError(f"position must be nonnegative, got {k}")
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    pe = np.empty(d)
    for i in range(0, d, 2):
        angle = k / (10000.0 ** (i / d))
        pe[i] = math.sin(angle)
        if i + 1 < d:
            pe[i + 1] = math.cos(angle)
    return pe


def attention_init(store: ParamStore, prefix: str, d_model: int, heads: int, rng):
    if d_model % heads != 0:
        raise ValueError(f"{heads} heads do not divide d_model {d_model}")
    for name in ("wq", "wk", "wv", "wo"):
        store.add(f"{prefix}.{name}", uniform_init((d_model, d_model), d_model, rng))
    for name in ("bq", "bk", "bv", "bo"):
        store.add(f"{prefix}.{name}", Tensor.zeros((d_model,)))


def attention_mask(lengths, max_len: int, heads: int) -> Tensor:
    """Additive score mask, MASK_NEG over padded key positions; constant."""
    bsz = len(lengths)
    m = np.zeros((bsz, 1, 1, max_len))
    for b, n in enumerate(lengths):
        m[b, 0, 0, n:] = MASK_NEG
    m = np.broadcast_to(m, (bsz, heads, max_len, max_len))
    return Tensor.from_numpy(m.reshape(bsz * heads, max_len, max_len))


def attention_forward(store: ParamStore, prefix: str, tokens: Tensor, heads: int,
                      lengths=None) -> Tensor:
    """Multi-head self-attention; returns the output row at each sequence's
    final real token (the position-code slot).

    tokens: (batch, max_len, d_model), rows past lengths[b] zero-padded.
    """
    if len(tokens.shape) != 3:
        raise ValueError(f"tokens must be (batch, len, dim), got {tokens.shape}")
    bsz, max_len, d = tokens.shape
    wq = store[f"{prefix}.wq"]
    if wq.shape[0] != d:
        raise ValueError(f"d_model mismatch: tokens have {d}, weights {wq.shape[0]}")
    if lengths is None:
        lengths = [max_len] * bsz
    dh = d // heads

    rows = reshape(tokens, (bsz * max_len, d))
    q = bias_add(matmul(rows, wq), store[f"{prefix}.bq"])
    k = bias_add(matmul(rows, store[f"{prefix}.wk"]), store[f"{prefix}.bk"])
    v = bias_add(matmul(rows, store[f"{prefix}.wv"]), store[f"{prefix}.bv"])
    qh = split_heads(reshape(q, (bsz, max_len, d)), heads)
    kh = split_heads(reshape(k, (bsz, max_len, d)), heads)
    vh = split_heads(reshape(v, (bsz, max_len, d)), heads)

    scores = scale(bmm(qh, kh, tb=True), 1.0 / math.sqrt(dh))
    if any(n != max_len for n in lengths):
        scores = add(scores, attention_mask(lengths, max_len, heads))
    attn = softmax_rows(reshape(scores, (bsz * heads * max_len, max_len)))
    ctx = bmm(reshape(attn, (bsz * heads, max_len, max_len)), vh)
    merged = reshape(merge_heads(ctx, heads), (bsz * max_len, d))

    last = array("q", [b * max_len + (lengths[b] - 1) for b in range(bsz)])
    picked = gather_rows(merged, last)
    return bias_add(matmul(picked, store[f"{prefix}.wo"]), store[f"{prefix}.bo"])


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [array("d", bytes(8 * p.size)) for p in self.params]
        self._v = [array("d", bytes(8 * p.size)) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            K.adam_step(p.size, p.data, p.grad, m, v,
                        self.lr, self.beta1, self.beta2, self.eps, bc1, bc2)


def grad_check(f, params, probe_count: int = 20, tol: float = 1e-4, seed: int = 0,
               h_scale: float = 1e-4):
    """Compare reverse-mode gradients of scalar f() against central differences.

    Probes probe_count random coordinates across params; h = h_scale * max(|p|, 1).
    A probe whose interval straddles a relu kink misreports the local slope, so
    failing probes are retried at h/10 and h/100 before counting as a mismatch.
    Returns {"max_rel_err", "ok", "probes"}.
    """
    tape = Tape()
    with tape_scope(tape):
        out = f()
    if not math.isfinite(out.item()):
        raise ValueError(f"non-finite loss {out.item()} in grad_check")
    for p in params:
        p.zero_grad()
    tape.backward(out)
    analytic = [array("d", p.grad) if p.grad is not None else array("d", bytes(8 * p.size))
                for p in params]

    rng = np.random.default_rng(seed)
    probes = []
    max_err = 0.0
    for _ in range(probe_count):
        pi = int(rng.integers(len(params)))
        ci = int(rng.integers(params[pi].size))
        p = params[pi]
        orig = p.data[ci]
        ana = analytic[pi][ci]
        for shrink in (1.0, 0.1, 0.01):
            h = h_scale * shrink * max(abs(orig), 1.0)
            p.data[ci] = orig + h
            up = f().item()
            p.data[ci] = orig - h
            down = f().item()
            p.data[ci] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ValueError("non-finite loss during finite differencing")
            numeric = (up - down) / (2.0 * h)
            err = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-6)
            if err < tol:
                break
        probes.append({"param": pi, "coord": ci, "numeric": numeric,
                       "analytic": ana, "rel_err": err})
        max_err = max(max_err, err)
    return {"max_rel_err": max_err, "ok": max_err < tol, "probes": probes}
