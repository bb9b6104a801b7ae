"""Micro-benchmarks for the compiled kernels against the Python fallback.

Times the hot kernels on synthetic buffers in-process (both kernel modules
are imported directly), then a short end-to-end training run per backend in
a subprocess, since the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py --repeat 5
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time
from array import array

import numpy as np

from offrank.nn import _pykernels

try:
    from offrank.nn import _ckernels
except ImportError:
    _ckernels = None


def _buf(rng, n):
    return array("d", rng.normal(size=n))


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    m = k = n = 96
    a, b = _buf(rng, m * k), _buf(rng, k * n)
    c = array("d", bytes(8 * m * n))
    yield f"gemm {m}x{k}x{n}", lambda ks: ks.gemm(m, k, n, a, b, c, 0, 0, 0)

    bsz = 16
    ba, bb = _buf(rng, bsz * 32 * 32), _buf(rng, bsz * 32 * 32)
    bc = array("d", bytes(8 * bsz * 32 * 32))
    yield "bgemm 16x32^3", lambda ks: ks.bgemm(bsz, 32, 32, 32, ba, bb, bc, 0, 0, 0)

    rows, cols = 512, 64
    x = _buf(rng, rows * cols)
    y = array("d", bytes(8 * rows * cols))
    yield f"softmax_rows {rows}x{cols}", lambda ks: ks.softmax_rows_fwd(rows, cols, x, y)
    lse = array("d", bytes(8 * rows))
    yield f"logsumexp_rows {rows}x{cols}", lambda ks: ks.logsumexp_rows_fwd(rows, cols, x, lse)

    nr = 200_000
    rx = _buf(rng, nr)
    ry = array("d", bytes(8 * nr))
    yield f"relu_fwd {nr}", lambda ks: ks.relu_fwd(nr, rx, ry)

    p, g = _buf(rng, nr), _buf(rng, nr)
    mom, vel = array("d", bytes(8 * nr)), array("d", bytes(8 * nr))
    yield f"adam_step {nr}", lambda ks: ks.adam_step(nr, p, g, mom, vel,
                                                     1e-3, 0.9, 0.999, 1e-8,
                                                     0.1, 0.001)

    hb, hl, hh, hd = 8, 24, 8, 8
    hx = _buf(rng, hb * hl * hh * hd)
    hy = array("d", bytes(8 * hb * hl * hh * hd))
    yield "split_heads 8x24x64", lambda ks: ks.split_heads(hb, hl, hh, hd, hx, hy)


TRAIN_SNIPPET = """
import time
from offrank.agent import TrainConfig, train
from offrank.baselines import collect_sessions, train_logging_policy
from offrank.clicks import AttractionModel, default_spec
from offrank.data import generate_synthetic
from offrank.mdp import episodes_from_sessions
from offrank.nn.backend import BACKEND
from offrank.rng import stream

queries = generate_synthetic(30, 8, 8, seed=1).train
policy = train_logging_policy(queries, stream(1, "bench"))
sessions = collect_sessions(lambda q: policy.rank(q, 8), queries,
                            default_spec("PBM", K=8), AttractionModel(),
                            4, stream(1, "bench", "sessions"))
episodes = episodes_from_sessions(sessions, queries)
groups = {}
for q, ep in zip([s.query_id for s in sessions], episodes):
    groups.setdefault(q, []).append(ep)
by_id = {q.query_id: q for q in queries}
data = [(by_id[qid], eps) for qid, eps in groups.items()]
config = TrainConfig(iterations=150, batch_queries=4, hidden_width=32,
                     heads=4, embedding="ATTENTION", seed=0)
t0 = time.perf_counter()
train(data, config, feature_dim=8)
print(f"{BACKEND} {time.perf_counter() - t0:.2f}")
"""


def bench_training():
    out = []
    for backend in ("py", "c"):
        env = dict(os.environ, OFFRANK_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET],
                              capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            out.append((backend, None, proc.stderr.strip().splitlines()[-1]))
        else:
            name, secs = proc.stdout.split()
            out.append((name, float(secs), None))
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions per kernel (best is kept)")
    parser.add_argument("--skip-training", action="store_true",
                        help="only run the kernel microbenchmarks")
    args = parser.parse_args(argv)

    if _ckernels is None:
        print("compiled kernels are not built; showing Python timings only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, call in kernel_cases(rng):
        t_py = _time(lambda: call(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:28s} {t_py * 1e3:9.2f}ms {'-':>10s} {'-':>8s}")
            continue
        t_c = _time(lambda: call(_ckernels), args.repeat)
        print(f"{name:28s} {t_py * 1e3:9.2f}ms {t_c * 1e3:9.2f}ms "
              f"{t_py / t_c:7.1f}x")

    if not args.skip_training:
        print()
        print("end-to-end training, 150 iterations (subprocess per backend):")
        rows = bench_training()
        for name, secs, err in rows:
            if err is not None:
                print(f"  {name}: failed ({err})")
            else:
                print(f"  {name}: {secs:.2f}s")
        good = [s for _, s, e in rows if e is None]
        if len(good) == 2 and good[1] > 0:
            print(f"  speedup: {good[0] / good[1]:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
