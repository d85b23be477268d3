"""Compare the numba and pure-numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--step]

Kernel timings call both implementations in-process. ``--step`` also times
one encrypted train step end to end, once per path, in subprocesses with
``HETRAIN_NUMBA`` set accordingly.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hetrain import _kernels as K
from hetrain.activation import cheb_fit_silu

STEP_SNIPPET = """
import time, numpy as np
from hetrain import HEContext, HEParams, pack1d, _kernels
from hetrain.henn import NetworkSpec, init_model, encrypt_model, train_step
ctx = HEContext(HEParams()); sk, pk = ctx.keygen(np.random.default_rng(0))
m = encrypt_model(init_model(NetworkSpec(), 0), pk, ctx)
rng = np.random.default_rng(1)
xs = [ctx.encrypt(pk, pack1d(rng.random(21), 0, 32, 1024)) for _ in range(32)]
ys = [ctx.encrypt(pk, pack1d(np.eye(5)[i % 5], 1, 32, 1024)) for i in range(32)]
train_step(m, xs[:2], ys[:2], 0.9)
t = time.perf_counter()
for _ in range(3):
    train_step(m, xs, ys, 0.9)
print(_kernels.USE_NUMBA, (time.perf_counter() - t) / 3)
"""


def bench(fn, repeat):
    fn()  # warm-up, includes jit compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e6


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--step", action="store_true", help="also time a 32-sample train step per path")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal(1024)
    mask = np.ones(1024)
    coeffs = np.asarray(cheb_fit_silu().coeffs)
    cases = [
        ("rotsum step=1 count=32", lambda f: f(x, 1, 32), K.rotsum_numpy, K.rotsum_numba),
        ("rotsum step=32 count=32", lambda f: f(x, 32, 32), K.rotsum_numpy, K.rotsum_numba),
        ("poly_eval degree 15", lambda f: f(x, coeffs, mask), K.poly_eval_numpy, K.poly_eval_numba),
    ]
    print(f"{'kernel':<26}{'numpy us':>12}{'numba us':>12}{'speedup':>10}  identical")
    for name, call, f_np, f_nb in cases:
        t_np = bench(lambda: call(f_np), args.repeat)
        if f_nb is None:
            print(f"{name:<26}{t_np:>12.1f}{'n/a':>12}")
            continue
        t_nb = bench(lambda: call(f_nb), args.repeat)
        same = np.array_equal(call(f_np), call(f_nb))
        print(f"{name:<26}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>9.2f}x  {same}")

    if args.step:
        for flag in ("0", "1"):
            env = dict(os.environ, HETRAIN_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True,
                                 text=True, check=True).stdout.split()
            print(f"train step (32 samples), numba={out[0]}: {float(out[1]) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
