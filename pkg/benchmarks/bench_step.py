"""Benchmark the compiled particle kernels against the numpy fallback.

Runs the harvest-aware Euler block step and a full interacting replica with
both backends, reports throughput, and verifies that the outputs agree bit
for bit (they must: the fallback is written for identical IEEE arithmetic
and RNG consumption).

Usage: python benchmarks/bench_step.py [--N 2000] [--T 0.25]
"""

from __future__ import annotations

import argparse
import subprocess
import sys
import time

import numpy as np

PROBE = """
import os, sys, time, hashlib
if sys.argv[1] == "fallback":
    os.environ["ANNIDIFF_FORCE_FALLBACK"] = "1"
import numpy as np
from annidiff import particles as ps
from annidiff.backend import backend_name

N, T = int(sys.argv[2]), float(sys.argv[3])
t0 = time.time()
res = ps.run(ps.SimParams(N=N, T=T, seed=123), save_atoms=False)
el = time.time() - t0
cfg = res.config
h = hashlib.sha256()
for arr in (cfg.pos_plus, cfg.pos_minus, cfg.status_plus, cfg.status_minus):
    h.update(arr.tobytes())
print(f"{backend_name()} {el:.3f} {h.hexdigest()} {res.j_n_final:.17g}")
"""


def bench_block_step(n: int = 100000, steps: int = 50):
    from annidiff import _steppy

    try:
        from annidiff import _stepcore
    except ImportError:
        print("compiled step kernel not built; skipping block-step benchmark")
        return
    rng = np.random.default_rng(0)
    results = {}
    for name, mod in (("compiled", _stepcore), ("python", _steppy)):
        pos = rng.random((n, 1)).copy()
        status = np.zeros(n, dtype=np.int8)
        gen = np.random.default_rng(1)
        t0 = time.time()
        for _ in range(steps):
            noise = gen.standard_normal((n, 1))
            logu = np.log(gen.random(n))
            mod.step_side(pos, status, np.zeros(1), 0.0316, noise, logu,
                          True, True, 1.0 / 1e-3)
        el = time.time() - t0
        results[name] = (el, pos.copy(), status.copy())
        print(f"block step [{name}]: {steps * n / el / 1e6:8.1f} M particle-steps/s")
    same = np.array_equal(results["compiled"][1], results["python"][1]) and \
        np.array_equal(results["compiled"][2], results["python"][2])
    print(f"block step bit-identical: {same}")


def bench_replica(N: int, T: float):
    rows = {}
    for mode in ("compiled", "fallback"):
        out = subprocess.run(
            [sys.executable, "-c", PROBE, mode, str(N), str(T)],
            capture_output=True, text=True, check=True,
        )
        name, el, digest, j = out.stdout.split()
        rows[mode] = (name, float(el), digest, j)
        print(f"replica N={N} T={T} [{name}]: {float(el):.2f} s")
    same = rows["compiled"][2] == rows["fallback"][2] and \
        rows["compiled"][3] == rows["fallback"][3]
    speedup = rows["fallback"][1] / rows["compiled"][1]
    print(f"replica bit-identical: {same}; compiled speedup: {speedup:.1f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--T", type=float, default=0.25)
    args = ap.parse_args()
    bench_block_step()
    bench_replica(args.N, args.T)


if __name__ == "__main__":
    main()
