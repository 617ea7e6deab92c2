#!/usr/bin/env python3
"""Compare the compiled tape executor against the pure-Python fallback.

The interpreter's scalar loop dominates the semantic-preservation fuzz and is
the reason the compiled core exists; this benchmark quantifies the gap per
kernel and checks the two backends agree bitwise.
"""

import argparse
import time

import numpy as np

from loopgym import interp, kernels
from loopgym.lower import lower


def bench_kernel(name: str, preset: str, repetitions: int, seed: int):
    bundle = kernels.load_kernel(name, preset)
    rng = np.random.default_rng(seed)
    env = bundle.env_gen(rng)
    low = lower(bundle.program, env.dims)
    results = {}
    outputs = {}
    for backend in interp.available_backends():
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            out = interp.interpret(bundle.program, env, backend=backend, lowered=low)
            times.append(time.perf_counter() - t0)
        results[backend] = float(np.median(times))
        outputs[backend] = out
    bitwise = None
    if len(outputs) == 2:
        a, b = outputs["python"], outputs["compiled"]
        bitwise = all(np.array_equal(a[k], b[k]) for k in a)
    return results, bitwise


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kernels", default="all")
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--repetitions", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"seed: {args.seed}")

    names = kernels.kernel_names() if args.kernels == "all" else args.kernels.split(",")
    print(f"{'kernel':12s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}  bitwise")
    speedups = []
    for name in names:
        results, bitwise = bench_kernel(name, args.preset, args.repetitions, args.seed)
        py = results.get("python")
        cc = results.get("compiled")
        if cc is not None:
            speedups.append(py / cc)
            print(f"{name:12s} {py * 1e3:9.2f}ms {cc * 1e3:9.2f}ms {py / cc:7.1f}x  {bitwise}")
        else:
            print(f"{name:12s} {py * 1e3:9.2f}ms {'n/a':>10s} {'n/a':>8s}  n/a")
    if speedups:
        gmean = float(np.exp(np.mean(np.log(speedups))))
        print(f"\ngeometric-mean speedup: {gmean:.1f}x over {len(speedups)} kernels")


if __name__ == "__main__":
    main()
