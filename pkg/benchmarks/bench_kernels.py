"""Time the compiled and numpy resolvent-sum kernels on the same term tables.

    python3 benchmarks/bench_kernels.py [--points 200] [--repeat 5]
"""

import argparse
import time

import numpy as np

from fewphoton import kernels
from fewphoton.checks import random_on_shell
from fewphoton.engine import term_table
from fewphoton.system import build_kerr


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=200)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print("n,terms,points," + ",".join(f"{b}_s" for b in backends) + ",speedup,max_rel_diff")
    rng = np.random.default_rng(0)
    for n in (2, 3, 4):
        table = term_table(build_kerr(0.3, 1.0, 1.0, dim=n + 1), n)
        rows = [random_on_shell(n, rng) for _ in range(args.points)]
        zs = np.array([np.concatenate([p, -k]) for p, k in rows])
        timings, values = {}, {}
        for name in backends:
            impl = kernels.BACKENDS[name]
            values[name] = impl.resolvent_sum(table.coeffs, table.slots, table.energies, zs)
            timings[name] = best_of(lambda: impl.resolvent_sum(table.coeffs, table.slots, table.energies, zs),
                                    args.repeat)
        speedup = timings["python"] / timings["cython"] if "cython" in timings else float("nan")
        ref = values["python"]
        diff = max(float(np.max(np.abs(v - ref) / np.abs(ref))) for v in values.values())
        print(f"{n},{len(table)},{args.points}," + ",".join(f"{timings[b]:.4f}" for b in backends)
              + f",{speedup:.2f},{diff:.2g}")


if __name__ == "__main__":
    main()
