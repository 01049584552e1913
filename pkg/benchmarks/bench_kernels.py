"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--steps 200000]

Prints one line per (kernel, backend) with the best wall time over the
repeats, and the speedup of the compiled backend. Both backends are checked
to agree before timing.
"""
import argparse
import time

import numpy as np

from coarsegrain import kernels


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--steps", type=int, default=200_000, help="Euler-Maruyama steps")
    p.add_argument("--queries", type=int, default=256)
    p.add_argument("--context", type=int, default=1024)
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(args.steps - 1)
    zc = rng.standard_normal((args.context, 1))
    inc = 0.05 * rng.standard_normal((args.context, 1))
    zq = rng.standard_normal((args.queries, 1))
    coef = np.array([0.5 / 0.26**2])

    cases = {
        f"em_double_well  n={args.steps}": lambda m: m.em_double_well(0.0, 0.002, noise),
        f"nw_fields       q={args.queries} m={args.context}":
            lambda m: m.nw_fields(zq, zc, inc, coef, 0.002, 1e-6, False),
        f"nw_fields+grad  q={args.queries} m={args.context}":
            lambda m: m.nw_fields(zq, zc, inc, coef, 0.002, 1e-6, True),
    }
    if "cython" in backends:
        a = backends["cython"].em_double_well(0.0, 0.002, noise)[0]
        b = backends["python"].em_double_well(0.0, 0.002, noise)[0]
        assert np.array_equal(a, b), "steppers disagree"
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    for label, call in cases.items():
        timings = {name: best_time(lambda: call(mod), args.repeat) for name, mod in backends.items()}
        line = "  ".join(f"{name} {t * 1e3:9.2f} ms" for name, t in timings.items())
        if "cython" in timings:
            line += f"  speedup x{timings['python'] / timings['cython']:.1f}"
        print(f"{label:36s} {line}")


if __name__ == "__main__":
    main()
