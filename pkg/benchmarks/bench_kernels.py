"""Compare the compiled and pure-Python voxel kernels.

Usage::

    python benchmarks/bench_kernels.py [--size 32] [--repeat 3]

Each kernel runs on the same boolean-sphere volume with both backends;
outputs are checked for equality before timings are reported.
"""
import argparse
import time

import numpy as np

from porodiff import _kernels
from porodiff.synth import SynthConfig, generate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = _kernels.backends()
    if "compiled" not in backends:
        print("compiled backend not built; only the pure backend is available")
    v = generate(SynthConfig(dims=(args.size,) * 3, target_porosity=0.3, radius_range=(3, 6), seed=0))
    mask = np.ascontiguousarray(v.zyx, dtype=np.uint8)
    dist = np.ascontiguousarray(backends["pure"].edt_sq(mask), dtype=np.float64)
    jobs = {
        "edt_sq": lambda k: k.edt_sq(mask),
        "label(6)": lambda k: k.label(mask, 6),
        "label(26)": lambda k: k.label(mask, 26),
        "watershed": lambda k: k.watershed(mask, dist, 6),
    }
    print(f"volume {args.size}^3, porosity {mask.mean():.3f}, best of {args.repeat}")
    print(f"{'kernel':<12}{'pure [s]':>12}{'compiled [s]':>14}{'speedup':>10}")
    for name, job in jobs.items():
        tp, out_p = best_of(lambda: job(backends["pure"]), args.repeat)
        if "compiled" in backends:
            tc, out_c = best_of(lambda: job(backends["compiled"]), args.repeat)
            a = out_p[0] if isinstance(out_p, tuple) else out_p
            b = out_c[0] if isinstance(out_c, tuple) else out_c
            if not np.array_equal(np.asarray(a), np.asarray(b)):
                raise SystemExit(f"{name}: backends disagree")
            print(f"{name:<12}{tp:>12.4f}{tc:>14.4f}{tp / tc:>9.1f}x")
        else:
            print(f"{name:<12}{tp:>12.4f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
