"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (JIT compile) before timing; the best of
``--repeat`` runs is reported.
"""
import argparse
import time

import numpy as np

from seacam.demo import bench_rig, bench_scene
from seacam.graycode import PatternSpec, decode_stack, generate_patterns
from seacam.optics import RefractiveInterface, port_crossings
from seacam.synth import render, trace_scene


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-0.5, 0.5, 200_000), rng.uniform(-0.4, 0.4, 200_000),
                           rng.uniform(0.3, 2.0, 200_000)])
    iface = RefractiveInterface()
    rig = bench_rig()
    seq = generate_patterns(PatternSpec(1024, 768))
    stack = render(bench_scene(), rig, "cam0", "proj0", seq, noise_sigma=2.0, seed=1).stack

    kernels = {
        "port crossing solve (200k points)": lambda flag: port_crossings(pts, iface, use_numba=flag),
        "gray decode (42 x 1280x1024)": lambda flag: decode_stack(stack, seq.spec, use_numba=flag),
        "scene trace (1280x1024)": lambda flag: trace_scene(bench_scene(), rig, "cam0", "proj0",
                                                            use_numba=flag),
    }
    print(f"{'kernel':38s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for name, fn in kernels.items():
        t_nb = best_of(lambda: fn(True), args.repeat)
        t_np = best_of(lambda: fn(False), args.repeat)
        print(f"{name:38s} {t_nb:9.3f} {t_np:9.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
