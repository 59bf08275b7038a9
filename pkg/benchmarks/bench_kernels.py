#!/usr/bin/env python3
"""Time the compiled kernels against the numpy fallback.

Covers the two hot paths of training: the free-run simulation with
parameter sensitivities (one call per LM iteration and data set) and the
kernel sums behind the distance weights. Both backends are also checked
for agreement on every case before timing.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import sys
import timeit

import numpy as np

from wpgnn import _backend, benchmark
from wpgnn.core import flatten_params, init_augmented, propagate, unflatten_params


def sim_case(n_steps, sens):
    cfg = benchmark.ExperimentConfig()
    m = init_augmented(cfg.truth.prior(), cfg.n_neurons, 0)
    rng = np.random.default_rng(0)
    m = unflatten_params(m, flatten_params(m).theta + 0.1 * rng.normal(size=m.n_params))
    u = benchmark.gen_signal("reg", cfg).values[:n_steps]
    return lambda: propagate(m, u, None, sens)


def kernel_case(n_train, n_reg):
    rng = np.random.default_rng(1)
    zt = np.ascontiguousarray(rng.normal(size=(n_train, 2)))
    zr = np.ascontiguousarray(rng.normal(size=(n_reg, 2)) * 3)
    return lambda: _backend.kernel_sums(zt, zr, np.sqrt(1e-3))


CASES = [
    ("simulate N=200", lambda: sim_case(200, False)),
    ("simulate+sens N=200", lambda: sim_case(200, True)),
    ("simulate+sens N=1000", lambda: sim_case(1000, True)),
    ("kernel sums 200x1000", lambda: kernel_case(200, 1000)),
]


def run(backend, fn, repeat):
    _backend.set_backend(backend)
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def same(a, b):
    if isinstance(a, dict):
        return all(np.allclose(a[k], b[k], rtol=1e-12, atol=1e-13) for k in a if k != "bad")
    return np.allclose(a, b, rtol=1e-12, atol=0)


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if _backend._ckernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return 1
    prev = _backend.BACKEND
    print(f"{'case':<24} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    try:
        for name, make in CASES:
            fn = make()
            _backend.set_backend("python")
            ref = fn()
            _backend.set_backend("cython")
            if not same(ref, fn()):
                print(f"{name}: backends disagree")
                return 1
            tp = run("python", fn, args.repeat)
            tc = run("cython", fn, args.repeat)
            print(f"{name:<24} {tp * 1e3:12.2f} {tc * 1e3:12.2f} {tp / tc:8.1f}x")
    finally:
        _backend.set_backend(prev)
    return 0


if __name__ == "__main__":
    sys.exit(main())
