"""Compiled vs numpy kernels, per call and per full Gibbs sweep.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--dims 10,10,40] [--rank 5] [--ns 0.5]
"""

import argparse
import contextlib
import timeit

import numpy as np

from bayestensor import kernels
from bayestensor.designs import NoiseSpec, completion_data
from bayestensor.harness import random_truth
from bayestensor.sampler import ChainConfig, Hyperparams, init_state, sweep


@contextlib.contextmanager
def using(name):
    mod = kernels.backend_module(name)
    saved = kernels.entry_products, kernels.predict_raw, kernels.mode_gram_raw
    kernels.entry_products, kernels.predict_raw, kernels.mode_gram_raw = mod.entry_products, mod.predict, mod.mode_gram
    try:
        yield mod
    finally:
        kernels.entry_products, kernels.predict_raw, kernels.mode_gram_raw = saved


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", default="10,10,40")
    ap.add_argument("--rank", type=int, default=5)
    ap.add_argument("--ns", type=float, default=0.5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    dims = tuple(int(m) for m in args.dims.split(","))
    rng = np.random.default_rng(0)
    truth = random_truth(dims, args.rank, rng)
    n = int(round(args.ns * np.prod(dims)))
    design = completion_data(truth, n, NoiseSpec(), rng)
    cols = truth.packed_columns()
    gidx = kernels.global_indices(truth, design)
    w, ptr, y = design.entry_weights, design.ptr, design.y
    hp = Hyperparams(d_max=2 * args.rank)
    cfg = ChainConfig(n_samples=1, rank_move_prob=0.0)

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"dims={dims} rank={args.rank} n={n} (default backend: {kernels.BACKEND})")
    print(f"{'kernel':<16}" + "".join(f"{b:>14}" for b in backends) + ("      speedup" if len(backends) == 2 else ""))
    rows = {
        "predict": lambda m: m.predict(cols, gidx, w, ptr),
        "entry_products": lambda m: m.entry_products(cols, gidx, w, 0),
        "mode_gram": lambda m: m.mode_gram(cols, gidx, w, ptr, y, 2, int(truth.offsets[2]), dims[2]),
    }
    for name, call in rows.items():
        times = [best_of(lambda: call(kernels.backend_module(b)), args.repeat, 20) for b in backends]
        line = f"{name:<16}" + "".join(f"{t * 1e6:>11.1f} us" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>12.1f}x"
        print(line)

    times = []
    for b in backends:
        with using(b):
            state = init_state(dims, hp, np.random.default_rng(1))
            times.append(best_of(lambda: sweep(state, design, hp, cfg), args.repeat, 5))
    line = f"{'gibbs sweep':<16}" + "".join(f"{t * 1e3:>11.2f} ms" for t in times)
    if len(times) == 2:
        line += f"{times[0] / times[1]:>12.1f}x"
    print(line)


if __name__ == "__main__":
    main()
