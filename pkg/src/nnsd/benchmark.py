"""Timing harness for the two sampler kernels: ``python3 -m nnsd.benchmark``.

Runs the same seeded chain on the pure-Python and compiled backends,
verifies the draws agree, and reports sweeps/second for each.
"""
from __future__ import annotations

import argparse
import time
from dataclasses import replace

import numpy as np

from ._kernels import BACKEND, get_backend
from .inference import Hyperparams, RunOptions, run_chain
from .simulation import make_standin_dataset


def _time_chain(domain, hp, options, repeat: int):
    best = float("inf")
    draws = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        draws = run_chain(domain, hp, options)
        best = min(best, time.perf_counter() - t0)
    return best, draws


def run_benchmark(n: int = 40, iterations: int = 400, seed: int = 0, repeat: int = 2) -> int:
    domain = make_standin_dataset(seed=seed, n=n)
    hp = Hyperparams(variant="NNSD")
    base = RunOptions(iterations=iterations, burn_in=iterations // 2, seed=seed)
    backends = ["pure"]
    try:
        get_backend("compiled")
        backends.append("compiled")
    except RuntimeError:
        print("compiled kernel not available; timing the pure backend only")

    print(f"n={n} iterations={iterations} seed={seed} repeat={repeat} (default backend: {BACKEND})")
    results = {}
    for name in backends:
        opts = replace(base, backend=name)
        elapsed, draws = _time_chain(domain, hp, opts, repeat)
        results[name] = (elapsed, draws)
        print(f"{name:>9}: {elapsed:8.3f} s   {iterations / elapsed:10.1f} sweeps/s")

    if len(results) == 2:
        (tp, dp), (tc, dc) = results["pure"], results["compiled"]
        print(f"  speedup: {tp / tc:.1f}x")
        same = all(
            np.array_equal(getattr(dp, f), getattr(dc, f))
            for f in ("alpha", "gamma", "beta", "mu", "eps", "positions", "n_edges")
        )
        print(f"  identical draws: {'yes' if same else 'NO — backend mismatch'}")
        if not same:
            return 1
    return 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=40, help="number of units")
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=2, help="timing repetitions (min is reported)")
    a = p.parse_args(argv)
    return run_benchmark(n=a.n, iterations=a.iterations, seed=a.seed, repeat=a.repeat)


if __name__ == "__main__":
    raise SystemExit(main())
