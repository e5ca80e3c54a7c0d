"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--paths 400] [--steps 10000] [--repeat 5]

Each kernel is run on identical inputs; the table reports the best of
``--repeat`` wall times and the largest difference between backends relative to the output scale.
"""

import argparse
import timeit

import numpy as np

from dirichlet_lab import kernels


def cases(paths: int, steps: int, rng):
    X = rng.normal(size=(paths, steps + 1)).cumsum(axis=1)
    Y = rng.normal(size=(paths, steps + 1)).cumsum(axis=1)
    m = 10
    conv_n = min(steps, 2000)
    B = rng.normal(size=(paths, conv_n + 1)).cumsum(axis=1)
    dW = rng.normal(size=(paths, conv_n))
    return {
        f"ucp_terminal  m={m}": lambda be: be.ucp_terminal(X, Y, m, steps),
        f"ceps_terminal m={m}": lambda be: be.ceps_terminal(X, Y, m, steps),
        f"ucp_path      m={m}": lambda be: be.ucp_path(X, Y, m),
        f"convolution   n={conv_n}": lambda be: be.causal_convolution(B, dW),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=400)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled extension not available (or DIRICHLET_LAB_PURE=1); nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s} {'numpy s':>10s} {'cython s':>10s} {'speedup':>8s} {'rel diff':>11s}")
    for name, run in cases(args.paths, args.steps, rng).items():
        t_np = min(timeit.repeat(lambda: run(kernels.numpy_backend), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: run(kernels.compiled_backend), number=1, repeat=args.repeat))
        a, b = np.asarray(run(kernels.numpy_backend)), np.asarray(run(kernels.compiled_backend))
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
        print(f"{name:26s} {t_np:10.4f} {t_c:10.4f} {t_np / t_c:8.1f} {diff:11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
