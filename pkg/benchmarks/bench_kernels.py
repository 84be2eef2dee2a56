"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and shape with the median time of each backend
and the speedup of the compiled one.
"""
import argparse
import statistics
import time

import numpy as np

from fusecore.kernels import backends


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng):
    for rows, cols in ((256, 256), (2048, 128), (4 * 720, 720)):
        x = rng.normal(size=(rows, cols))
        mask = np.tril(np.ones((cols, cols), dtype=np.uint8))
        if rows % cols:
            mask = None
        yield f"softmax_fwd {rows}x{cols}{' masked' if mask is not None else ''}", \
            lambda k, x=x, mask=mask: k.softmax_rows_fwd(x, mask)
        y = np.ascontiguousarray(np.exp(x) / np.exp(x).sum(1, keepdims=True))
        g = rng.normal(size=x.shape)
        yield f"softmax_bwd {rows}x{cols}", lambda k, y=y, g=g: k.softmax_rows_bwd(y, g)
    for rows, d in ((512, 64), (1500, 128)):
        x = rng.normal(size=(rows, d))
        gain, bias = rng.normal(size=d), rng.normal(size=d)
        yield f"layer_norm_fwd {rows}x{d}", lambda k, x=x, gain=gain, bias=bias: k.layer_norm_fwd(x, gain, bias, 1e-5)
        _, xhat, rstd = backends()["python"].layer_norm_fwd(x, gain, bias, 1e-5)
        g = rng.normal(size=x.shape)
        yield f"layer_norm_bwd {rows}x{d}", lambda k, g=g, xhat=xhat, rstd=rstd, gain=gain: k.layer_norm_bwd(g, xhat, rstd, gain)
    for n in (40, 400):
        a = rng.integers(0, 20, size=n).astype(np.int64)
        b = rng.integers(0, 20, size=n).astype(np.int64)
        yield f"lcs_length {n}x{n}", lambda k, a=a, b=b: k.lcs_length(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = backends()
    if "cython" not in impls:
        print("compiled backend not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(rng):
        t_py = _median_time(lambda: fn(impls["python"]), args.repeat)
        if "cython" in impls:
            t_c = _median_time(lambda: fn(impls["cython"]), args.repeat)
            print(f"{name:<34}{t_py * 1e3:>12.3f}{t_c * 1e3:>12.3f}{t_py / t_c:>9.1f}x")
        else:
            print(f"{name:<34}{t_py * 1e3:>12.3f}{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
