"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel and backend, plus the speed-up.
"""
import argparse
import time

import numpy as np

from dropgp import _kernels, _pykernels
from dropgp.network import NetworkSpec, init_params
from dropgp.numerics import RngState, stream_key_array
from dropgp.uncertainty import McConfig, sample_outputs

try:
    from dropgp import _ckernels
except ImportError:
    _ckernels = None


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    keys = stream_key_array(0, np.arange(20_000, dtype=np.uint64))
    rng = np.random.default_rng(0)
    n, k_in, k_out = 2_000, 50, 50
    h = rng.standard_normal((n, k_in))
    z = (rng.random((n, k_in)) < 0.5).astype(np.float64)
    w = rng.standard_normal((k_in, k_out))
    b = rng.standard_normal(k_out)
    return {
        "uniform_grid 20000x100": lambda m: m.uniform_grid(keys, 0, 100),
        "normal_grid 20000x50": lambda m: m.normal_grid(keys, 0, 50),
        "masked_layer 2000x50x50 relu": lambda m: m.masked_layer(h, z, w, b, 1, 1.0),
    }


def end_to_end(repeat):
    """MC-dropout prediction (2 x 50 relu, 20 inputs, T=1000) under each backend."""
    spec = NetworkSpec((1, 50, 50, 1), "relu", output_bias=True)
    params = init_params(spec, RngState(0, 1))
    X = np.linspace(-8, 8, 20)[:, None]
    cfg = McConfig(1000, 0, 0.9, 100.0)
    out = {}
    for name in _kernels.available():
        with _kernels.use_backend(name):
            out[name] = best_time(lambda: sample_outputs(spec, params, cfg, X), repeat)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<32} {'numpy [ms]':>11} {'cython [ms]':>12} {'speed-up':>9}")
    for name, fn in cases().items():
        t_py = best_time(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<32} {1e3 * t_py:>11.2f} {'n/a':>12} {'':>9}")
            continue
        t_c = best_time(lambda: fn(_ckernels), args.repeat)
        print(f"{name:<32} {1e3 * t_py:>11.2f} {1e3 * t_c:>12.2f} {t_py / t_c:>8.1f}x")
    e2e = end_to_end(args.repeat)
    line = f"{'mc prediction 20 x T=1000':<32} {1e3 * e2e['numpy']:>11.2f}"
    if "cython" in e2e:
        line += f" {1e3 * e2e['cython']:>12.2f} {e2e['numpy'] / e2e['cython']:>8.1f}x"
    print(line)


if __name__ == "__main__":
    main()
