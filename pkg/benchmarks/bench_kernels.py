"""Compare compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from mpa import kernels
from mpa.dsp import _design_lowpass


def cases(rng):
    a = rng.integers(0, 30, size=200).tolist()
    b = rng.integers(0, 30, size=220).tolist()
    x = rng.normal(size=16000)
    h, delay = _design_lowpass(160, 441)
    n_out = -(-len(x) * 160 // 441)
    return {
        "edit_distance 200x220": lambda backend: kernels.edit_distance(a, b, backend=backend),
        "resample 1s 44.1k->16k": lambda backend: kernels.polyphase_resample(x, h, 160, 441, n_out, delay,
                                                                             backend=backend),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the Python fallback only")
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        outs = [fn(b) for b in backends]
        if len(outs) > 1:
            assert np.array_equal(outs[0], outs[1]), f"{name}: backends disagree"
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:>11.0f}x"
        print(row)


if __name__ == "__main__":
    main()
