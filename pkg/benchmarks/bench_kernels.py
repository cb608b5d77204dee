"""Time the compiled kernels against the numpy fallback on one synthetic catalog.

Usage: python benchmarks/bench_kernels.py [--n 20000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from sepp import _pykernels

try:
    from sepp import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(n: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 365, n))
    x, y = rng.uniform(0, 500, n), rng.uniform(0, 500, n)
    return {"t": t, "x": x, "y": y, "w": np.full(n, 0.5), "mu": np.full(n, 1e-4)}


def cases(impl, d: dict, omega=7.0, sigma2=25.0):
    n = len(d["t"])
    is_child = np.ones(n, dtype=bool)
    child, parent = impl.find_pairs(d["t"], d["x"], d["y"], is_child, 70.0, 40.0)
    dt = d["t"][child] - d["t"][parent]
    r2 = (d["x"][child] - d["x"][parent]) ** 2 + (d["y"][child] - d["y"][parent]) ** 2
    w = d["w"][parent]
    q = np.random.default_rng(1).uniform(0, 500, (2000, 2))
    return {
        "find_pairs": lambda: impl.find_pairs(d["t"], d["x"], d["y"], is_child, 70.0, 40.0),
        "trigger_pairs": lambda: impl.trigger_pairs(child, dt, r2, w, omega, sigma2, 0.0, n),
        "pair_responsibilities": lambda: impl.pair_responsibilities(child, parent, dt, r2, d["w"], d["mu"], omega,
                                                                    sigma2, 0.0),
        "point_sums": lambda: impl.point_sums(q[:, 0], q[:, 1], None, d["x"], d["y"], d["t"], d["w"], omega,
                                              sigma2, 0.0, 40.0, 70.0, 300.0, 307.0, True),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    data = make_inputs(args.n)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    results = {name: {k: min(timeit.repeat(f, number=1, repeat=args.repeat)) for k, f in cases(mod, data).items()}
               for name, mod in backends.items()}
    print(f"n={args.n} events, best of {args.repeat}")
    print(f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in results) + ("     speedup" if len(results) > 1 else ""))
    for k in results["python"]:
        row = f"{k:24s}" + "".join(f"{results[b][k] * 1e3:10.2f}ms" for b in results)
        if "cython" in results:
            row += f"{results['python'][k] / results['cython'][k]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
