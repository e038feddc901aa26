"""Time the band attention kernels: compiled core versus numpy fallback.

    python benchmarks/bench_kernels.py --n-list 64,256,1024 --window 8 --d 32
"""

import argparse
import sys
import timeit

import numpy as np

from vtn import kernels
from vtn.encoder import window_index


def _cases(g, n, w, d, rng):
    index = window_index(n, w)
    a = index.shape[1]
    q, k, v = (rng.standard_normal((g, n + 1, d)) for _ in range(3))
    p = rng.random((g, n, a))
    ds = rng.standard_normal((g, n, a))
    dout = rng.standard_normal((g, n, d))
    rows = q[:, 1:].copy()
    return {
        "qk": lambda m: m.band_qk(rows, k, index),
        "qk_backward": lambda m: m.band_qk_backward(ds, rows, k, index),
        "pv": lambda m: m.band_pv(p, v, index),
        "pv_backward": lambda m: m.band_pv_backward(dout, p, v, index),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-list", default="64,256,1024")
    ap.add_argument("--window", type=int, default=8)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--groups", type=int, default=8, help="batch x heads")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = kernels.implementations()
    if "compiled" not in impls:
        print("compiled core not built; only the numpy fallback is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'kernel':<12} " + " ".join(f"{name + ' ms':>12}" for name in impls)
          + f" {'speedup':>8} {'max diff':>10}")
    for n in (int(x) for x in args.n_list.split(",")):
        for name, call in _cases(args.groups, n, args.window, args.d, rng).items():
            times, outs = {}, {}
            for label, mod in impls.items():
                outs[label] = call(mod)
                best = min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat))
                times[label] = best * 1e3
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            diff = 0.0
            if "compiled" in outs:
                a, b = outs["python"], outs["compiled"]
                pairs = zip(a, b) if isinstance(a, tuple) else [(a, b)]
                diff = max(float(np.abs(x - y).max()) for x, y in pairs)
            print(f"{n:>6} {name:<12} " + " ".join(f"{t:>12.3f}" for t in times.values())
                  + f" {speed:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
