"""Timing comparison of the numba and pure-numpy kernel paths.

Run:  python benchmarks/bench_backends.py [--repeats 2000]

Imports both kernel modules directly (ignoring TTALAB_BACKEND) so the two
paths are measured side by side in one process. Numba compilation happens
during warm-up and is excluded from the timings.
"""

import argparse
import time

import numpy as np

from ttalab import _kernels_np
from ttalab.numerics import derive_rng, l2_normalize_rows

try:
    from ttalab import _kernels_nb
except ImportError:
    _kernels_nb = None


def _inputs(n, c, d, seed=0):
    rng = derive_rng(seed, "bench")
    z = l2_normalize_rows(rng.standard_normal((n, d)))
    protos = l2_normalize_rows(rng.standard_normal((c, d)))
    q = _kernels_np.row_softmax((z @ protos.T) / 0.05)
    assigned = np.argmax(q, axis=1).astype(np.int64)
    t = q * np.bincount(assigned, minlength=c).astype(np.float64)[None, :]
    w_class = t / t.sum(axis=1, keepdims=True)
    caps = protos[assigned]
    p = _kernels_np.row_softmax((z @ caps.T) / 0.05)
    x = rng.standard_normal((n, 2 * d))
    gamma = np.ones(2 * d)
    beta = np.zeros(2 * d)
    w_proj = rng.standard_normal((2 * d, d)) / np.sqrt(2 * d)
    return dict(z=z, protos=protos, q=q, assigned=assigned, w_class=w_class,
                p=p, q_bar=q.mean(axis=0), x=x, gamma=gamma, beta=beta,
                w_proj=w_proj)


def _bench(fn, args, repeats):
    fn(*args)  # warm-up (and JIT for the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=2000)
    ap.add_argument("--sizes", default="32x10,128x10,256x20",
                    help="comma-separated NxC batch shapes")
    args = ap.parse_args()

    if _kernels_nb is None:
        print("numba unavailable: nothing to compare")
        return

    for shape in args.sizes.split(","):
        n, c = (int(v) for v in shape.split("x"))
        d = 16
        inp = _inputs(n, c, d)
        cases = [
            ("row_softmax", (inp["p"],)),
            ("entropy_sum", (inp["p"],)),
            ("row_logsumexp", (inp["p"],)),
            ("scont_grad_i2t", (inp["p"], inp["w_class"], inp["assigned"],
                                inp["protos"], 20.0)),
            ("tent_grad", (inp["q"], inp["protos"], 20.0)),
            ("reg_grad", (inp["q"], inp["q_bar"], inp["protos"], 20.0)),
            ("hard_grad", (inp["w_class"], inp["assigned"], inp["protos"], 20.0)),
            ("encoder_forward", (inp["x"], inp["gamma"], inp["beta"],
                                 inp["w_proj"], 1e-5)),
        ]
        print(f"\nN={n} C={c} d={d}  ({args.repeats} repeats, time per call)")
        print(f"{'kernel':>18} {'numpy':>12} {'numba':>12} {'speedup':>9}")
        for name, call_args in cases:
            t_np = _bench(getattr(_kernels_np, name), call_args, args.repeats)
            t_nb = _bench(getattr(_kernels_nb, name), call_args, args.repeats)
            print(f"{name:>18} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us "
                  f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
