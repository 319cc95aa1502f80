"""Time each hot kernel under both backends.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from musicsim.kernels import IMPLEMENTATIONS, SEP
from musicsim.model import ModelShape, random_weights

FIELDS = ("tok", "pos", "ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b",
          "w1", "b1", "w2", "b2", "lnf_g", "lnf_b")


def cases(rng):
    seq = rng.integers(0, 388, 400_000).astype(np.int64)
    seq[::500] = SEP
    word_len = np.ones(2000, dtype=np.int64)
    emb = rng.standard_normal((2000, 512))
    ia, ib = rng.integers(0, 2000, 200_000), rng.integers(0, 2000, 200_000)
    ranks = rng.integers(0, 1000, 200_000).astype(np.float64)
    shape = ModelShape(12, 256, 256, 2000, 8)
    w = random_weights(shape, 0)
    ids = rng.integers(0, 2000, 256).astype(np.int64)
    args = [getattr(w, f) for f in FIELDS]
    return {
        "best_pair": lambda k: k(seq, word_len, 8, 2000),
        "merge_pair": lambda k: k(seq.copy(), 1, 2, 1999),
        "rank_average": lambda k: k(ranks),
        "pair_cosines": lambda k: k(emb, ia, ib),
        "forward": lambda k: k(ids, *args, shape.heads, True),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    opts = ap.parse_args()
    table = cases(np.random.default_rng(0))
    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, run in table.items():
        best = {}
        for backend in ("numpy", "numba"):
            fn = IMPLEMENTATIONS[backend][name]
            run(fn)  # warm-up / compile
            times = []
            for _ in range(opts.repeat):
                t = time.perf_counter()
                run(fn)
                times.append(time.perf_counter() - t)
            best[backend] = min(times) * 1e3
        print(f"{name:<14}{best['numpy']:>12.2f}{best['numba']:>12.2f}"
              f"{best['numpy'] / best['numba']:>10.2f}")


if __name__ == "__main__":
    main()
