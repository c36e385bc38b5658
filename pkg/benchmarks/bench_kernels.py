"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import random
import string
import timeit

import numpy as np

from chartbench._kernels import compiled, pure


def _words(rng, n):
    return ["".join(rng.choices(string.ascii_lowercase + " ", k=rng.randint(4, 24))) for _ in range(n)]


def cases():
    rng = random.Random(0)
    nrng = np.random.default_rng(0)
    a, b = _words(rng, 200), _words(rng, 200)
    keys_p, keys_t = _words(rng, 40), _words(rng, 40)
    cost20 = nrng.random((20, 20))
    cost60 = nrng.random((60, 60))
    return {
        "levenshtein x200": lambda k: [k.levenshtein(x, y) for x, y in zip(a, b)],
        "nl_matrix 40x40": lambda k: k.nl_matrix(keys_p, keys_t, 0.5),
        "solve_lsa 20x20": lambda k: k.solve_lsa(cost20),
        "solve_lsa 60x60": lambda k: k.solve_lsa(cost60),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled kernels not built; only the fallback is available")
    print(f"{'case':<20}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases().items():
        t_py = min(timeit.repeat(lambda: fn(pure), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name:<20}{t_py:>12.2f}{'-':>14}{'-':>10}")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_py:>12.2f}{t_c:>14.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
