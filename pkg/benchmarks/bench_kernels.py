"""Time the compiled link-statistics kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --sizes 256 512 1024 2048 --density 0.05

Prints one row per size with the median wall time of each backend and
checks that both return the same numbers.
"""
import argparse
import time

import numpy as np

from angm import kernels
from angm.graph import AttributedGraph


def random_graph(n, density, rng):
    upper = np.triu(rng.random((n, n)) < density, k=1)
    adj = (upper | upper.T).astype(np.uint8)
    return AttributedGraph(adj, np.zeros((n, 1)))


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2048])
    parser.add_argument("--density", type=float, default=0.05)
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if kernels._ext is None:
        raise SystemExit("compiled kernels are not available; rebuild with `pip install -e .`")
    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'edges':>9} {'kernel':>18} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for n in args.sizes:
        graph = random_graph(n, args.density, rng)
        tau = rng.dirichlet(np.ones(args.k), size=n)
        labels = rng.integers(args.k, size=n)
        indptr, indices = graph.csr
        graph.dense  # build the cached dense copy outside the timed region
        cases = {
            "neighbor_mass": (
                lambda: kernels._ext.neighbor_mass(indptr, indices, tau),
                lambda: kernels.py_neighbor_mass(graph, tau),
            ),
            "block_edge_counts": (
                lambda: kernels._ext.block_edge_counts(indptr, indices, labels, args.k),
                lambda: kernels.py_block_edge_counts(graph, labels, args.k),
            ),
        }
        for name, (fast, slow) in cases.items():
            if not np.allclose(fast(), slow()):
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_fast = median_time(fast, args.repeats)
            t_slow = median_time(slow, args.repeats)
            print(f"{n:>6} {graph.n_edges:>9} {name:>18} {1e3 * t_fast:>10.3f} {1e3 * t_slow:>10.3f} {t_slow / t_fast:>8.1f}")


if __name__ == "__main__":
    main()
