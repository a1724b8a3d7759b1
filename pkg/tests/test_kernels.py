import os
import subprocess
import sys

import numpy as np
import pytest

from angm import kernels
from conftest import random_graph


@pytest.mark.skipif(kernels._ext is None, reason="compiled extension not built")
@pytest.mark.parametrize("n, density", [(1, 0.0), (7, 0.0), (30, 0.2), (60, 0.7)])
def test_backends_agree(rng, n, density):
    g = random_graph(rng, n, density=density)
    tau = rng.dirichlet(np.ones(3), size=n)
    indptr, indices = g.csr
    np.testing.assert_allclose(kernels._ext.neighbor_mass(indptr, indices, tau), kernels.py_neighbor_mass(g, tau),
                               rtol=1e-13, atol=1e-13)
    labels = rng.integers(3, size=n).astype(np.int64)
    np.testing.assert_array_equal(kernels._ext.block_edge_counts(indptr, indices, labels, 3),
                                  kernels.py_block_edge_counts(g, labels, 3))


def test_dispatch_results(rng):
    g = random_graph(rng, 12)
    tau = rng.dirichlet(np.ones(2), size=12)
    np.testing.assert_allclose(kernels.neighbor_mass(g, tau), g.dense @ tau, rtol=1e-13)
    labels = np.arange(12) % 2
    counts = kernels.block_edge_counts(g, labels, 2)
    assert counts.sum() == 2 * g.n_edges
    np.testing.assert_array_equal(counts, counts.T)


def test_python_backend_forced():
    env = {**os.environ, "ANGM_BACKEND": "python"}
    out = subprocess.run([sys.executable, "-c", "import angm.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
