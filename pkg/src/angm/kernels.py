"""Backend selection for the link-statistics kernels.

The compiled extension walks the CSR adjacency, so its cost follows the edge
count; the numpy fallback multiplies the dense adjacency. Set
``ANGM_BACKEND=python`` to force the fallback.
"""
import os

import numpy as np

try:
    if os.environ.get("ANGM_BACKEND", "").lower() == "python":
        raise ImportError("python backend requested")
    from angm import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "cython" if _ext is not None else "python"


def py_neighbor_mass(graph, tau):
    return graph.dense @ tau


def py_block_edge_counts(graph, labels, K):
    onehot = np.zeros((graph.n, K))
    onehot[np.arange(graph.n), labels] = 1.0
    return np.rint(onehot.T @ graph.dense @ onehot).astype(np.int64)


def neighbor_mass(graph, tau):
    """``A @ tau``: responsibility mass of each node's neighbours per block."""
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    if _ext is None:
        return py_neighbor_mass(graph, tau)
    indptr, indices = graph.csr
    return _ext.neighbor_mass(indptr, indices, tau)


def block_edge_counts(graph, labels, K):
    """Ordered-pair edge counts ``sum_ij a_ij [c_i = k][c_j = l]``."""
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _ext is None:
        return py_block_edge_counts(graph, labels, K)
    indptr, indices = graph.csr
    return _ext.block_edge_counts(indptr, indices, labels, int(K))
