"""Attributed network container and the plain-text file formats around it.

File formats
------------
edges
    One ``i j`` pair of 0-based node ids per line. Lines starting with ``#``
    and blank lines are ignored.
attributes
    CSV without header, row ``r`` holds the attribute vector of node ``r``.
labels
    One integer block id per line.
embeddings
    CSV without header, one row per node, shortest round-trip float repr.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

BINARY = "binary"
CONTINUOUS = "continuous"
ATTR_MODES = (BINARY, CONTINUOUS)


class GraphFormatError(ValueError):
    """Raised for malformed or inconsistent graph files."""


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected graph with a node attribute matrix.

    ``adjacency`` is a dense symmetric ``uint8`` matrix with a zero diagonal,
    ``attributes`` an ``n x M`` float matrix. ``labels`` are optional ground
    truth block ids.
    """

    adjacency: np.ndarray
    attributes: np.ndarray
    attr_mode: str = BINARY
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        adj = np.ascontiguousarray(self.adjacency, dtype=np.uint8)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphFormatError(f"adjacency must be square, got {adj.shape}")
        if np.any(adj > 1):
            raise GraphFormatError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise GraphFormatError("adjacency must be symmetric")
        if np.any(np.diagonal(adj)):
            raise GraphFormatError("adjacency must have a zero diagonal")
        n = adj.shape[0]

        x = np.asarray(self.attributes, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = np.zeros((n, 0))
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphFormatError(
                f"attribute matrix has {x.shape[0] if x.ndim else 0} rows, expected {n}"
            )
        if self.attr_mode not in ATTR_MODES:
            raise GraphFormatError(f"unknown attribute mode {self.attr_mode!r}")
        if self.attr_mode == BINARY and not np.all((x == 0) | (x == 1)):
            raise GraphFormatError("binary attribute mode requires entries in {0, 1}")
        if not np.all(np.isfinite(x)):
            raise GraphFormatError("attributes must be finite")

        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise GraphFormatError(f"expected {n} labels, got {labels.shape[0]}")
            if n and set(np.unique(labels).tolist()) != set(range(int(labels.max()) + 1)):
                raise GraphFormatError("label ids must form a contiguous range from 0")

        adj.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "attributes", x)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.attributes.shape[1]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Row pointer and column index arrays of the adjacency (both directions)."""
        rows, cols = np.nonzero(self.adjacency)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n), out=indptr[1:])
        return indptr, cols.astype(np.int64)

    @cached_property
    def dense(self) -> np.ndarray:
        """Float64 copy of the adjacency for BLAS-backed products."""
        return self.adjacency.astype(np.float64)

    def edge_list(self) -> np.ndarray:
        """Sorted unique undirected edges as an ``(E, 2)`` array with ``i < j``."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return np.column_stack([i, j]).astype(np.int64)

    @classmethod
    def from_edges(cls, n, edges, attributes, attr_mode=BINARY, labels=None):
        adj = np.zeros((n, n), dtype=np.uint8)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise GraphFormatError("edge endpoint out of range")
            adj[edges[:, 0], edges[:, 1]] = 1
            adj[edges[:, 1], edges[:, 0]] = 1
        np.fill_diagonal(adj, 0)
        return cls(adj, attributes, attr_mode, labels)


def _read_edges(path):
    edges = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'i j', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
            if i < 0 or j < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            edges.append((i, j))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _read_attributes(path):
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: malformed attribute row") from None
            if len(rows[-1]) != len(rows[0]):
                raise GraphFormatError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}"
                )
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def read_labels(path) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: malformed label {line!r}") from None
    return np.array(labels, dtype=np.int64)


def load_graph(edge_path, attr_path, label_path=None, attr_mode=BINARY) -> AttributedGraph:
    """Read an attributed graph from an edge list, attribute CSV and label file.

    The node count is the number of attribute rows, so isolated nodes with
    the highest ids are kept. Edges are symmetrized, duplicates collapse and
    self-loops are dropped with a warning.
    """
    edges = _read_edges(edge_path)
    x = _read_attributes(attr_path)
    n = x.shape[0]
    if edges.size and edges.max() >= n:
        bad = int(edges.max())
        raise GraphFormatError(f"node id {bad} out of range for {n} attribute rows")
    loops = edges[:, 0] == edges[:, 1]
    if loops.any():
        log.warning("dropping %d self-loop(s) from %s", int(loops.sum()), edge_path)
        edges = edges[~loops]
    labels = read_labels(label_path) if label_path is not None else None
    if labels is not None and labels.shape[0] != n:
        raise GraphFormatError(f"label file has {labels.shape[0]} rows, expected {n}")
    return AttributedGraph.from_edges(n, edges, x, attr_mode, labels)


def format_float(value: float) -> str:
    """Shortest round-trip decimal, with integral values written without ``.0``."""
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"cannot write non-finite value {value}")
    s = repr(value)
    if s.endswith(".0"):
        s = s[:-2]
    return s


def write_matrix(values, path):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    with open(path, "w") as fh:
        for row in values:
            fh.write(",".join(format_float(v) for v in row))
            fh.write("\n")


def read_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_embeddings(emb, path):
    """Write an ``n x D`` embedding matrix as CSV, one node per line."""
    emb = np.asarray(emb, dtype=np.float64)
    if not np.all(np.isfinite(emb)):
        raise ValueError("embeddings must be finite")
    write_matrix(emb, path)


read_embeddings = read_matrix


def write_labels(labels, path):
    with open(path, "w") as fh:
        for v in np.asarray(labels, dtype=np.int64):
            fh.write(f"{int(v)}\n")


def write_graph(graph: AttributedGraph, edge_path, attr_path, label_path=None):
    """Write the canonical file triple: sorted unique edges, attributes, labels."""
    with open(edge_path, "w") as fh:
        for i, j in graph.edge_list():
            fh.write(f"{i} {j}\n")
    if graph.attr_mode == BINARY:
        with open(attr_path, "w") as fh:
            for row in graph.attributes.astype(np.int64):
                fh.write(",".join(map(str, row)))
                fh.write("\n")
    else:
        write_matrix(graph.attributes, attr_path)
    if label_path is not None:
        if graph.labels is None:
            raise ValueError("graph has no labels to write")
        write_labels(graph.labels, label_path)


def graph_paths(prefix) -> tuple[str, str, str]:
    """Conventional ``<prefix>.edges / .attrs.csv / .labels`` file names."""
    prefix = os.fspath(prefix)
    return prefix + ".edges", prefix + ".attrs.csv", prefix + ".labels"
