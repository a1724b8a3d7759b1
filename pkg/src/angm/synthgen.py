"""Planted-block benchmark networks with block-aligned binary attributes.

Four link templates are supported: ``community`` (dense diagonal),
``multipartite`` (dense off-diagonal), ``hub`` (the last block links densely
to everyone) and ``hybrid`` (``k1`` community blocks followed by ``k2``
multipartite blocks).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from angm.graph import BINARY, AttributedGraph, graph_paths, write_graph
from angm.model import rng_streams, sample_assignments, sample_links

PATTERNS = ("community", "multipartite", "hub", "hybrid")
MAX_ASSIGNMENT_RETRIES = 100


@dataclass
class SyntheticSpec:
    n: int = 128
    K: int = 4
    pattern: str = "community"
    p_s1: float = 0.4
    p_s2: float = 0.1
    p_a1: float = 0.4
    p_a2: float = 0.1
    h: int = 50
    k1: Optional[int] = None
    k2: Optional[int] = None
    omega: Optional[list] = None
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.n < 1 or self.K < 1 or self.h < 1:
            raise ValueError("n, K and h must be positive")
        for name in ("p_s1", "p_s2", "p_a1", "p_a2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.pattern == "hybrid":
            if self.k1 is None and self.k2 is None:
                self.k1 = self.K // 2
            if self.k1 is None:
                self.k1 = self.K - self.k2
            if self.k2 is None:
                self.k2 = self.K - self.k1
            if self.k1 < 0 or self.k2 < 0 or self.k1 + self.k2 != self.K:
                raise ValueError(f"hybrid pattern needs k1 + k2 = K, got {self.k1} + {self.k2} != {self.K}")
        if self.omega is None:
            self.omega = [1.0 / self.K] * self.K
        omega = np.asarray(self.omega, dtype=np.float64)
        if omega.shape != (self.K,) or np.any(omega < 0) or abs(omega.sum() - 1.0) > 1e-9:
            raise ValueError("omega must be a length-K probability vector")

    @property
    def M(self) -> int:
        return self.K * self.h

    def to_dict(self) -> dict:
        return asdict(self)


def build_pi(spec: SyntheticSpec) -> np.ndarray:
    K, hi, lo = spec.K, spec.p_s1, spec.p_s2
    same = np.eye(K, dtype=bool)
    if spec.pattern == "community":
        return np.where(same, hi, lo)
    if spec.pattern == "multipartite":
        return np.where(same, lo, hi)
    if spec.pattern == "hub":
        hub = np.zeros((K, K), dtype=bool)
        hub[K - 1, :] = hub[:, K - 1] = True
        return np.where(same | hub, hi, lo)
    if spec.pattern == "hybrid":
        pi = np.full((K, K), lo)
        k1 = spec.k1
        pi[:k1, :k1] = np.where(np.eye(k1, dtype=bool), hi, lo)
        pi[k1:, k1:] = np.where(np.eye(K - k1, dtype=bool), lo, hi)
        return pi
    raise ValueError(f"unknown pattern {spec.pattern!r}")


def build_upsilon(assignments, spec: SyntheticSpec) -> np.ndarray:
    """Attribute probabilities: ``p_a1`` on the node's own stripe of ``h`` columns."""
    c = np.asarray(assignments, dtype=np.int64)
    stripe = np.arange(spec.M) // spec.h
    return np.where(stripe[None, :] == c[:, None], spec.p_a1, spec.p_a2)


def generate(spec: SyntheticSpec) -> AttributedGraph:
    """Sample a network; labels are the planted blocks."""
    r_assign, _, r_attr, r_link = rng_streams(spec.seed)
    omega = np.asarray(spec.omega, dtype=np.float64)
    for _ in range(MAX_ASSIGNMENT_RETRIES):
        c = sample_assignments(r_assign, omega, spec.n)
        counts = np.bincount(c, minlength=spec.K)
        if spec.n < spec.K or np.all(counts[omega > 0] > 0):
            break
    x = (r_attr.random((spec.n, spec.M)) < build_upsilon(c, spec)).astype(np.float64)
    adj = sample_links(r_link, build_pi(spec), c)
    labels = _compact(c)
    return AttributedGraph(adj, x, BINARY, labels)


def _compact(c):
    # label ids must be contiguous; only relevant if a block stayed empty
    _, inv = np.unique(c, return_inverse=True)
    return inv.astype(np.int64)


def write_synthetic(spec: SyntheticSpec, prefix) -> dict:
    """Generate and write the edge/attribute/label triple plus a spec JSON."""
    graph = generate(spec)
    edges, attrs, labels = graph_paths(prefix)
    write_graph(graph, edges, attrs, labels)
    spec_path = str(prefix) + ".spec.json"
    with open(spec_path, "w") as fh:
        json.dump({**spec.to_dict(), "pi": build_pi(spec).tolist(), "M": spec.M}, fh, indent=2)
    return {"edges": edges, "attributes": attrs, "labels": labels, "spec": spec_path, "graph": graph}
