"""Model parameters, forward sampling and the complete-data log-likelihood."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from angm.graph import BINARY, CONTINUOUS, AttributedGraph

PROB_EPS = 1e-6
LOG_VAR_BOUND = 10.0
LOG_2PI = np.log(2.0 * np.pi)


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


@dataclass
class ModelParams:
    """Block weights ``omega``, link matrix ``pi`` and per-block embedding Gaussians."""

    omega: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    attr_mode: str = BINARY

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.pi = np.asarray(self.pi, dtype=np.float64)
        K = self.omega.shape[0]
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(K, -1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(K, -1)
        if self.pi.shape != (K, K):
            raise ValueError(f"pi must be {K}x{K}, got {self.pi.shape}")
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma shapes differ")
        if np.any(self.omega < 0) or abs(self.omega.sum() - 1.0) > 1e-12:
            raise ValueError("omega must be a probability vector")
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValueError("pi entries must lie in [0, 1]")
        if not np.allclose(self.pi, self.pi.T, rtol=0, atol=1e-12):
            raise ValueError("pi must be symmetric")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma entries must be positive")

    @property
    def K(self) -> int:
        return self.omega.shape[0]

    @property
    def D(self) -> int:
        return self.mu.shape[1]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "D": self.D,
            "attr_mode": self.attr_mode,
            "omega": self.omega.tolist(),
            "pi": self.pi.ravel().tolist(),
            "mu": self.mu.ravel().tolist(),
            "sigma": self.sigma.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        K, D = int(doc["K"]), int(doc["D"])
        return cls(
            omega=np.array(doc["omega"], dtype=np.float64),
            pi=np.array(doc["pi"], dtype=np.float64).reshape(K, K),
            mu=np.array(doc["mu"], dtype=np.float64).reshape(K, D),
            sigma=np.array(doc["sigma"], dtype=np.float64).reshape(K, D),
            attr_mode=doc.get("attr_mode", BINARY),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LatentSample:
    assignments: np.ndarray
    embeddings: np.ndarray


@dataclass
class DecoderOutput:
    """Attribute distribution parameters per node.

    ``upsilon`` holds Bernoulli probabilities (binary mode) or Gaussian means
    (continuous mode); ``log_lambda_sq`` is only set in continuous mode.
    """

    upsilon: np.ndarray
    log_lambda_sq: Optional[np.ndarray] = None

    @property
    def lam(self) -> Optional[np.ndarray]:
        if self.log_lambda_sq is None:
            return None
        return np.exp(0.5 * self.log_lambda_sq)

    @property
    def attr_mode(self) -> str:
        return BINARY if self.log_lambda_sq is None else CONTINUOUS


def rng_streams(seed, count=4):
    """Independent generators for assignment, embedding, attribute and link draws."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def sample_assignments(rng, omega, n):
    return rng.choice(len(omega), size=n, p=omega)


def sample_links(rng, pi, assignments):
    n = assignments.shape[0]
    u = rng.random((n, n))
    probs = np.asarray(pi)[assignments[:, None], assignments[None, :]]
    adj = np.triu(u < probs, k=1)
    return (adj | adj.T).astype(np.uint8)


def sample_network(
    params: ModelParams,
    decoder: Callable[[np.ndarray], DecoderOutput],
    n: int,
    seed=None,
) -> tuple[AttributedGraph, LatentSample]:
    """Draw an attributed network from the generative process."""
    r_assign, r_embed, r_attr, r_link = rng_streams(seed)
    c = sample_assignments(r_assign, params.omega, n)
    z = params.mu[c] + params.sigma[c] * r_embed.standard_normal((n, params.D))
    out = decoder(z)
    ups = np.asarray(out.upsilon, dtype=np.float64)
    if ups.shape[0] != n:
        raise ValueError(f"decoder returned {ups.shape[0]} rows for {n} nodes")
    if params.attr_mode == BINARY:
        if out.log_lambda_sq is not None:
            raise ValueError("binary mode decoder must not emit log_lambda_sq")
        x = (r_attr.random(ups.shape) < ups).astype(np.float64)
    else:
        if out.log_lambda_sq is None or out.log_lambda_sq.shape != ups.shape:
            raise ValueError("continuous mode decoder must emit log_lambda_sq like upsilon")
        x = ups + out.lam * r_attr.standard_normal(ups.shape)
    adj = sample_links(r_link, params.pi, c)
    graph = AttributedGraph(adj, x, params.attr_mode, labels=None)
    return graph, LatentSample(c, z)


def attribute_log_prob(x, out: DecoderOutput) -> np.ndarray:
    """Elementwise log p(x | decoder output) with clamped parameters."""
    if out.log_lambda_sq is None:
        ups = clamp_prob(out.upsilon)
        return x * np.log(ups) + (1.0 - x) * np.log1p(-ups)
    lv = np.clip(out.log_lambda_sq, -LOG_VAR_BOUND, LOG_VAR_BOUND)
    return -0.5 * (LOG_2PI + lv + (x - out.upsilon) ** 2 * np.exp(-lv))


def complete_log_likelihood(
    graph: AttributedGraph,
    latent: LatentSample,
    params: ModelParams,
    dec_out: DecoderOutput,
) -> float:
    """log p(X, A, Z, c) with links summed over ordered pairs ``i != j``."""
    c = np.asarray(latent.assignments)
    z = np.asarray(latent.embeddings, dtype=np.float64).reshape(graph.n, params.D)
    pi = clamp_prob(params.pi)[c[:, None], c[None, :]]
    a = graph.adjacency.astype(np.float64)
    link = a * np.log(pi) + (1.0 - a) * np.log1p(-pi)
    np.fill_diagonal(link, 0.0)

    attr = attribute_log_prob(graph.attributes, dec_out).sum()

    mu, sig = params.mu[c], params.sigma[c]
    emb = (-0.5 * LOG_2PI - np.log(sig) - 0.5 * ((z - mu) / sig) ** 2).sum()

    with np.errstate(divide="ignore"):
        assign = np.log(params.omega[c]).sum()
    return float(link.sum() + attr + emb + assign)
