"""Variational learning: ELBO, closed-form block updates and the training loop.

Link sums run over ordered pairs ``i != j`` of the symmetric adjacency. The
responsibility update is a Jacobi sweep: every row is recomputed from the
previous responsibilities.
"""
from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from angm import kernels
from angm.graph import BINARY, AttributedGraph
from angm.model import PROB_EPS, ModelParams, attribute_log_prob, clamp_prob
from angm.neural import (
    Adam,
    EncoderOutput,
    Mlp,
    NonFiniteError,
    decode,
    encode,
    gaussian_penalty,
    make_decoder,
    make_encoder,
    nn_loss_and_grads,
    reparameterize,
)

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
EMPTY_BLOCK_MASS = 1e-10
TAU_DIRICHLET_ALPHA = 5.0
CONVERGENCE_WINDOW = 10
KMEANS_RESTARTS = 10
WARM_TAU_SMOOTHING = 0.01


@dataclass
class VariationalState:
    tau: np.ndarray
    enc: EncoderOutput
    z: Optional[np.ndarray] = None


@dataclass
class TrainConfig:
    K: int
    D: int = 20
    hidden: int = 32
    n_layers: int = 2
    lr: float = 0.001
    max_iter: int = 600
    samples: int = 1
    tol: float = 1e-6
    restarts: int = 5
    seed: int = 0
    attr_mode: str = BINARY
    inner_steps: int = 5
    warmup_iters: int = 200
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("K", "D", "hidden", "samples", "restarts", "inner_steps", "n_jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 0 or self.n_layers < 0 or self.warmup_iters < 0:
            raise ValueError("max_iter, n_layers and warmup_iters must be non-negative")
        if not self.lr > 0 or not self.tol > 0:
            raise ValueError("lr and tol must be positive")

    @property
    def hidden_sizes(self):
        return [self.hidden] * self.n_layers


@dataclass
class Networks:
    encoder: Mlp
    decoder: Mlp
    enc_opt: Adam
    dec_opt: Adam

    def to_dict(self):
        return {
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "encoder_adam": self.enc_opt.to_dict(),
            "decoder_adam": self.dec_opt.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            Mlp.from_dict(doc["encoder"]),
            Mlp.from_dict(doc["decoder"]),
            Adam.from_dict(doc["encoder_adam"]),
            Adam.from_dict(doc["decoder_adam"]),
        )


@dataclass
class TrainResult:
    embeddings: np.ndarray
    tau: np.ndarray
    params: ModelParams
    nets: Networks
    history: list
    seed: int
    converged: bool = False
    restart_elbos: list = field(default_factory=list)

    @property
    def elbo(self) -> float:
        return self.history[-1]["elbo"] if self.history else float("nan")

    @property
    def assignments(self) -> np.ndarray:
        return np.argmax(self.tau, axis=1)


# --- ELBO -----------------------------------------------------------------


def _log_pi(pi):
    p = clamp_prob(pi)
    return np.log(p), np.log1p(-p)


def link_scores(graph: AttributedGraph, tau, pi) -> np.ndarray:
    """``s[i, k] = sum_{j != i} sum_l tau_jl [a_ij log pi_kl + (1 - a_ij) log(1 - pi_kl)]``."""
    log_p, log_q = _log_pi(pi)
    edge = kernels.neighbor_mass(graph, tau)
    non_edge = tau.sum(axis=0)[None, :] - tau - edge
    return edge @ log_p.T + non_edge @ log_q.T


def elbo_terms(graph: AttributedGraph, vstate: VariationalState, params: ModelParams, dec_out) -> dict:
    """The five ELBO terms; ``dec_out`` may be one decoder output or a list of samples."""
    tau = vstate.tau
    outs = dec_out if isinstance(dec_out, (list, tuple)) else [dec_out]
    link = float(np.sum(tau * link_scores(graph, tau, params.pi)))
    recon = float(np.mean([attribute_log_prob(graph.attributes, o).sum() for o in outs]))
    enc = vstate.enc
    gauss = -0.5 * float(
        np.sum(tau * gaussian_penalty(enc.mu_hat, enc.var_hat, params.mu, params.sigma**2))
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tau > 0, tau * (np.log(params.omega)[None, :] - np.log(tau)), 0.0)
    assign = float(ratio.sum())
    entropy = 0.5 * float(np.sum(1.0 + enc.log_sigma_hat_sq))
    terms = {"link": link, "reconstruction": recon, "gaussian": gauss, "assignment": assign, "entropy": entropy}
    for name, val in terms.items():
        if not np.isfinite(val):
            raise NonFiniteError(name, val)
    terms["elbo"] = link + recon + gauss + assign + entropy
    return terms


def elbo(graph, vstate, params, dec_out) -> float:
    return elbo_terms(graph, vstate, params, dec_out)["elbo"]


# --- closed-form updates ----------------------------------------------------


def tau_log_scores(graph, vstate, params) -> np.ndarray:
    """Unnormalized log responsibilities.

    The link evidence enters twice because every unordered pair appears as
    ``(i, j)`` and ``(j, i)`` in the ordered-pair objective.
    """
    enc = vstate.enc
    link = 2.0 * link_scores(graph, vstate.tau, params.pi)
    gauss = -0.5 * gaussian_penalty(enc.mu_hat, enc.var_hat, params.mu, params.sigma**2)
    with np.errstate(divide="ignore"):
        prior = np.log(params.omega)
    return link + gauss + prior[None, :]


def update_tau(graph, vstate, params) -> np.ndarray:
    scores = tau_log_scores(graph, vstate, params)
    return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


def update_omega(tau) -> np.ndarray:
    omega = tau.mean(axis=0)
    return omega / omega.sum()


def pair_mass(graph, tau):
    """Ordered-pair edge mass and pair mass between blocks, self-pairs excluded."""
    edge = tau.T @ kernels.neighbor_mass(graph, tau)
    col = tau.sum(axis=0)
    pairs = np.outer(col, col) - tau.T @ tau
    return 0.5 * (edge + edge.T), 0.5 * (pairs + pairs.T)


def update_pi(graph, tau) -> np.ndarray:
    edge, pairs = pair_mass(graph, tau)
    empty = pairs <= EMPTY_BLOCK_MASS
    if np.any(empty):
        warnings.warn("block pair with no responsibility mass; link probability set to floor")
    with np.errstate(divide="ignore", invalid="ignore"):
        pi = np.where(empty, PROB_EPS, edge / np.where(empty, 1.0, pairs))
    return clamp_prob(pi)


def update_mu_sigma(tau, enc: EncoderOutput, rng=None):
    weight = tau.sum(axis=0)
    mu_hat, var_hat = enc.mu_hat, enc.var_hat
    safe = np.where(weight > EMPTY_BLOCK_MASS, weight, 1.0)
    mu = (tau.T @ mu_hat) / safe[:, None]
    sq = (mu_hat[:, None, :] - mu[None, :, :]) ** 2
    var = (tau.T @ var_hat + np.einsum("ik,ikd->kd", tau, sq)) / safe[:, None]
    sigma = np.maximum(np.sqrt(var), SIGMA_FLOOR)
    empty = weight <= EMPTY_BLOCK_MASS
    if np.any(empty):
        rng = rng if rng is not None else np.random.default_rng(0)
        for k in np.flatnonzero(empty):
            warnings.warn(f"block {k} is empty; re-seeding its mean from a random node")
            mu[k] = mu_hat[rng.integers(tau.shape[0])]
            sigma[k] = 1.0
    return mu, sigma


# --- training -----------------------------------------------------------------


def init_state(graph: AttributedGraph, config: TrainConfig, seed):
    rng = np.random.default_rng(seed)
    K = config.K
    tau = rng.dirichlet(np.full(K, TAU_DIRICHLET_ALPHA), size=graph.n)
    encoder = make_encoder(graph.n_attributes, config.hidden_sizes, config.D, rng)
    decoder = make_decoder(config.D, config.hidden_sizes, graph.n_attributes, config.attr_mode, rng)
    nets = Networks(encoder, decoder, Adam(lr=config.lr), Adam(lr=config.lr))
    enc = encode(encoder, graph.attributes)
    mu, sigma = update_mu_sigma(tau, enc, rng)
    params = ModelParams(np.full(K, 1.0 / K), update_pi(graph, tau), mu, sigma, config.attr_mode)
    return VariationalState(tau, enc), params, nets


def _nn_steps(x, vstate, params, nets, config, rng, steps):
    for _ in range(steps):
        eps = rng.standard_normal((config.samples, x.shape[0], config.D))
        _, g_enc, g_dec, _ = nn_loss_and_grads(
            x, nets.encoder, nets.decoder, vstate.tau, params.mu, params.sigma, eps, config.attr_mode, with_loss=False
        )
        nets.enc_opt.step(nets.encoder, g_enc)
        nets.dec_opt.step(nets.decoder, g_dec)
    vstate.enc = encode(nets.encoder, x)


def kmeans_labels(x, K, rng, restarts=KMEANS_RESTARTS):
    """Lowest-inertia k-means++ partition over several seeded restarts."""
    best, best_sse = None, np.inf
    for _ in range(restarts):
        centers, labels = kmeans2(x, K, minit="++", seed=int(rng.integers(2**31)))
        sse = float(np.sum((x - centers[labels]) ** 2))
        if sse < best_sse:
            best, best_sse = labels, sse
    return best


def warm_start(graph: AttributedGraph, vstate, params, nets, config: TrainConfig, rng):
    """Pre-train the networks as a plain VAE, then re-seed the responsibilities
    and block parameters from a k-means partition of the encoder means.

    Near-uniform responsibilities carry no block signal, so the closed-form
    updates would otherwise lock onto whatever partition the untrained encoder
    happens to suggest.
    """
    if config.warmup_iters == 0 or config.K == 1:
        return vstate, params
    x = graph.attributes
    # a standard normal prior for every block, i.e. a plain VAE
    prior = ModelParams(
        params.omega, params.pi, np.zeros_like(params.mu), np.ones_like(params.sigma), config.attr_mode
    )
    for _ in range(config.warmup_iters):
        _nn_steps(x, vstate, prior, nets, config, rng, config.inner_steps)
    labels = kmeans_labels(vstate.enc.mu_hat, config.K, rng)
    tau = np.full((graph.n, config.K), WARM_TAU_SMOOTHING / config.K)
    tau[np.arange(graph.n), labels] += 1.0 - WARM_TAU_SMOOTHING
    vstate.tau = tau
    mu, sigma = update_mu_sigma(tau, vstate.enc, rng)
    params = ModelParams(update_omega(tau), update_pi(graph, tau), mu, sigma, config.attr_mode)
    return vstate, params


def _sample_decoder_outputs(graph, vstate, nets, attr_mode, samples, rng):
    outs = []
    for _ in range(samples):
        z = reparameterize(vstate.enc, rng.standard_normal(vstate.enc.mu_hat.shape))
        outs.append(decode(nets.decoder, z, attr_mode))
    vstate.z = z
    return outs


def _converged(history, tol):
    if len(history) <= CONVERGENCE_WINDOW:
        return False
    vals = np.array([h["elbo"] for h in history[-CONVERGENCE_WINDOW - 1 :]])
    rel = np.abs(np.diff(vals)) / np.maximum(np.abs(vals[1:]), 1e-300)
    return bool(np.all(rel < tol))


def fit_once(graph: AttributedGraph, config: TrainConfig, seed, callback: Optional[Callable] = None) -> TrainResult:
    """One training run from a single seeded initialization."""
    vstate, params, nets = init_state(graph, config, seed)
    rng = np.random.default_rng([seed, 1])
    x = graph.attributes
    history = []
    converged = False
    vstate, params = warm_start(graph, vstate, params, nets, config, rng)
    for it in range(1, config.max_iter + 1):
        t0 = time.perf_counter()
        vstate.tau = update_tau(graph, vstate, params)
        omega = update_omega(vstate.tau)
        pi = update_pi(graph, vstate.tau)
        mu, sigma = update_mu_sigma(vstate.tau, vstate.enc, rng)
        params = ModelParams(omega, pi, mu, sigma, config.attr_mode)
        _nn_steps(x, vstate, params, nets, config, rng, config.inner_steps)
        outs = _sample_decoder_outputs(graph, vstate, nets, config.attr_mode, config.samples, rng)
        terms = elbo_terms(graph, vstate, params, outs)
        terms["iteration"] = it
        terms["seconds"] = time.perf_counter() - t0
        history.append(terms)
        if callback is not None:
            callback(it, vstate, params, nets, terms)
        if _converged(history, config.tol):
            converged = True
            break
    return TrainResult(vstate.enc.mu_hat.copy(), vstate.tau, params, nets, history, seed, converged)


def _fit_task(args):
    graph, config, seed = args
    try:
        return fit_once(graph, config, seed)
    except (NonFiniteError, FloatingPointError) as exc:
        log.warning("restart with seed %d failed: %s", seed, exc)
        return exc


def train(graph: AttributedGraph, config: TrainConfig, callback: Optional[Callable] = None) -> TrainResult:
    """Fit with ``config.restarts`` seeded restarts; keep the highest final ELBO."""
    seeds = [config.seed + r for r in range(config.restarts)]
    if config.n_jobs > 1 and callback is None and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_fit_task, [(graph, config, s) for s in seeds]))
    else:
        results = []
        for s in seeds:
            try:
                results.append(fit_once(graph, config, s, callback))
            except (NonFiniteError, FloatingPointError) as exc:
                log.warning("restart with seed %d failed: %s", s, exc)
                results.append(exc)
    good = [r for r in results if isinstance(r, TrainResult)]
    if not good:
        raise RuntimeError(f"all {len(seeds)} restarts failed; last error: {results[-1]}")
    # max_iter = 0 leaves an empty history; those runs compare equal.
    best = max(good, key=lambda r: r.elbo if r.history else -np.inf)
    best.restart_elbos = [r.elbo if isinstance(r, TrainResult) else float("nan") for r in results]
    return best


def initial_result(graph: AttributedGraph, config: TrainConfig) -> TrainResult:
    """Initialization-only result, used when zero iterations are requested."""
    vstate, params, nets = init_state(graph, config, config.seed)
    return TrainResult(vstate.enc.mu_hat.copy(), vstate.tau, params, nets, [], config.seed)


# --- persistence ----------------------------------------------------------------

HISTORY_FIELDS = ["iteration", "elbo", "link", "reconstruction", "gaussian", "assignment", "entropy"]


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for h in history:
            w.writerow([h["iteration"]] + [repr(float(h[k])) for k in HISTORY_FIELDS[1:]])


def save_checkpoint(path, params: ModelParams, nets: Networks, tau=None, config: Optional[TrainConfig] = None, iteration=0):
    doc = {"iteration": iteration, "model": params.to_dict(), "networks": nets.to_dict()}
    if tau is not None:
        doc["tau"] = {"shape": list(tau.shape), "values": np.asarray(tau).ravel().tolist()}
    if config is not None:
        doc["config"] = asdict(config)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    params = ModelParams.from_dict(doc["model"])
    nets = Networks.from_dict(doc["networks"])
    tau = None
    if "tau" in doc:
        tau = np.array(doc["tau"]["values"], dtype=np.float64).reshape(doc["tau"]["shape"])
    return params, nets, tau, doc

