"""Encoder/decoder perceptrons with hand-written backpropagation and Adam.

Both networks share one layout: a ReLU trunk of fully connected layers
followed by one or more linear heads. Weights are stored ``(fan_in, fan_out)``
so a layer computes ``h @ W + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from angm.graph import BINARY, CONTINUOUS
from angm.model import LOG_VAR_BOUND, PROB_EPS, DecoderOutput, attribute_log_prob


class NonFiniteError(FloatingPointError):
    """A loss or objective term evaluated to NaN or infinity."""

    def __init__(self, term, value=None):
        super().__init__(f"non-finite value in term {term!r}: {value}")
        self.term = term


@dataclass
class Mlp:
    """ReLU trunk plus linear output heads."""

    weights: list
    biases: list
    n_heads: int

    @classmethod
    def init(cls, n_in, hidden, head_widths, rng) -> "Mlp":
        widths = [n_in, *hidden]
        weights, biases = [], []
        shapes = list(zip(widths[:-1], widths[1:])) + [(widths[-1], w) for w in head_widths]
        for fan_in, fan_out in shapes:
            bound = np.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, len(head_widths))

    @classmethod
    def zeros_like(cls, other: "Mlp") -> "Mlp":
        return cls(
            [np.zeros_like(w) for w in other.weights],
            [np.zeros_like(b) for b in other.biases],
            other.n_heads,
        )

    @property
    def n_trunk(self) -> int:
        return len(self.weights) - self.n_heads

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def params(self) -> list:
        return [*self.weights, *self.biases]

    def forward(self, x):
        """Return the head outputs and the trunk activations needed by ``backward``."""
        if x.shape[1] != self.n_in:
            raise ValueError(f"input width {x.shape[1]} does not match layer width {self.n_in}")
        acts = [x]
        h = x
        for W, b in zip(self.weights[: self.n_trunk], self.biases[: self.n_trunk]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        heads = [h @ W + b for W, b in zip(self.weights[self.n_trunk :], self.biases[self.n_trunk :])]
        return heads, acts

    def backward(self, acts, head_grads):
        """Backpropagate head gradients; returns ``(grads, grad_wrt_input)``."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        h = acts[-1]
        dh = np.zeros_like(h)
        for idx, g in enumerate(head_grads):
            k = self.n_trunk + idx
            gw[k] = h.T @ g
            gb[k] = g.sum(axis=0)
            dh += g @ self.weights[k].T
        for k in range(self.n_trunk - 1, -1, -1):
            dh = dh * (acts[k + 1] > 0)
            gw[k] = acts[k].T @ dh
            gb[k] = dh.sum(axis=0)
            dh = dh @ self.weights[k].T
        return Mlp(gw, gb, self.n_heads), dh

    def to_dict(self) -> dict:
        return {
            "n_heads": self.n_heads,
            "weights": [{"shape": list(w.shape), "values": w.ravel().tolist()} for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc) -> "Mlp":
        weights = [np.array(w["values"], dtype=np.float64).reshape(w["shape"]) for w in doc["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
        return cls(weights, biases, int(doc["n_heads"]))


def make_encoder(n_attributes, hidden, dim, rng) -> Mlp:
    return Mlp.init(n_attributes, hidden, [dim, dim], rng)


def make_decoder(dim, hidden, n_attributes, attr_mode, rng) -> Mlp:
    heads = [n_attributes] if attr_mode == BINARY else [n_attributes, n_attributes]
    return Mlp.init(dim, hidden, heads, rng)


@dataclass
class EncoderOutput:
    mu_hat: np.ndarray
    log_sigma_hat_sq: np.ndarray

    @property
    def var_hat(self):
        return np.exp(self.log_sigma_hat_sq)


def encode(net: Mlp, x) -> EncoderOutput:
    (mu_hat, log_var), _ = net.forward(np.asarray(x, dtype=np.float64))
    return EncoderOutput(mu_hat, np.clip(log_var, -LOG_VAR_BOUND, LOG_VAR_BOUND))


def reparameterize(enc: EncoderOutput, eps) -> np.ndarray:
    return enc.mu_hat + np.exp(0.5 * enc.log_sigma_hat_sq) * eps


def decode(net: Mlp, z, attr_mode=BINARY) -> DecoderOutput:
    heads, _ = net.forward(np.asarray(z, dtype=np.float64))
    return _decoder_output(heads, attr_mode)


def _decoder_output(heads, attr_mode):
    if attr_mode == BINARY:
        return DecoderOutput(np.clip(sigmoid(heads[0]), PROB_EPS, 1.0 - PROB_EPS))
    if attr_mode == CONTINUOUS:
        return DecoderOutput(heads[0], np.clip(heads[1], -LOG_VAR_BOUND, LOG_VAR_BOUND))
    raise ValueError(f"unknown attribute mode {attr_mode!r}")


def gaussian_penalty(mu_hat, var_hat, mu, var):
    """``n x K`` matrix of sum_d (log var_kd + var_hat_id / var_kd + (mu_hat_id - mu_kd)^2 / var_kd)."""
    inv_var = 1.0 / var
    sq = (mu_hat[:, None, :] - mu[None, :, :]) ** 2
    return np.log(var).sum(axis=1)[None, :] + var_hat @ inv_var.T + np.einsum("ikd,kd->ik", sq, inv_var)


def _inside(raw, bound=LOG_VAR_BOUND):
    return (raw > -bound) & (raw < bound)


@dataclass
class LossTerms:
    reconstruction: float
    gaussian: float
    entropy: float

    @property
    def loss(self) -> float:
        return -self.reconstruction + self.gaussian - self.entropy


def nn_loss_and_grads(x, encoder: Mlp, decoder: Mlp, tau, mu, sigma, eps, attr_mode=BINARY, with_loss=True):
    """Negated network-dependent part of the ELBO and its exact gradients.

    ``eps`` has shape ``(L, n, D)``; the reconstruction term is averaged over
    the ``L`` reparameterized samples. Returns ``(loss, enc_grads, dec_grads,
    terms)`` where the gradient objects mirror the network layouts. With
    ``with_loss=False`` only the gradients are computed and ``loss`` and
    ``terms`` are None.
    """
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[None]
    L, n, D = eps.shape

    (mu_hat, lv_raw), enc_acts = encoder.forward(x)
    lv = np.clip(lv_raw, -LOG_VAR_BOUND, LOG_VAR_BOUND)
    sd_hat = np.exp(0.5 * lv)
    var_hat = sd_hat * sd_hat

    z = (mu_hat[None] + sd_hat[None] * eps).reshape(L * n, D)
    heads, dec_acts = decoder.forward(z)
    xs = np.broadcast_to(x, (L, n, x.shape[1])).reshape(L * n, -1)

    var = sigma * sigma
    inv_var = 1.0 / var
    w = tau @ inv_var  # n x D, sum_k tau_ik / sigma_kd^2

    loss = terms = None
    if with_loss:
        recon = attribute_log_prob(xs, _decoder_output(heads, attr_mode)).sum() / L
        gauss = 0.5 * np.sum(tau * gaussian_penalty(mu_hat, var_hat, mu, var))
        entropy = 0.5 * np.sum(1.0 + lv)
        terms = LossTerms(float(recon), float(gauss), float(entropy))
        for name, val in (("reconstruction", recon), ("gaussian", gauss), ("entropy", entropy)):
            if not np.isfinite(val):
                raise NonFiniteError(name, val)
        loss = terms.loss

    # d(-recon)/d(head pre-activations)
    if attr_mode == BINARY:
        ups = sigmoid(heads[0])
        live = (ups > PROB_EPS) & (ups < 1.0 - PROB_EPS)
        head_grads = [-(xs - ups) * live / L]
    else:
        mean, r_raw = heads
        r = np.clip(r_raw, -LOG_VAR_BOUND, LOG_VAR_BOUND)
        inv_lam = np.exp(-r)
        resid = xs - mean
        head_grads = [
            -(resid * inv_lam) / L,
            -(-0.5 + 0.5 * resid * resid * inv_lam) * _inside(r_raw) / L,
        ]
    dec_grads, dz = decoder.backward(dec_acts, head_grads)
    dz = dz.reshape(L, n, D)

    g_mu = dz.sum(axis=0) + mu_hat * w - tau @ (mu * inv_var)
    g_lv = (dz * eps).sum(axis=0) * 0.5 * sd_hat + 0.5 * var_hat * w - 0.5
    g_lv = g_lv * _inside(lv_raw)
    enc_grads, _ = encoder.backward(enc_acts, [g_mu, g_lv])
    return loss, enc_grads, dec_grads, terms


@dataclass
class Adam:
    """Bias-corrected Adam state for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: Mlp, grads: Mlp):
        params, gs = net.params, grads.params
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, gs, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return net

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [{"shape": list(a.shape), "values": a.ravel().tolist()} for a in self.m],
            "v": [{"shape": list(a.shape), "values": a.ravel().tolist()} for a in self.v],
        }

    @classmethod
    def from_dict(cls, doc) -> "Adam":
        arr = lambda d: np.array(d["values"], dtype=np.float64).reshape(d["shape"])  # noqa: E731
        return cls(
            lr=doc["lr"],
            beta1=doc["beta1"],
            beta2=doc["beta2"],
            eps=doc["eps"],
            t=int(doc["t"]),
            m=[arr(d) for d in doc["m"]],
            v=[arr(d) for d in doc["v"]],
        )
