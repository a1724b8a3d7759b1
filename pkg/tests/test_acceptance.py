"""Acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the pytest terminal
summary (and to stdout when run with ``-s``).
"""
import itertools
import os
import time

import numpy as np
import pytest

import oracles
from conftest import random_graph
from angm.cli import SYNTHETIC_ITERS
from angm.evaluation import accuracy, block_matrix, f1_scores, gmm_fit, nmi
from angm.graph import BINARY, CONTINUOUS, graph_paths, load_graph
from angm.inference import (
    TrainConfig,
    VariationalState,
    elbo_terms,
    fit_once,
    train,
    update_mu_sigma,
    update_omega,
    update_pi,
    update_tau,
)
from angm.model import DecoderOutput, LatentSample, ModelParams, complete_log_likelihood
from angm.neural import EncoderOutput, Mlp, make_decoder, make_encoder, nn_loss_and_grads
from angm.synthgen import PATTERNS, SyntheticSpec, build_pi, generate

GENERATOR_SEEDS = range(5)
TABLE4_BUDGET_SECONDS = 600.0


# --- criteria 1 and 2: synthetic recovery ----------------------------------------


@pytest.fixture(scope="module")
def table4():
    """Train on every pattern and generator seed once; shared by criteria 1 and 2."""
    config = TrainConfig(K=4, max_iter=SYNTHETIC_ITERS, restarts=5, seed=0)
    scores = {}
    start = time.perf_counter()
    for pattern in PATTERNS:
        rows = []
        for gen_seed in GENERATOR_SEEDS:
            graph = generate(SyntheticSpec(pattern=pattern, seed=gen_seed))
            result = train(graph, config)
            _, gmm_assign = gmm_fit(result.embeddings, 4, seed=gen_seed)
            rows.append((
                nmi(graph.labels, result.assignments),
                accuracy(graph.labels, result.assignments),
                nmi(graph.labels, gmm_assign),
            ))
        scores[pattern] = np.array(rows)
    return scores, time.perf_counter() - start


def test_criterion_1_table4_reproduction(table4, acceptance):
    scores, seconds = table4
    medians = {p: np.median(s[:, :2], axis=0) for p, s in scores.items()}
    ok = all(m[0] >= 0.95 and m[1] >= 0.95 for m in medians.values()) and seconds <= TABLE4_BUDGET_SECONDS
    detail = ", ".join(f"{p} NMI={m[0]:.3f} AC={m[1]:.3f}" for p, m in medians.items())
    acceptance.record(1, "synthetic recovery, argmax-tau", ok, f"{detail}; {seconds:.0f}s")
    assert ok


def test_criterion_2_gmm_clustering(table4, acceptance):
    scores, _ = table4
    medians = {p: float(np.median(s[:, 2])) for p, s in scores.items()}
    worst = {p: float(np.min(s[:, 2])) for p, s in scores.items()}
    ok = all(m >= 0.90 for m in medians.values())
    detail = ", ".join(f"{p} NMI={medians[p]:.3f} (min {worst[p]:.3f})" for p in medians)
    acceptance.record(2, "GMM over embeddings", ok, detail)
    assert ok


# --- criterion 3: gradient check -----------------------------------------------


def _fd_instance(mode, seed):
    rng = np.random.default_rng(seed)
    n, M, D, K = 6, 5, 3, 2
    x = (rng.random((n, M)) < 0.5).astype(float) if mode == BINARY else rng.normal(size=(n, M))
    enc = make_encoder(M, [8, 8], D, rng)
    dec = make_decoder(D, [8, 8], M, mode, rng)
    # non-zero biases keep pre-activations away from the ReLU kink
    for net in (enc, dec):
        for b in net.biases:
            b[:] = rng.uniform(-0.5, 0.5, size=b.shape)
    tau = rng.dirichlet(np.ones(K), size=n)
    mu = rng.normal(size=(K, D))
    sigma = rng.uniform(0.5, 1.5, size=(K, D))
    eps = rng.normal(size=(2, n, D))
    return x, enc, dec, tau, mu, sigma, eps


def max_fd_error(mode, seed=0, h=1e-5):
    x, enc, dec, tau, mu, sigma, eps = _fd_instance(mode, seed)

    def loss():
        return nn_loss_and_grads(x, enc, dec, tau, mu, sigma, eps, mode)[0]

    _, g_enc, g_dec, _ = nn_loss_and_grads(x, enc, dec, tau, mu, sigma, eps, mode)
    worst = 0.0
    for net, grads in ((enc, g_enc), (dec, g_dec)):
        for p, g in zip(net.params, grads.params):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss()
                p[idx] = old - h
                down = loss()
                p[idx] = old
                fd = (up - down) / (2 * h)
                # relative error, with an absolute floor for near-zero entries
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-4))
    return worst


def test_criterion_3_gradient_check(acceptance):
    start = time.perf_counter()
    errors = {mode: max_fd_error(mode) for mode in (BINARY, CONTINUOUS)}
    seconds = time.perf_counter() - start
    ok = max(errors.values()) <= 1e-4 and seconds < 5.0
    detail = ", ".join(f"{m} max rel err {e:.1e}" for m, e in errors.items()) + f"; {seconds:.2f}s"
    acceptance.record(3, "analytic vs finite-difference gradients", ok, detail)
    assert ok


# --- criterion 4: coordinate-update optimality ---------------------------------


def _random_instance(rng):
    n = int(rng.integers(3, 11))
    K = int(rng.integers(2, 4))
    D = int(rng.integers(1, 4))
    graph = random_graph(rng, n, density=rng.uniform(0.3, 0.7), M=2)
    tau = rng.dirichlet(np.ones(K), size=n)
    enc = EncoderOutput(rng.normal(size=(n, D)), rng.uniform(-1.0, 1.0, size=(n, D)))
    pi = rng.uniform(0.05, 0.95, size=(K, K))
    pi = np.triu(pi) + np.triu(pi, 1).T
    params = ModelParams(rng.dirichlet(np.ones(K)), pi, rng.normal(size=(K, D)), rng.uniform(0.5, 2.0, size=(K, D)))
    return graph, tau, enc, params


def _objective(graph, tau, enc, omega, pi, mu, sigma):
    return oracles.elbo_exact_terms(
        graph.adjacency.tolist(), tau.tolist(), list(omega), pi.tolist(),
        enc.mu_hat.tolist(), enc.var_hat.tolist(), mu.tolist(), sigma.tolist(),
    )


def _central(f, x, idx, h):
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


def optimality_residuals(rng):
    """Scaled stationarity residual of each closed-form update on one instance."""
    graph, tau, enc, params = _random_instance(rng)
    n, K = tau.shape
    res = {}

    # tau: each row in turn, the other rows held fixed
    new_rows = update_tau(graph, VariationalState(tau, enc), params)
    worst = 0.0
    for i in range(n):
        t = tau.copy()
        t[i] = new_rows[i]
        f = lambda: _objective(graph, t, enc, params.omega, params.pi, params.mu, params.sigma)  # noqa: E731
        scale = 1.0 + abs(f())
        g = np.array([_central(f, t, (i, k), 1e-5 * t[i, k]) for k in range(K)])
        # simplex KKT: tau_ik (g_k - lambda) = 0 with lambda the tau-weighted mean
        lam = float(np.dot(t[i], g))
        worst = max(worst, float(np.max(np.abs(t[i] * (g - lam)))) / scale)
    res["tau"] = worst

    omega = update_omega(tau)
    f = lambda: _objective(graph, tau, enc, omega, params.pi, params.mu, params.sigma)  # noqa: E731
    g = np.array([_central(f, omega, k, 1e-6 * omega[k]) for k in range(K)])
    res["omega"] = float(np.max(np.abs(omega * (g - np.dot(omega, g))))) / (1.0 + abs(f()))

    pi = update_pi(graph, tau)
    f = lambda: _objective(graph, tau, enc, params.omega, pi, params.mu, params.sigma)  # noqa: E731
    interior = (pi > 1e-6) & (pi < 1 - 1e-6)
    g = np.array([[_central(f, pi, (k, l), 1e-6 * min(pi[k, l], 1 - pi[k, l])) if interior[k, l] else 0.0
                   for l in range(K)] for k in range(K)])
    res["pi"] = float(np.max(np.abs(g * pi * (1 - pi)))) / (1.0 + abs(f()))

    mu, sigma = update_mu_sigma(tau, enc)
    f = lambda: _objective(graph, tau, enc, params.omega, params.pi, mu, sigma)  # noqa: E731
    scale = 1.0 + abs(f())
    g = np.array([[_central(f, mu, (k, d), 1e-6) for d in range(mu.shape[1])] for k in range(K)])
    res["mu"] = float(np.max(np.abs(g))) / scale

    var = sigma**2

    def f_var():
        return _objective(graph, tau, enc, params.omega, params.pi, mu, np.sqrt(var))

    g = np.array([[_central(f_var, var, (k, d), 1e-6 * var[k, d]) for d in range(var.shape[1])] for k in range(K)])
    res["sigma"] = float(np.max(np.abs(g * var))) / scale
    return res


def test_criterion_4_coordinate_optimality(acceptance):
    rng = np.random.default_rng(2024)
    worst = {}
    for _ in range(100):
        for name, value in optimality_residuals(rng).items():
            worst[name] = max(worst.get(name, 0.0), value)
    ok = all(v <= 1e-6 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (100 trials)"
    acceptance.record(4, "closed-form updates are stationary", ok, detail)
    assert ok


# --- criterion 5: likelihood and ELBO oracles -----------------------------------


def likelihood_oracle_errors(rng, mode):
    n = int(rng.integers(1, 6))
    K = int(rng.integers(1, 4))
    D = int(rng.integers(1, 3))
    M = int(rng.integers(1, 4))
    graph = random_graph(rng, n, density=0.5, M=M, attr_mode=mode)
    pi = rng.uniform(0.05, 0.95, size=(K, K))
    pi = np.triu(pi) + np.triu(pi, 1).T
    params = ModelParams(rng.dirichlet(np.ones(K)), pi, rng.normal(size=(K, D)), rng.uniform(0.5, 2.0, size=(K, D)), mode)
    c = rng.integers(K, size=n)
    z = rng.normal(size=(n, D))
    if mode == BINARY:
        dec = DecoderOutput(rng.uniform(0.01, 0.99, size=(n, M)))
        log_lam = None
    else:
        dec = DecoderOutput(rng.normal(size=(n, M)), rng.uniform(-2, 2, size=(n, M)))
        log_lam = dec.log_lambda_sq.tolist()
    ours = complete_log_likelihood(graph, LatentSample(c, z), params, dec)
    ref = oracles.complete_loglik(
        graph.adjacency.tolist(), graph.attributes.tolist(), c.tolist(), z.tolist(),
        params.omega.tolist(), pi.tolist(), params.mu.tolist(), params.sigma.tolist(),
        dec.upsilon.tolist(), log_lam,
    )
    exact = abs(ours - ref) / max(1.0, abs(ref))

    tau = rng.dirichlet(np.ones(K), size=n)
    enc = EncoderOutput(rng.normal(size=(n, D)), rng.uniform(-1.0, 1.0, size=(n, D)))
    terms = elbo_terms(graph, VariationalState(tau, enc), params, dec)
    link, assign = oracles.expected_link_and_assignment(graph.adjacency.tolist(), tau.tolist(), params.omega.tolist(), pi.tolist())
    attr = (oracles.bernoulli_loglik(graph.attributes.tolist(), dec.upsilon.tolist()) if mode == BINARY
            else oracles.gaussian_loglik(graph.attributes.tolist(), dec.upsilon.tolist(), log_lam))
    for ours_t, ref_t in ((terms["link"], link), (terms["assignment"], assign), (terms["reconstruction"], attr)):
        exact = max(exact, abs(ours_t - ref_t) / max(1.0, abs(ref_t)))
    gauss_ref = oracles.expected_gaussian_terms(tau.tolist(), enc.mu_hat.tolist(), enc.var_hat.tolist(),
                                                params.mu.tolist(), params.sigma.tolist())
    quad = abs(terms["gaussian"] + terms["entropy"] - gauss_ref) / max(1.0, abs(gauss_ref))
    return exact, quad


def test_criterion_5_likelihood_oracles(acceptance):
    rng = np.random.default_rng(7)
    exact = quad = 0.0
    for trial in range(30):
        e, q = likelihood_oracle_errors(rng, BINARY if trial % 2 == 0 else CONTINUOUS)
        exact, quad = max(exact, e), max(quad, q)
    ok = exact <= 1e-10 and quad <= 1e-3
    acceptance.record(5, "likelihood and ELBO oracles", ok, f"exact terms {exact:.1e}, quadrature terms {quad:.1e}")
    assert ok


# --- criterion 6: metric oracles ----------------------------------------------


def _canonical(n, K):
    """Label vectors with first occurrences in increasing order."""
    out = []
    for v in itertools.product(range(K), repeat=n):
        seen = -1
        ok = True
        for x in v:
            if x > seen + 1:
                ok = False
                break
            seen = max(seen, x)
        if ok:
            out.append(v)
    return out


def metric_pairs():
    """Every pair for n <= 4; canonical truth x all predictions for n = 5, 6;
    every truth vector against seeded predictions for n = 7, 8."""
    rng = np.random.default_rng(99)
    for n in range(1, 5):
        for K in (1, 2, 3):
            vecs = list(itertools.product(range(K), repeat=n))
            for t in vecs:
                for p in vecs:
                    yield t, p
    for n in (5, 6):
        preds = list(itertools.product(range(3), repeat=n))
        for t in _canonical(n, 3):
            for p in preds[:: 3 if n == 5 else 17]:
                yield t, p
    for n in (7, 8):
        for t in itertools.product(range(3), repeat=n):
            if rng.random() < 0.1:
                yield t, tuple(rng.integers(3, size=n))


def test_criterion_6_metric_oracles(acceptance):
    mismatches = checked = 0
    for t, p in metric_pairs():
        checked += 1
        macro, micro = f1_scores(t, p)
        rmacro, rmicro = oracles.f1_ref(t, p)
        if (
            accuracy(t, p) != oracles.accuracy_ref(t, p)
            or abs(nmi(t, p) - oracles.nmi_ref(t, p)) > 1e-12
            or abs(macro - rmacro) > 1e-12
            or micro != rmicro
        ):
            mismatches += 1
    ok = mismatches == 0
    acceptance.record(6, "metric oracles", ok, f"{checked} label-vector pairs, {mismatches} mismatches")
    assert ok


# --- criterion 7: generator fidelity -----------------------------------------


def test_criterion_7_generator_fidelity(acceptance):
    worst_z = 0.0
    verdicts = {}
    for pattern in PATTERNS:
        spec = SyntheticSpec(n=512, pattern=pattern, seed=0)
        graph = generate(spec)
        report = block_matrix(graph, graph.labels)
        pi = build_pi(spec)
        se = np.sqrt(pi * (1 - pi) / report.s)
        worst_z = max(worst_z, float(np.max(np.abs(report.pi_hat - pi) / se)))
        verdicts[pattern] = report.verdict
    expected = {p: ("assortative" if p == "community" else "disassortative") for p in PATTERNS}
    ok = worst_z <= 3.0 and verdicts == expected
    detail = f"max |pi_hat - pi| = {worst_z:.2f} SE; " + ", ".join(f"{p}: {v}" for p, v in verdicts.items())
    acceptance.record(7, "generator fidelity at n=512", ok, detail)
    assert ok


# --- criterion 8: scaling -------------------------------------------------------


def iteration_seconds(n, iters=25, skip=5):
    graph = generate(SyntheticSpec(n=n, pattern="community", seed=0))
    config = TrainConfig(K=4, D=20, max_iter=iters, warmup_iters=0, restarts=1)
    result = fit_once(graph, config, seed=0)
    return float(np.median([h["seconds"] for h in result.history[skip:]]))


def test_criterion_8_scaling(acceptance):
    times = {n: iteration_seconds(n) for n in (256, 512, 1024)}
    ratios = [times[512] / times[256], times[1024] / times[512]]
    ok = all(3.2 <= r <= 5.6 for r in ratios)
    detail = ", ".join(f"n={n} {1e3 * t:.1f}ms" for n, t in times.items())
    detail += f"; ratios {ratios[0]:.2f}, {ratios[1]:.2f} (target [3.2, 5.6])"
    acceptance.record(8, "per-iteration time vs n", ok, detail)
    assert ok


# --- criterion 9: optional real data -------------------------------------------

REAL_DATA_ENV = "ANGM_REAL_DATA"


def test_criterion_9_real_data(acceptance):
    prefix = os.environ.get(REAL_DATA_ENV)
    if not prefix:
        acceptance.record(9, "real-data smoke test", None, f"not gating; set {REAL_DATA_ENV}=<prefix> to run")
        pytest.skip(f"{REAL_DATA_ENV} not set")
    edges, attrs, labels = graph_paths(prefix)
    graph = load_graph(edges, attrs, labels)
    K = int(graph.labels.max()) + 1
    result = train(graph, TrainConfig(K=K))
    _, assign = gmm_fit(result.embeddings, K)
    score = nmi(graph.labels, assign)
    ok = score >= 0.20
    acceptance.record(9, "real-data smoke test", ok, f"GMM NMI={score:.3f}")
    assert ok
