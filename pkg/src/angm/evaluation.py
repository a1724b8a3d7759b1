"""Clustering and classification scores for learned embeddings.

Includes a diagonal-covariance Gaussian mixture fitted by EM, NMI and
best-mapping accuracy for clusterings, macro/micro F1 with a logistic
regression probe for classification, and block-density analysis of a
labelled graph.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from angm import kernels

VAR_FLOOR = 1e-6
MIN_WEIGHT = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


def _check_lengths(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"label vectors differ in length: {a.shape[0]} vs {b.shape[0]}")
    return a, b


# --- Gaussian mixture ------------------------------------------------------------


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    def component_log_density(self, x) -> np.ndarray:
        """``n x K`` matrix of log w_k + log N(x_i; mean_k, diag(var_k))."""
        x = np.asarray(x, dtype=np.float64)
        inv = 1.0 / self.variances
        quad = (x * x) @ inv.T - 2.0 * x @ (self.means * inv).T + np.sum(self.means**2 * inv, axis=1)
        log_det = np.sum(np.log(self.variances), axis=1)
        return np.log(self.weights)[None, :] - 0.5 * (x.shape[1] * LOG_2PI + log_det[None, :] + quad)

    def score_samples(self, x) -> np.ndarray:
        return logsumexp(self.component_log_density(x), axis=1)

    def score(self, x) -> float:
        """Total log-likelihood of the rows of ``x``."""
        return float(self.score_samples(x).sum())

    def responsibilities(self, x) -> np.ndarray:
        logp = self.component_log_density(x)
        return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.component_log_density(x), axis=1)


def _kmeanspp(x, K, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp):
    nk = resp.sum(axis=0)
    weights = nk / x.shape[0]
    safe = np.maximum(nk, 1e-300)[:, None]
    means = resp.T @ x / safe
    var = resp.T @ (x * x) / safe - means**2
    return weights, means, np.maximum(var, VAR_FLOOR)


def _em(x, K, rng, max_iter, tol, max_reseeds=10):
    n = x.shape[0]
    centers = _kmeanspp(x, K, rng)
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    # empty seeds are handled like collapsed components below
    model = GmmModel(*_m_step(x, resp))
    reseeds = 0
    prev = -np.inf
    for _ in range(max_iter):
        collapsed = model.weights < MIN_WEIGHT
        if np.any(collapsed):
            if reseeds >= max_reseeds:
                raise RuntimeError("mixture component collapsed repeatedly")
            reseeds += 1
            model.weights = np.maximum(model.weights, MIN_WEIGHT)
            # move collapsed components onto the worst-explained points
            far = np.argsort(model.score_samples(x))
            for slot, k in enumerate(np.flatnonzero(collapsed)):
                model.means[k] = x[far[slot % n]]
                model.variances[k] = np.maximum(x.var(axis=0), VAR_FLOOR)
                model.weights[k] = 1.0 / n
            model.weights /= model.weights.sum()
            prev = -np.inf
        logp = model.component_log_density(x)
        norm = logsumexp(logp, axis=1, keepdims=True)
        ll = float(norm.sum())
        model.log_likelihood.append(ll)
        if ll < prev - 1e-9 * max(1.0, abs(prev)):
            raise AssertionError(f"EM log-likelihood decreased: {prev} -> {ll}")
        resp = np.exp(logp - norm)
        model.weights, model.means, model.variances = _m_step(x, resp)
        if abs(ll - prev) <= tol * max(1.0, abs(ll)):
            break
        prev = ll
    model.log_likelihood.append(model.score(x))
    return model


def gmm_fit(emb, K, restarts=10, seed=0, max_iter=300, tol=1e-10):
    """Fit a diagonal Gaussian mixture by EM; best log-likelihood over restarts.

    Returns ``(model, assignments)`` with assignments the argmax responsibility.
    """
    x = np.asarray(emb, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("embeddings must be a 2-d matrix")
    if K > x.shape[0]:
        raise ValueError(f"cannot fit {K} components to {x.shape[0]} points")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        model = _em(x, K, rng, max_iter, tol)
        if best is None or model.log_likelihood[-1] > best.log_likelihood[-1]:
            best = model
    return best, best.predict(x)


# --- clustering scores ---------------------------------------------------------


def contingency(a, b):
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1 if ia.size else 0, ib.max() + 1 if ib.size else 0), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(labels_a, labels_b) -> float:
    """Normalized mutual information ``I(a; b) / sqrt(H(a) H(b))``."""
    a, b = _check_lengths(labels_a, labels_b)
    if a.shape[0] == 0:
        return 1.0
    table = contingency(a, b).astype(np.float64)
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha == 0.0 or hb == 0.0:
        return 1.0 if ha == hb else 0.0
    n = table.sum()
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    return float(np.clip(mi / np.sqrt(ha * hb), 0.0, 1.0))


def accuracy(labels_true, labels_pred) -> float:
    """Fraction matched under the best one-to-one cluster-to-label mapping."""
    t, p = _check_lengths(labels_true, labels_pred)
    if t.shape[0] == 0:
        return 1.0
    table = contingency(p, t)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum()) / t.shape[0]


def f1_scores(labels_true, labels_pred) -> tuple[float, float]:
    """``(macro_f1, micro_f1)`` over the union of observed classes."""
    t, p = _check_lengths(labels_true, labels_pred)
    if t.shape[0] == 0:
        return 1.0, 1.0
    classes = np.union1d(t, p)
    f1 = []
    for c in classes:
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    micro = float(np.mean(t == p))
    return float(np.mean(f1)), micro


# --- classification probe --------------------------------------------------------


class LogisticProbe:
    """Multinomial logistic regression with L2 penalty, full-batch gradient descent."""

    def __init__(self, l2=1e-3, lr=0.5, n_iter=500):
        self.l2 = l2
        self.lr = lr
        self.n_iter = n_iter

    def fit(self, x, y, n_classes=None):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        self.mean = x.mean(axis=0)
        self.scale = x.std(axis=0)
        self.scale[self.scale == 0] = 1.0
        xs = (x - self.mean) / self.scale
        n, d = xs.shape
        onehot = np.zeros((n, self.n_classes))
        onehot[np.arange(n), y] = 1.0
        self.W = np.zeros((d, self.n_classes))
        self.b = np.zeros(self.n_classes)
        for _ in range(self.n_iter):
            logits = xs @ self.W + self.b
            prob = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
            g = (prob - onehot) / n
            self.W -= self.lr * (xs.T @ g + self.l2 * self.W)
            self.b -= self.lr * g.sum(axis=0)
        return self

    def predict(self, x):
        xs = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return np.argmax(xs @ self.W + self.b, axis=1)


def _split(rng, labels, n_train, n_test, max_tries=100):
    n = labels.shape[0]
    classes = np.unique(labels)
    for _ in range(max_tries):
        perm = rng.permutation(n)
        test, train = perm[:n_test], perm[n_test : n_test + n_train]
        if np.array_equal(np.unique(labels[train]), classes):
            return train, test
    raise RuntimeError("could not draw a training split containing every class")


def classify_probe(emb, labels, train_ratios=None, test_ratio=0.2, repeats=10, seed=0, probe=None):
    """Mean macro/micro F1 of a linear probe per training ratio.

    The test fraction stays fixed while the training fraction varies; every
    ratio averages ``repeats`` seeded random splits.
    Returns ``{ratio: (macro, micro)}``.
    """
    x = np.asarray(emb, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if train_ratios is None:
        train_ratios = [round(0.1 * k, 1) for k in range(1, 9)]
    n = y.shape[0]
    out = {}
    for ratio in train_ratios:
        if not (0 < ratio < 1 and 0 < test_ratio < 1 and ratio + test_ratio <= 1 + 1e-12):
            raise ValueError(f"invalid ratios train={ratio} test={test_ratio}")
        n_test = max(1, int(round(test_ratio * n)))
        n_train = max(1, min(int(round(ratio * n)), n - n_test))
        scores = []
        for r in range(repeats):
            rng = np.random.default_rng([seed, r, int(round(ratio * 1000))])
            train, test = _split(rng, y, n_train, n_test)
            model = (probe or LogisticProbe)().fit(x[train], y[train], n_classes=y.max() + 1)
            scores.append(f1_scores(y[test], model.predict(x[test])))
        scores = np.array(scores)
        out[ratio] = (float(scores[:, 0].mean()), float(scores[:, 1].mean()))
    return out


# --- block structure -----------------------------------------------------------


@dataclass
class BlockMatrixReport:
    pi_hat: np.ndarray
    e: np.ndarray
    s: np.ndarray
    flags: dict
    verdict: str

    def to_dict(self):
        clean = lambda m: [[None if not np.isfinite(v) else float(v) for v in row] for row in m]  # noqa: E731
        return {
            "pi_hat": clean(self.pi_hat),
            "e": self.e.tolist(),
            "s": self.s.tolist(),
            "flags": {f"{k},{l}": v for (k, l), v in self.flags.items()},
            "verdict": self.verdict,
        }

    def format(self) -> str:
        K = self.pi_hat.shape[0]
        lines = ["block density matrix (e_kl / s_kl):"]
        lines.append("      " + "".join(f"{l:>9d}" for l in range(K)))
        for k in range(K):
            cells = "".join(f"{v:9.4f}" if np.isfinite(v) else f"{'-':>9s}" for v in self.pi_hat[k])
            lines.append(f"{k:>5d} " + cells)
        for (k, l), kind in sorted(self.flags.items()):
            lines.append(f"pair ({k},{l}): {kind}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def block_matrix(graph, labels, margin_sigmas=2.0) -> BlockMatrixReport:
    """Observed link density between labelled blocks.

    A pair of blocks counts as disassortative evidence unless its cross
    density sits more than ``margin_sigmas`` binomial standard errors below
    the sparser of the two within-block densities. ``margin_sigmas=0`` gives
    the plain comparison.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != graph.n:
        raise ValueError("labels must cover every node")
    K = int(labels.max()) + 1 if labels.size else 0
    sizes = np.bincount(labels, minlength=K).astype(np.int64)
    ordered = kernels.block_edge_counts(graph, labels, K)
    e = ordered.copy()
    e[np.diag_indices(K)] //= 2
    s = np.outer(sizes, sizes)
    s[np.diag_indices(K)] = sizes * (sizes - 1) // 2
    with np.errstate(divide="ignore", invalid="ignore"):
        pi_hat = np.where(s > 0, e / np.where(s > 0, s, 1), np.nan)

    def se(k, l):
        p = pi_hat[k, l]
        return np.sqrt(p * (1 - p) / s[k, l]) if s[k, l] > 0 else np.inf

    flags = {}
    for k in range(K):
        for l in range(k + 1, K):
            if not np.isfinite(pi_hat[k, l]):
                continue
            diag = [(pi_hat[m, m], se(m, m)) for m in (k, l) if np.isfinite(pi_hat[m, m])]
            if not diag:
                continue
            weaker, weaker_se = min(diag)
            margin = margin_sigmas * np.sqrt(se(k, l) ** 2 + weaker_se**2)
            flags[(k, l)] = "disassortative" if pi_hat[k, l] > weaker - margin else "assortative"
    verdict = "disassortative" if any(v == "disassortative" for v in flags.values()) else "assortative"
    return BlockMatrixReport(pi_hat, e, s, flags, verdict)


# --- tables --------------------------------------------------------------------


def results_csv(rows, columns) -> str:
    """``rows`` is a list of dicts; returns CSV text with the given columns."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def results_table(rows, columns) -> str:
    """Aligned plain-text table; floats are shown as percentages."""
    cells = [[str(c) for c in columns]]
    for row in rows:
        cells.append([f"{100 * row[c]:.2f}" if isinstance(row.get(c), float) else str(row.get(c, "")) for c in columns])
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
