"""Objectives for supervised autoencoder training.

Every loss returns ``(value, gradient)`` where the gradient is taken with
respect to the prediction / latent argument. Similarity weights depend on
targets only and are treated as constants.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from veil.errors import ConfigurationError
from veil.numeric import as_matrix

log = logging.getLogger(__name__)

SYM_MODES = ("directed", "union", "mutual")
PROB_FLOOR = 1e-12
DENSE_MAX_BATCH = 1024


@dataclass(frozen=True)
class LossWeights:
    lambda_recon: float = 0.0
    lambda_repr: float = 1.0
    lambda_pred: float = 1.0
    lambda_reg: float = 0.1
    sigma: float | None = None  # None -> tuned from the training targets
    tau: float = 0.5
    delta: float = 1.0
    k: int = 10
    sym_mode: str = "union"

    def violations(self) -> list[str]:
        out = []
        for name in ("lambda_recon", "lambda_repr", "lambda_pred", "lambda_reg"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if self.lambda_repr <= 0 and self.lambda_pred <= 0 and self.lambda_recon <= 0:
            # recon-only is the plain-autoencoder baseline; all-zero trains nothing
            out.append("at least one of lambda_repr, lambda_pred (or lambda_recon for a baseline) must be > 0")
        if self.sigma is not None and self.sigma <= 0:
            out.append("sigma must be > 0")
        if self.tau <= 0:
            out.append("tau must be > 0")
        if self.delta <= 0:
            out.append("delta must be > 0")
        if self.k < 1:
            out.append("k must be >= 1")
        if self.sym_mode not in SYM_MODES:
            out.append(f"sym_mode must be one of {SYM_MODES}")
        return out

    def validate(self) -> "LossWeights":
        v = self.violations()
        if v:
            raise ConfigurationError("; ".join(v))
        return self


def _same_shape(a, b, what):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


# ---------------------------------------------------------------- regression / reconstruction

def ols_loss(x, x_hat):
    x, x_hat = _same_shape(x, x_hat, "ols_loss")
    n = x.shape[0]
    r = x_hat - x
    return float(np.sum(r * r)) / (2.0 * n), r / n


def mae_loss(y, y_hat):
    y, y_hat = _same_shape(y, y_hat, "mae_loss")
    n = y.shape[0]
    r = y_hat - y
    return float(np.sum(np.abs(r))) / n, np.sign(r) / n


def huber_loss(y, y_hat, delta: float = 1.0):
    if delta <= 0:
        raise ConfigurationError("huber delta must be > 0")
    y, y_hat = _same_shape(y, y_hat, "huber_loss")
    n = y.shape[0]
    r = y_hat - y
    a = np.abs(r)
    inside = a < delta
    per = np.where(inside, 0.5 * r * r, a * delta - 0.5 * delta * delta)
    grad = np.where(inside, r, delta * np.sign(r)) / n
    return float(per.sum()) / n, grad


# ---------------------------------------------------------------- classification

def _labels(labels, n, k):
    lab = np.asarray(labels).reshape(-1).astype(np.int64)
    if lab.shape[0] != n:
        raise ConfigurationError(f"expected {n} labels, got {lab.shape[0]}")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ConfigurationError(f"labels must lie in [0, {k - 1}]")
    return lab


def cross_entropy_loss(labels, logits):
    """Mean negative log-likelihood of ``softmax(logits)``; gradient w.r.t. the logits."""
    logits = as_matrix(logits)
    n, k = logits.shape
    lab = _labels(labels, n, k)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    p_true = p[np.arange(n), lab]
    if np.any(p_true < PROB_FLOOR):
        log.warning("cross_entropy_loss: true-class probability below %g clamped", PROB_FLOOR)
    value = -float(np.sum(np.log(np.maximum(p_true, PROB_FLOOR)))) / n
    grad = p.copy()
    grad[np.arange(n), lab] -= 1.0
    return value, grad / n


def cross_entropy_from_probs(labels, probs) -> float:
    probs = as_matrix(probs)
    n, k = probs.shape
    lab = _labels(labels, n, k)
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ConfigurationError("probability rows must sum to 1")
    p_true = probs[np.arange(n), lab]
    if np.any(p_true < PROB_FLOOR):
        log.warning("cross_entropy: true-class probability below %g clamped", PROB_FLOOR)
    return -float(np.sum(np.log(np.maximum(p_true, PROB_FLOOR)))) / n


def hinge_loss(scores, labels):
    scores = as_matrix(scores)
    n, k = scores.shape
    if k < 2:
        raise ConfigurationError("hinge_loss needs at least 2 classes")
    lab = _labels(labels, n, k)
    rows = np.arange(n)
    margins = 1.0 + scores - scores[rows, lab][:, None]
    margins[rows, lab] = 0.0
    active = margins > 0
    value = float(np.sum(margins[active])) / n
    grad = active.astype(np.float64)
    grad[rows, lab] = -active.sum(axis=1)
    return value, grad / n


# ---------------------------------------------------------------- centre loss

@dataclass
class ClassCenters:
    centers: np.ndarray  # (K, dim)
    counts: np.ndarray = field(default=None)  # observations seen per class

    def __post_init__(self):
        self.centers = as_matrix(self.centers).copy()
        if self.counts is None:
            # explicitly supplied centres count as initialised
            self.counts = np.ones(self.centers.shape[0], dtype=np.int64)

    @classmethod
    def from_data(cls, psi, labels, n_classes: int) -> "ClassCenters":
        psi = as_matrix(psi)
        lab = _labels(labels, psi.shape[0], n_classes)
        centers = np.zeros((n_classes, psi.shape[1]))
        counts = np.bincount(lab, minlength=n_classes)
        for c in range(n_classes):
            if counts[c]:
                centers[c] = psi[lab == c].mean(axis=0)
        return cls(centers, counts.astype(np.int64))

    def copy(self) -> "ClassCenters":
        return ClassCenters(self.centers.copy(), self.counts.copy())


def center_loss(psi, labels, centers: ClassCenters):
    psi = as_matrix(psi)
    n = psi.shape[0]
    lab = np.asarray(labels).reshape(-1).astype(np.int64)
    k = centers.centers.shape[0]
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ConfigurationError("center_loss: label without an initialised centre")
    if centers.counts is not None and np.any(centers.counts[np.unique(lab)] == 0):
        raise ConfigurationError("center_loss: label without an initialised centre")
    diff = psi - centers.centers[lab]
    return float(np.sum(diff * diff)) / (2.0 * n), diff / n


def update_centers(centers: ClassCenters, psi, labels, alpha: float) -> ClassCenters:
    """Damped move of each present class centre toward its batch mean."""
    if not 0 <= alpha <= 1:
        raise ConfigurationError("alpha must be in [0, 1]")
    psi = as_matrix(psi)
    lab = np.asarray(labels).reshape(-1).astype(np.int64)
    out = centers.copy()
    for c in np.unique(lab):
        members = psi[lab == c]
        out.centers[c] = out.centers[c] - alpha * np.mean(out.centers[c] - members, axis=0)
        out.counts[c] += members.shape[0]
    return out


# ---------------------------------------------------------------- PCA alignment

def pca_cosine_loss(psi2, x_pca):
    """Mean ``1 - cos`` between projected latents and the first two PCA scores.

    A zero-norm row on either side contributes 1 with zero gradient.
    """
    a, b = _same_shape(psi2, x_pca, "pca_cosine_loss")
    n = a.shape[0]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not np.all(ok):
        log.warning("pca_cosine_loss: %d zero-norm rows treated as cosine 0", int(np.sum(~ok)))
    cos = np.zeros(n)
    cos[ok] = np.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok])
    value = float(np.sum(1.0 - cos)) / n
    grad = np.zeros_like(a)
    grad[ok] = -(b[ok] / (na[ok] * nb[ok])[:, None] - cos[ok][:, None] * a[ok] / (na[ok] ** 2)[:, None]) / n
    return value, grad


# ---------------------------------------------------------------- similarity kernel and graphs

def similarity_kernel(y_i, y_j, sigma: float) -> float:
    if sigma <= 0:
        raise ConfigurationError("sigma must be > 0")
    d = np.asarray(y_i, dtype=np.float64) - np.asarray(y_j, dtype=np.float64)
    return float(np.exp(-np.sum(d * d) / (sigma * sigma)))


def _targets(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y.reshape(-1, 1) if y.ndim == 1 else y


def kernel_matrix(y, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ConfigurationError("sigma must be > 0")
    y = _targets(y)
    d2 = np.sum((y[:, None, :] - y[None, :, :]) ** 2, axis=2)
    return np.exp(-d2 / (sigma * sigma))


def sigma_auto(y) -> float:
    """Half the interquartile range of the standardised targets (variance read as ``sigma_y``)."""
    y = _targets(y)
    if y.shape[0] < 4:
        raise ConfigurationError("sigma_auto needs at least 4 targets")
    sd = y.std(axis=0)
    if np.all(sd <= 1e-12):
        log.warning("sigma_auto: constant targets, falling back to sigma = 1")
        return 1.0
    sd = np.where(sd > 1e-12, sd, 1.0)
    z = ((y - y.mean(axis=0)) / sd).reshape(-1)
    q1, q3 = np.quantile(z, [0.25, 0.75], method="linear")
    s = 0.5 * float(q3 - q1)
    if s <= 1e-12:
        log.warning("sigma_auto: degenerate IQR, falling back to sigma = 1")
        return 1.0
    return s


@dataclass(frozen=True)
class SimilarityGraph:
    """Ordered edge list ``src -> dst`` with weights; symmetric modes store both directions."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    form: str  # "dense" | "knn"
    sym_mode: str = "directed"
    k: int | None = None

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.src, self.dst, self.weight)]

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    def weight_matrix(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        w[self.src, self.dst] = self.weight
        return w


def build_dense_graph(y, sigma: float) -> SimilarityGraph:
    y = _targets(y)
    n = y.shape[0]
    if n < 2:
        raise ConfigurationError("dense graph needs at least 2 nodes")
    g = kernel_matrix(y, sigma)
    src, dst = np.nonzero(~np.eye(n, dtype=bool))
    return SimilarityGraph(n, src, dst, g[src, dst], "dense", "directed")


def _knn_scalar(y: np.ndarray, k: int) -> np.ndarray:
    """Neighbour lists from one sort; windows are widened to cover distance ties."""
    n = y.shape[0]
    order = np.lexsort((np.arange(n), y))
    ys = y[order]
    out = np.empty((n, k), dtype=np.int64)
    for p in range(n):
        i = order[p]
        lo, hi = max(0, p - k), min(n, p + k + 1)
        cand = np.r_[lo:p, p + 1 : hi]
        dist = np.abs(ys[cand] - ys[p])
        kth = np.sort(dist)[k - 1]
        while lo > 0 and ys[p] - ys[lo - 1] <= kth:
            lo -= 1
        while hi < n and ys[hi] - ys[p] <= kth:
            hi += 1
        cand = np.r_[lo:p, p + 1 : hi]
        idx = order[cand]
        dist = np.abs(ys[cand] - ys[p])
        pick = np.lexsort((idx, dist))[:k]
        out[i] = idx[pick]
    return out


def _knn_exhaustive(y: np.ndarray, k: int) -> np.ndarray:
    n = y.shape[0]
    d2 = np.sum((y[:, None, :] - y[None, :, :]) ** 2, axis=2)
    out = np.empty((n, k), dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        mask = idx != i
        cand = idx[mask]
        pick = np.lexsort((cand, d2[i, mask]))[:k]
        out[i] = cand[pick]
    return out


def knn_lists(y, k: int) -> np.ndarray:
    """``k`` nearest target neighbours per node, ties broken by smaller index."""
    y = _targets(y)
    n = y.shape[0]
    if not 1 <= k <= n - 1:
        raise ConfigurationError(f"k must be in [1, {n - 1}], got {k}")
    if y.shape[1] == 1:
        return _knn_scalar(y[:, 0], k)
    return _knn_exhaustive(y, k)


def build_knn_graph(y, sigma: float, k: int, sym_mode: str = "union") -> SimilarityGraph:
    if sym_mode not in SYM_MODES:
        raise ConfigurationError(f"sym_mode must be one of {SYM_MODES}")
    if sigma <= 0:
        raise ConfigurationError("sigma must be > 0")
    y = _targets(y)
    n = y.shape[0]
    nbrs = knn_lists(y, k)
    adj = np.zeros((n, n), dtype=bool)
    adj[np.repeat(np.arange(n), k), nbrs.reshape(-1)] = True
    if sym_mode == "union":
        adj = adj | adj.T
    elif sym_mode == "mutual":
        adj = adj & adj.T
    src, dst = np.nonzero(adj)
    if src.size == 0:
        raise ConfigurationError(
            f"mutual k-NN graph is empty for k={k}, n={n}; increase k or use union mode"
        )
    diff = y[src] - y[dst]
    w = np.exp(-np.sum(diff * diff, axis=1) / (sigma * sigma))
    return SimilarityGraph(n, src, dst, w, "knn", sym_mode, k)


# ---------------------------------------------------------------- graph-Laplacian losses

def _pair_energy(psi: np.ndarray, g: SimilarityGraph):
    """Sum of w_ij * |psi_i - psi_j|^2 over stored ordered edges, and its gradient."""
    diff = psi[g.src] - psi[g.dst]
    value = float(np.sum(g.weight * np.sum(diff * diff, axis=1)))
    # grad_i = 2 * [(r_i + c_i) psi_i - (W psi)_i - (W^T psi)_i], r/c = row/column sums of W
    w = sparse.csr_matrix((g.weight, (g.src, g.dst)), shape=(g.n, g.n))
    deg = np.asarray(w.sum(axis=1)).ravel() + np.asarray(w.sum(axis=0)).ravel()
    grad = 2.0 * (deg[:, None] * psi - w @ psi - w.T @ psi)
    return value, grad


def _check_graph(psi, graph: SimilarityGraph, form: str):
    psi = as_matrix(psi)
    if graph.form != form:
        raise ConfigurationError(f"expected a {form} graph, got {graph.form}")
    if psi.shape[0] != graph.n:
        raise ConfigurationError(f"graph has {graph.n} nodes but psi has {psi.shape[0]} rows")
    return psi


def laplacian_loss_dense(psi, graph: SimilarityGraph):
    """Dirichlet energy normalised by ``2N(N-1)``.

    The gradient is the exact derivative of this value,
    ``2/(N(N-1)) * sum_j g_ij (psi_i - psi_j)`` for a symmetric kernel.
    """
    psi = _check_graph(psi, graph, "dense")
    n = graph.n
    e, g = _pair_energy(psi, graph)
    c = 1.0 / (2.0 * n * (n - 1))
    return e * c, g * c


def laplacian_loss_trace(psi, graph: SimilarityGraph) -> float:
    """``tr(Psi^T L Psi) / N`` with ``L = D - Gamma``.

    Equals ``(N - 1)`` times :func:`laplacian_loss_dense` for the same graph.
    """
    psi = _check_graph(psi, graph, "dense")
    gam = graph.weight_matrix()
    lap = np.diag(gam.sum(axis=1)) - gam
    return float(np.trace(psi.T @ lap @ psi)) / graph.n


def laplacian_loss_sparse(psi, graph: SimilarityGraph):
    """k-NN sparsified energy normalised by ``2kB``."""
    psi = _check_graph(psi, graph, "knn")
    if graph.n_edges == 0:
        raise ConfigurationError("sparse Laplacian loss on an empty edge set")
    e, g = _pair_energy(psi, graph)
    c = 1.0 / (2.0 * graph.k * graph.n)
    return e * c, g * c


# ---------------------------------------------------------------- contrastive losses

def cosine_sim_scaled(psi_i, psi_j, tau: float) -> float:
    a = np.asarray(psi_i, dtype=np.float64).reshape(-1)
    b = np.asarray(psi_j, dtype=np.float64).reshape(-1)
    if tau <= 0:
        raise ConfigurationError("tau must be > 0")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ConfigurationError("cosine similarity of a zero vector is undefined")
    return float(a @ b) / (tau * na * nb)


def _soft_positive_nce(psi, pos_weight: np.ndarray, tau: float):
    """Shared body of InfoNCE and its kernel-weighted variant.

    ``pos_weight[i, j]`` weights the numerator; rows with no positive mass are skipped.
    """
    psi = as_matrix(psi)
    n = psi.shape[0]
    if tau <= 0:
        raise ConfigurationError("tau must be > 0")
    norms = np.linalg.norm(psi, axis=1)
    if np.any(norms == 0):
        raise ConfigurationError("contrastive loss: zero latent row")
    u = psi / norms[:, None]
    s = (u @ u.T) / tau
    off = ~np.eye(n, dtype=bool)
    w = np.where(off, pos_weight, 0.0)
    s_masked = np.where(off, s, -np.inf)
    m = s_masked.max(axis=1, keepdims=True)
    e = np.where(off, np.exp(s_masked - m), 0.0)
    den = e.sum(axis=1)
    num_terms = w * e
    num = num_terms.sum(axis=1)
    active = num > 0
    if not np.all(active):
        log.warning("contrastive loss: %d anchors without a positive partner skipped", int(np.sum(~active)))
    ratio = np.maximum(num[active] / den[active], PROB_FLOOR)
    value = -float(np.sum(np.log(ratio))) / n
    # d(-log num/den)/ds_ij = p_ij - q_ij
    p = e / den[:, None]
    q = np.zeros_like(e)
    q[active] = num_terms[active] / num[active][:, None]
    gs = np.where(active[:, None], p - q, 0.0) / n
    gu = (gs + gs.T) @ u / tau
    radial = np.sum(gu * u, axis=1, keepdims=True)
    grad = (gu - radial * u) / norms[:, None]
    return value, grad


def info_nce_loss(psi, labels, tau: float):
    lab = np.asarray(labels).reshape(-1)
    pos = (lab[:, None] == lab[None, :]).astype(np.float64)
    return _soft_positive_nce(psi, pos, tau)


def r_nce_loss(psi, y, sigma: float, tau: float):
    y = _targets(y)
    if y.shape[0] < 2:
        raise ConfigurationError("r_nce_loss needs at least 2 rows")
    return _soft_positive_nce(psi, kernel_matrix(y, sigma), tau)
