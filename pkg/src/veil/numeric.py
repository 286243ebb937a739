"""Dense linear algebra helpers, PCA and a central-difference gradient oracle.

All arithmetic is float64. Matrices are plain ``numpy.ndarray`` objects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from veil.errors import ConfigurationError

EIGH_MAX_DIM = 2048
POWER_TOL = 1e-10
POWER_MAX_ITER = 1000


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ConfigurationError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (q, D), orthonormal rows
    explained_variance_ratio: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (as_matrix(x) - self.mean) @ self.components.T

    def inverse_transform(self, scores) -> np.ndarray:
        return as_matrix(scores) @ self.components + self.mean


def _fix_signs(components: np.ndarray) -> np.ndarray:
    out = components.copy()
    for r in range(out.shape[0]):
        nz = np.flatnonzero(np.abs(out[r]) > 1e-12)
        if nz.size and out[r, nz[0]] < 0:
            out[r] = -out[r]
    return out


def _complete_basis(basis: np.ndarray, d: int, q: int) -> np.ndarray:
    """Extend orthonormal rows ``basis`` to ``q`` rows with Gram-Schmidt on unit vectors."""
    rows = [r for r in basis]
    e = 0
    while len(rows) < q and e < d:
        v = np.zeros(d)
        v[e] = 1.0
        for r in rows:
            v -= (r @ v) * r
        n = np.linalg.norm(v)
        if n > 1e-8:
            rows.append(v / n)
        e += 1
    return np.array(rows).reshape(len(rows), d)


def _power_topq(xc: np.ndarray, q: int, rng_seed: int = 0):
    """Top-q eigenpairs of xc.T @ xc / (n-1) by power iteration with deflation."""
    n, d = xc.shape
    rng = make_rng(rng_seed)
    vecs, vals = [], []
    for _ in range(q):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(POWER_MAX_ITER):
            w = xc.T @ (xc @ v) / (n - 1)
            for u, lu in zip(vecs, vals):
                w -= lu * (u @ v) * u
            lam_new = float(np.linalg.norm(w))
            if lam_new < 1e-300:
                break
            w /= lam_new
            done = abs(lam_new - lam) <= POWER_TOL * max(lam_new, 1.0)
            v, lam = w, lam_new
            if done:
                break
        vecs.append(v)
        vals.append(lam)
    return np.array(vals), np.array(vecs)


def pca_fit(x, q: int) -> PcaModel:
    """Top-``q`` principal directions of the column-centred data.

    Components are sign-normalised so the first nonzero coordinate is positive.
    Directions beyond the data rank are filled by an orthonormal completion
    with zero explained-variance ratio.
    """
    x = as_matrix(x)
    n, d = x.shape
    if n < 2:
        raise ConfigurationError("pca_fit needs at least 2 rows")
    if q < 1 or q > min(n, d):
        raise ConfigurationError(f"q must be in [1, {min(n, d)}], got {q}")
    mean = x.mean(axis=0)
    xc = x - mean
    total = float(np.sum(xc * xc)) / (n - 1)
    if d <= EIGH_MAX_DIM:
        cov = xc.T @ xc / (n - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals, kind="stable")[:q]
        vals = np.clip(vals[order], 0.0, None)
        comps = vecs[:, order].T
    else:
        vals, comps = _power_topq(xc, q)
    scale = max(total, 1e-300)
    keep = vals > 1e-12 * scale
    comps = comps[keep]
    vals = vals[keep]
    if comps.shape[0] < q:
        comps = _complete_basis(comps, d, q)
        vals = np.concatenate([vals, np.zeros(q - vals.shape[0])])
    ratio = vals / scale if total > 0 else np.zeros(q)
    return PcaModel(mean=mean, components=_fix_signs(comps), explained_variance_ratio=np.clip(ratio, 0.0, 1.0))


def effective_dimensionality(x, threshold: float = 0.95) -> int:
    """Smallest number of principal components whose cumulative variance ratio reaches ``threshold``."""
    x = as_matrix(x)
    if not 0 < threshold <= 1:
        raise ConfigurationError("threshold must be in (0, 1]")
    n, d = x.shape
    if n < 2:
        raise ConfigurationError("effective_dimensionality needs at least 2 rows (covariance undefined)")
    xc = x - x.mean(axis=0)
    # singular values give the full spectrum without forming the covariance
    s = np.linalg.svd(xc, compute_uv=False)
    var = s * s
    total = var.sum()
    if total <= 0:
        return 0
    cum = np.cumsum(var) / total
    return int(np.searchsorted(cum, threshold - 1e-12) + 1)


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = float(f(x))
        flat[idx] = orig - h
        fm = float(f(x))
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at entry {idx}")
        gflat[idx] = (fp - fm) / (2.0 * h)
    return g
