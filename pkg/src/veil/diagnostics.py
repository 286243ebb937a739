"""Training diagnostics for regression encoders.

Spearman correlation between latent and target distances, cross-validated
k-NN R^2 on the latent space, and equal-frequency calibration bins. Reports
serialise to JSON (one document) and CSV (one row per epoch).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.model_selection import KFold
from sklearn.neighbors import KNeighborsRegressor

from veil.errors import ConfigurationError
from veil.numeric import as_matrix, make_rng

MAX_PAIRS = 100_000


def _pairs(n: int, max_pairs: int, seed: int):
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
        return i, j
    rng = make_rng(seed)
    # sample pair ranks without replacement, then decode to (i, j)
    ranks = np.sort(rng.choice(total, size=max_pairs, replace=False))
    # row i starts at offset i*n - i*(i+1)/2
    starts = np.arange(n) * n - np.arange(n) * (np.arange(n) + 1) // 2
    i = np.searchsorted(starts, ranks, side="right") - 1
    j = ranks - starts[i] + i + 1
    return i, j


def spearman_latent_target(psi, y, max_pairs: int = MAX_PAIRS, seed: int = 0) -> dict:
    """Rank correlation between pairwise latent distances and pairwise target distances.

    Returns ``{"rho": float, "n_pairs": int, "defined": bool}``; rho is NaN when
    either distance list has zero variance.
    """
    psi = as_matrix(psi)
    t = as_matrix(y)
    n = psi.shape[0]
    if n < 3:
        raise ConfigurationError("spearman_latent_target needs at least 3 rows")
    i, j = _pairs(n, max_pairs, seed)
    dl = np.linalg.norm(psi[i] - psi[j], axis=1)
    dy = np.linalg.norm(t[i] - t[j], axis=1)
    if np.ptp(dl) == 0 or np.ptp(dy) == 0:
        return {"rho": float("nan"), "n_pairs": int(i.size), "defined": False}
    ra = rankdata(dl, method="average")
    rb = rankdata(dy, method="average")
    rho = float(np.corrcoef(ra, rb)[0, 1])
    return {"rho": max(-1.0, min(1.0, rho)), "n_pairs": int(i.size), "defined": True}


def knn_r2(psi, y, k: int = 5, folds: int = 5, seed: int = 0) -> dict:
    """Out-of-fold R^2 of a uniform k-NN regressor on the latent space."""
    psi = as_matrix(psi)
    t = np.asarray(y, dtype=np.float64)
    t = t.reshape(-1, 1) if t.ndim == 1 else t
    n = psi.shape[0]
    if folds < 2:
        raise ConfigurationError("knn_r2 needs folds >= 2")
    if n < folds * (k + 1):
        raise ConfigurationError(f"knn_r2 needs at least folds*(k+1) = {folds * (k + 1)} rows, got {n}")
    kf = KFold(n_splits=folds, shuffle=True, random_state=seed)
    scores, flags = [], []
    for train_idx, test_idx in kf.split(psi):
        kk = min(k, train_idx.size)
        reg = KNeighborsRegressor(n_neighbors=kk, weights="uniform", algorithm="brute")
        reg.fit(psi[train_idx], t[train_idx])
        pred = reg.predict(psi[test_idx]).reshape(-1, t.shape[1])
        yt = t[test_idx]
        ss_tot = float(np.sum((yt - yt.mean(axis=0)) ** 2))
        if ss_tot <= 0:
            scores.append(float("nan"))
            flags.append(True)
            continue
        scores.append(1.0 - float(np.sum((yt - pred) ** 2)) / ss_tot)
        flags.append(False)
    finite = [s for s in scores if not math.isnan(s)]
    return {"folds": scores, "mean": float(np.mean(finite)) if finite else float("nan"), "undefined_folds": flags}


def calibration_bins(y, y_hat, n_bins: int = 10) -> dict:
    """Equal-frequency bins of the predictions with per-bin mean prediction and mean outcome."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    n = y.shape[0]
    if n_bins < 2:
        raise ConfigurationError("n_bins must be >= 2")
    if n < n_bins or y_hat.shape[0] != n:
        raise ConfigurationError("need N >= n_bins paired values")
    order = np.lexsort((np.arange(n), y_hat))
    parts = np.array_split(order, n_bins)
    merged = False
    # bins that straddle tied predictions are merged so each value lives in one bin
    groups: list[np.ndarray] = []
    for part in parts:
        if groups and y_hat[groups[-1][-1]] == y_hat[part[0]]:
            groups[-1] = np.concatenate([groups[-1], part])
            merged = True
        else:
            groups.append(part)
    rows = []
    for b, g in enumerate(groups):
        rows.append({"bin": b, "mean_predicted": float(y_hat[g].mean()), "mean_observed": float(y[g].mean()), "count": int(g.size)})
    gap = max(abs(r["mean_predicted"] - r["mean_observed"]) for r in rows)
    return {"bins": rows, "gap": gap, "merged": merged}


@dataclass
class DiagnosticsReport:
    spearman_rho: float
    knn_r2_folds: list[float]
    knn_r2_mean: float
    downstream_r2: float
    calibration_bins: list[dict]
    calibration_gap: float
    epoch: int
    history: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def history_to_csv(history: list[dict]) -> str:
    # epoch leads; history read back from an artifact has its keys sorted
    cols: list[str] = ["epoch"] if any("epoch" in rec for rec in history) else []
    for rec in history:
        for key in rec:
            if key not in cols:
                cols.append(key)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for rec in history:
        w.writerow({k: _jsonable(rec.get(k)) for k in cols})
    return buf.getvalue()


def smoothed(values, window: int = 5) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(v.size):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def diagnose(model, x_train, y_train, x_val, y_val, history=None, k: int = 5, folds: int = 5,
             n_bins: int = 10, max_pairs: int = MAX_PAIRS, seed: int = 0, config=None) -> DiagnosticsReport:
    """Full report for a trained regression encoder.

    Latent-space metrics use ``psi`` of the validation rows; the downstream
    model is a linear regression fitted on exported training latents and
    scored (R^2, calibration) on validation latents.
    """
    from veil.downstream import fit_regressor
    from veil.scrae import encode_batch, psi_batch

    yv = np.asarray(y_val, dtype=np.float64).reshape(-1)
    psi = psi_batch(model, x_val)
    rho = spearman_latent_target(psi, yv, max_pairs, seed)["rho"]
    kr = knn_r2(psi, yv, k, folds, seed)
    ds = fit_regressor(encode_batch(model, x_train), y_train)
    pred = ds.predict(encode_batch(model, x_val))
    r2 = 1.0 - float(np.sum((yv - pred) ** 2)) / float(np.sum((yv - yv.mean()) ** 2))
    cal = calibration_bins(yv, pred, n_bins)
    hist = list(history or [])
    return DiagnosticsReport(rho, kr["folds"], kr["mean"], r2, cal["bins"], cal["gap"],
                             int(hist[-1]["epoch"]) if hist else 0, hist, dict(config or {}))
