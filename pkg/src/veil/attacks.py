"""Privacy attacks against exported latents, each with a permutation test.

Every attack produces an :class:`AttackReport`. The verdict is ``leak`` only
when the attacker beats its baseline by more than a practical margin *and*
the permutation p-value is below the significance level.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from sklearn.feature_selection import VarianceThreshold
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import StratifiedKFold, train_test_split
from sklearn.neighbors import NearestCentroid
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from veil.errors import ConfigurationError
from veil.nn import MLP, Adam, batches
from veil.numeric import as_matrix, effective_dimensionality

log = logging.getLogger(__name__)

PRACTICAL_THRESHOLD = 0.02
ALPHA = 0.05
EXIT_CODES = {"no_leak": 0, "leak": 2, "inconclusive": 3}
MIN_RECON_ROWS = 50
MIN_MEMBERSHIP_ROWS = 500


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(t) for t in tags]])


# -- statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class PermutationTest:
    initial_permutations: int = 100
    max_permutations: int = 1000
    gray_zone: tuple[float, float] = (0.01, 0.10)
    escalate: bool = True


def permutation_p_value(observed: float, null_sampler: Callable[[int], float], test: PermutationTest = PermutationTest()):
    """Add-one Monte Carlo p-value ``(1 + #{null >= observed}) / (1 + n)``.

    ``null_sampler(i)`` must return the i-th null statistic deterministically.
    If the first-pass p lands inside the gray zone, sampling continues up to
    ``max_permutations``. Returns ``(p, permutations_used, null_values)``.
    """
    null = [float(null_sampler(i)) for i in range(test.initial_permutations)]
    p = (1 + sum(v >= observed for v in null)) / (1 + len(null))
    lo, hi = test.gray_zone
    if test.escalate and lo <= p <= hi and test.max_permutations > len(null):
        null.extend(float(null_sampler(i)) for i in range(len(null), test.max_permutations))
        p = (1 + sum(v >= observed for v in null)) / (1 + len(null))
    return p, len(null), np.asarray(null)


def verdict(advantage: float, p_value: float, threshold: float = PRACTICAL_THRESHOLD, alpha: float = ALPHA, degenerate: bool = False) -> str:
    if degenerate or not np.isfinite(advantage) or not np.isfinite(p_value):
        return "inconclusive"
    return "leak" if (advantage > threshold and p_value < alpha) else "no_leak"


@dataclass
class AttackReport:
    attack: str  # reconstruction | attribute | membership
    metric_name: str
    observed: float
    baseline: float
    advantage: float
    std_dev: float
    p_value: float
    permutations_used: int
    verdict: str
    details: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _report(attack, metric, observed, baseline, std, p, used, threshold, details, config, degenerate=False):
    adv = float(observed - baseline)
    return AttackReport(
        attack, metric, float(observed), float(baseline), adv, float(std), float(p), int(used),
        verdict(adv, p, threshold, degenerate=degenerate), details, config,
    )


# -- structural ---------------------------------------------------------------


@dataclass
class StructuralCheckReport:
    input_dim: int
    latent_dim: int
    compression_ok: bool
    operator_whitelist_ok: bool
    unknown_operators: list
    effective_dim: int
    effective_dim_ok: bool
    duplicate_latents: int

    @property
    def passed(self) -> bool:
        return self.compression_ok and self.operator_whitelist_ok and self.effective_dim_ok and self.duplicate_latents == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def duplicate_latents(latents, x=None) -> int:
    """Rows whose float32 latent coincides with an earlier row's.

    With ``x`` given, only collisions between distinct input rows count;
    repeated raw records map to the same latent by construction.
    """
    z = np.asarray(latents, dtype=np.float32)
    if z.shape[0] == 0:
        return 0
    if x is not None:
        _, first = np.unique(as_matrix(x), axis=0, return_index=True)
        z = z[np.sort(first)]
    return int(z.shape[0] - np.unique(z, axis=0).shape[0])


def structural_report(input_dim: int, latent_dim: int, operators, x_sample, latents, threshold: float = 0.95) -> StructuralCheckReport:
    from veil.scrae import OPERATOR_WHITELIST

    x = as_matrix(x_sample)
    if x.shape[0] < 2:
        raise ConfigurationError("structural check needs at least 2 sample rows")
    unknown = sorted(set(operators) - set(OPERATOR_WHITELIST))
    eff = effective_dimensionality(x, threshold)
    return StructuralCheckReport(
        int(input_dim), int(latent_dim), latent_dim < input_dim, not unknown, unknown,
        int(eff), eff > latent_dim, duplicate_latents(latents, x),
    )


def structural_check(model_artifact, x_sample) -> StructuralCheckReport:
    """Checks on an encoder artifact (path) or an in-memory encoder."""
    from veil import artifact
    from veil.scrae import EncoderModel, encode_batch

    if isinstance(model_artifact, EncoderModel):
        model, ops = model_artifact, model_artifact.spec.operators()
    else:
        model = artifact.load_encoder(model_artifact)
        ops = model.train_meta.get("operators", [])
    x = as_matrix(x_sample)
    return structural_report(model.spec.input_dim, model.spec.bottleneck_dim, ops, x, encode_batch(model, x))


# -- reconstruction -----------------------------------------------------------


@dataclass(frozen=True)
class ReconstructionConfig:
    hidden: tuple[int, ...] | None = None  # None -> (2E, 2E)
    epochs: int = 200
    patience: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 128
    test_fraction: float = 0.3
    val_fraction: float = 0.2  # of the training split, for early stopping
    permutations: int = 20
    escalate: bool = False
    threshold: float = PRACTICAL_THRESHOLD
    bootstrap: int = 200
    seed: int = 0


def _standardize(train, *others):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [(a - mu) / sd for a in (train, *others)]


def _fit_decoder(z_tr, x_tr, hidden, cfg: ReconstructionConfig, rng):
    """Dense decoder ``z -> x`` trained on MSE with early stopping on a held-out slice."""
    n = z_tr.shape[0]
    n_val = max(1, int(round(cfg.val_fraction * n)))
    perm = rng.permutation(n)
    vi, ti = perm[:n_val], perm[n_val:]
    net = MLP([z_tr.shape[1], *hidden, x_tr.shape[1]], "relu", "linear", prefix="atk", rng=rng)
    opt = Adam(cfg.learning_rate)
    best, best_params, stale = np.inf, dict(net.params), 0
    for _ in range(cfg.epochs):
        for idx in batches(len(ti), cfg.batch_size, rng):
            rows = ti[idx]
            out, cache = net.forward(z_tr[rows])
            g = (out - x_tr[rows]) * (2.0 / (len(rows) * x_tr.shape[1]))
            _, grads = net.backward(cache, g)
            opt.step(net.params, grads)
        val = float(np.mean((net.forward(z_tr[vi])[0] - x_tr[vi]) ** 2))
        if val < best - 1e-9:
            best, best_params, stale = val, dict(net.params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.params = best_params
    return net


def _column_scores(pred, x_te, base, kinds):
    """Per-column score (1 - MSE/var for numeric, accuracy for binary) for predictions and baseline."""
    s_obs, s_base = np.empty(len(kinds)), np.empty(len(kinds))
    for j, kind in enumerate(kinds):
        t = x_te[:, j]
        if kind == "binary":
            s_obs[j] = np.mean((pred[:, j] >= 0.5) == (t >= 0.5))
            s_base[j] = np.mean((base[j] >= 0.5) == (t >= 0.5))
        else:
            var = np.var(t)
            var = var if var > 0 else 1.0
            s_obs[j] = 1.0 - np.mean((pred[:, j] - t) ** 2) / var
            s_base[j] = 1.0 - np.mean((base[j] - t) ** 2) / var
    return s_obs, s_base


def reconstruction_attack(latents, x_raw, feature_kinds=None, config: ReconstructionConfig = ReconstructionConfig()) -> AttackReport:
    """Train a decoder from latents back to raw features and score it on held-out rows.

    Numeric columns are scored as ``1 - MSE/var`` against the train-mean
    prediction; binary columns by accuracy against the train-mode prediction.
    The null distribution retrains the decoder on training pairs whose
    latent-to-row correspondence has been shuffled.
    """
    z = np.asarray(latents, dtype=np.float64)
    x = as_matrix(x_raw)
    if z.ndim != 2 or z.shape[0] != x.shape[0]:
        raise ConfigurationError("latents and raw features must be paired row for row")
    if z.shape[0] < MIN_RECON_ROWS:
        raise ConfigurationError(f"reconstruction attack needs at least {MIN_RECON_ROWS} paired rows, got {z.shape[0]}")
    kinds = list(feature_kinds) if feature_kinds is not None else ["numeric"] * x.shape[1]
    if len(kinds) != x.shape[1] or set(kinds) - {"numeric", "binary"}:
        raise ConfigurationError("feature_kinds must label every column numeric or binary")
    num = np.array([k == "numeric" for k in kinds])
    hidden = config.hidden or (2 * z.shape[1], 2 * z.shape[1])

    idx_tr, idx_te = train_test_split(np.arange(z.shape[0]), test_size=config.test_fraction, random_state=config.seed)
    z_tr, z_te = _standardize(z[idx_tr], z[idx_te])
    x_tr, x_te = x[idx_tr].copy(), x[idx_te].copy()
    if num.any():
        x_tr[:, num], x_te[:, num] = _standardize(x[idx_tr][:, num], x[idx_te][:, num])
    base = np.where(num, x_tr.mean(axis=0), (x_tr.mean(axis=0) >= 0.5).astype(float))

    def advantage_for(x_train, rng):
        net = _fit_decoder(z_tr, x_train, hidden, config, rng)
        pred = net.forward(z_te)[0]
        s_obs, s_base = _column_scores(pred, x_te, base, kinds)
        return s_obs, s_base, pred

    s_obs, s_base, pred = advantage_for(x_tr, _rng(config.seed, 0))
    observed, baseline = float(s_obs.mean()), float(s_base.mean())
    adv = observed - baseline

    def null(i):
        rng = _rng(config.seed, 1, i)
        shuffled = x_tr[rng.permutation(x_tr.shape[0])]
        o, b, _ = advantage_for(shuffled, rng)
        return float(o.mean() - b.mean())

    test = PermutationTest(config.permutations, max(config.permutations, 1000), escalate=config.escalate)
    p, used, null_vals = permutation_p_value(adv, null, test)

    boot = []
    brng = _rng(config.seed, 2)
    for _ in range(config.bootstrap):
        r = brng.integers(0, x_te.shape[0], x_te.shape[0])
        o, b = _column_scores(pred[r], x_te[r], base, kinds)
        boot.append(o.mean() - b.mean())
    details = {
        "per_column_advantage": (s_obs - s_base).tolist(),
        "n_train": int(len(idx_tr)),
        "n_test": int(len(idx_te)),
        "decoder_hidden": list(hidden),
        "null_mean": float(null_vals.mean()),
    }
    return _report("reconstruction", "weighted_feature_score", observed, baseline, np.std(boot), p, used,
                   config.threshold, details, asdict(config))


# -- attribute inference ------------------------------------------------------


@dataclass(frozen=True)
class AttributeConfig:
    folds: int = 5
    classifier: str = "logistic"  # logistic | mlp
    permutations: int = 100
    max_permutations: int = 1000
    threshold: float = PRACTICAL_THRESHOLD
    baselines: bool = True
    seed: int = 0


def _make_classifier(kind: str, seed: int):
    # dead units give constant latent columns; drop them before scaling
    if kind == "logistic":
        return make_pipeline(VarianceThreshold(), StandardScaler(), LogisticRegression(max_iter=1000))
    if kind == "mlp":
        return make_pipeline(VarianceThreshold(), StandardScaler(), MLPClassifier((32,), max_iter=500, random_state=seed))
    if kind == "centroid":
        return make_pipeline(VarianceThreshold(), StandardScaler(), NearestCentroid())
    raise ConfigurationError(f"unknown attack classifier {kind!r}")


def _cv_accuracy(features, labels, kind, folds, seed):
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    accs = []
    for tr, te in skf.split(features, labels):
        clf = _make_classifier(kind, seed).fit(features[tr], labels[tr])
        accs.append(float(np.mean(clf.predict(features[te]) == labels[te])))
    return np.asarray(accs)


def magnitude_features(latents) -> np.ndarray:
    z = np.asarray(latents, dtype=np.float64)
    return np.column_stack([np.linalg.norm(z, axis=1), np.abs(z).sum(axis=1), np.abs(z).max(axis=1)])


def _attribute_run(features, labels, kind, config: AttributeConfig, tag: int, metric: str) -> AttackReport:
    accs = _cv_accuracy(features, labels, kind, config.folds, config.seed)
    observed = float(accs.mean())
    baseline = float(np.bincount(labels).max() / labels.size)

    def null(i):
        perm = _rng(config.seed, tag, i).permutation(labels)
        return float(_cv_accuracy(features, perm, kind, config.folds, config.seed).mean())

    test = PermutationTest(config.permutations, config.max_permutations)
    p, used, _ = permutation_p_value(observed, null, test)
    details = {"fold_accuracies": accs.tolist(), "classifier": kind}
    return _report("attribute", metric, observed, baseline, accs.std(), p, used, config.threshold, details, asdict(config))


def attribute_inference(latents, attribute_labels, config: AttributeConfig = AttributeConfig()) -> AttackReport:
    """Predict a sensitive attribute from latents under stratified k-fold CV.

    The report's ``details["baselines"]`` holds the magnitude attack (norms of
    each latent row) and the nearest-centroid attack as sub-reports.
    """
    z = np.asarray(latents, dtype=np.float64)
    raw = np.asarray(attribute_labels).reshape(-1)
    if raw.shape[0] != z.shape[0]:
        raise ConfigurationError("one attribute label per latent row required")
    _, labels = np.unique(raw, return_inverse=True)
    counts = np.bincount(labels)
    if counts.size < 2:
        raise ConfigurationError("attribute has a single class; nothing to infer")
    if counts.min() < config.folds:
        raise ConfigurationError(
            f"class-count check failed: smallest class has {counts.min()} rows, fewer than folds={config.folds}"
        )
    rep = _attribute_run(z, labels, config.classifier, config, 10, "cv_accuracy")
    if config.baselines:
        mag = _attribute_run(magnitude_features(z), labels, config.classifier, config, 11, "magnitude_cv_accuracy")
        cen = _attribute_run(z, labels, "centroid", config, 12, "centroid_cv_accuracy")
        rep.details["baselines"] = {"magnitude": mag.to_dict(), "centroid": cen.to_dict()}
    return rep


# -- membership inference -----------------------------------------------------


@dataclass(frozen=True)
class MembershipConfig:
    n_bins: int = 4
    downstream: str = "logistic"  # logistic | mlp (the latter overfits on purpose)
    downstream_C: float = 1.0
    mlp_hidden: tuple[int, ...] = (256, 256)
    mlp_epochs: int = 2000
    variant: str = "label_informed"  # label_informed | black_box
    attack_classifier: str = "logistic"
    permutations: int = 100
    max_permutations: int = 1000
    threshold: float = PRACTICAL_THRESHOLD
    bootstrap: int = 200
    seed: int = 0


def quantile_bins(y, n_bins: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    edges = np.quantile(y, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(edges, y, side="right")


def _entropy(p):
    q = np.clip(p, 1e-12, 1.0)
    return -(p * np.log(q)).sum(axis=1)


def membership_features(probs, labels, variant: str) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    srt = np.sort(p, axis=1)
    margin = srt[:, -1] - srt[:, -2]
    ent = _entropy(p)
    if variant == "black_box":
        return np.column_stack([srt[:, -1], ent, margin])
    if variant == "label_informed":
        conf = p[np.arange(p.shape[0]), labels]
        return np.column_stack([-np.log(np.clip(conf, 1e-12, 1.0)), conf, ent, margin])
    raise ConfigurationError(f"unknown membership variant {variant!r}")


def _downstream(config: MembershipConfig):
    if config.downstream == "logistic":
        return LogisticRegression(C=config.downstream_C, max_iter=1000)
    if config.downstream == "mlp":
        return MLPClassifier(config.mlp_hidden, alpha=0.0, max_iter=config.mlp_epochs, tol=0.0,
                             n_iter_no_change=config.mlp_epochs, random_state=config.seed)
    raise ConfigurationError(f"unknown downstream model {config.downstream!r}")


def membership_inference(latents, targets, config: MembershipConfig = MembershipConfig()) -> AttackReport:
    """Decide membership in the downstream model's training set from its outputs.

    Targets are binned into ``n_bins`` quantile classes. A stratified 60/20/20
    split gives downstream members, attack-training non-members and
    attack-test non-members; each non-member pool is paired with an equal
    number of members. The p-value permutes the attack-test membership labels.
    """
    z = np.asarray(latents, dtype=np.float64)
    t = np.asarray(targets).reshape(-1)
    if z.shape[0] != t.shape[0]:
        raise ConfigurationError("one target per latent row required")
    if z.shape[0] < MIN_MEMBERSHIP_ROWS:
        raise ConfigurationError(f"membership inference needs at least {MIN_MEMBERSHIP_ROWS} rows, got {z.shape[0]}")
    if np.issubdtype(t.dtype, np.integer) and np.unique(t).size <= config.n_bins:
        labels = np.unique(t, return_inverse=True)[1]
    else:
        labels = quantile_bins(t.astype(np.float64), config.n_bins)
    idx = np.arange(z.shape[0])
    mem, rest = train_test_split(idx, train_size=0.6, stratify=labels, random_state=config.seed)
    non_a, non_b = train_test_split(rest, train_size=0.5, stratify=labels[rest], random_state=config.seed)

    model = _downstream(config).fit(z[mem], labels[mem])
    col = {c: j for j, c in enumerate(model.classes_)}
    probs = model.predict_proba(z)
    full = np.zeros((z.shape[0], int(labels.max()) + 1))
    for c, j in col.items():
        full[:, c] = probs[:, j]
    degenerate = bool(np.all(np.ptp(full, axis=0) < 1e-12))
    feats = membership_features(full, labels, config.variant)

    rng = _rng(config.seed, 20)
    mem_shuf = rng.permutation(mem)
    mem_a, mem_b = mem_shuf[: len(non_a)], mem_shuf[len(non_a) : len(non_a) + len(non_b)]
    a_idx = np.concatenate([mem_a, non_a])
    a_lab = np.concatenate([np.ones(len(mem_a)), np.zeros(len(non_a))]).astype(int)
    b_idx = np.concatenate([mem_b, non_b])
    b_lab = np.concatenate([np.ones(len(mem_b)), np.zeros(len(non_b))]).astype(int)

    if degenerate:
        # identical outputs for every record: nothing to learn, predict the majority
        pred = np.full(len(b_idx), int(a_lab.mean() >= 0.5))
        score = np.full(len(b_idx), 0.5)
    else:
        atk = _make_classifier(config.attack_classifier, config.seed).fit(feats[a_idx], a_lab)
        pred = atk.predict(feats[b_idx])
        score = atk.predict_proba(feats[b_idx])[:, 1]
    observed = float(np.mean(pred == b_lab))
    baseline = float(max(b_lab.mean(), 1 - b_lab.mean()))
    auc = float(roc_auc_score(b_lab, score)) if not degenerate else 0.5

    def null(i):
        return float(np.mean(pred == _rng(config.seed, 21, i).permutation(b_lab)))

    test = PermutationTest(config.permutations, config.max_permutations)
    p, used, _ = permutation_p_value(observed, null, test)
    brng = _rng(config.seed, 22)
    boot = [np.mean(pred[r] == b_lab[r]) for r in (brng.integers(0, len(b_lab), len(b_lab)) for _ in range(config.bootstrap))]
    details = {
        "auc": auc,
        "variant": config.variant,
        "degenerate_probabilities": degenerate,
        "n_members": int(len(mem)),
        "n_attack_train": int(len(a_idx)),
        "n_attack_test": int(len(b_idx)),
        "downstream_train_accuracy": float(np.mean(model.predict(z[mem]) == labels[mem])),
        "downstream_holdout_accuracy": float(np.mean(model.predict(z[rest]) == labels[rest])),
    }
    if degenerate:
        log.warning("downstream probabilities are identical for every record; membership verdict is inconclusive")
    return _report("membership", "attack_accuracy", observed, baseline, np.std(boot), p, used, config.threshold,
                   details, asdict(config), degenerate=degenerate)
