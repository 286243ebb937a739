"""Multi-level, multi-objective supervised autoencoder (dense variant).

The encoder's dense activations are concatenated into ``psi``; the supervised
head, the representation loss and the 2-D projection head all read ``psi``.
Only the bottleneck ``z`` (last encoder layer) is ever exported, as float32.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from veil import losses as L
from veil.errors import ConfigurationError, TrainingError
from veil.nn import MLP, activate, activate_grad, init_dense, make_optimizer, softmax
from veil.numeric import as_matrix, make_rng, pca_fit

log = logging.getLogger(__name__)

REPR_LOSSES = ("center", "laplacian_dense", "laplacian_knn", "info_nce", "r_nce")
PRED_LOSSES = ("cross_entropy", "hinge", "ols", "mae", "huber")
CLASSIFIER_ONLY = {"center", "info_nce", "cross_entropy", "hinge"}
REGRESSOR_ONLY = {"laplacian_dense", "laplacian_knn", "r_nce", "ols", "mae", "huber"}
OPERATOR_WHITELIST = ("affine", "relu", "tanh", "concat", "linear_head", "softmax")


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    widths: tuple[int, ...]
    activation: str = "relu"
    head: str = "classifier"  # "classifier" | "regressor"
    head_dim: int = 2  # number of classes, or regression output width
    decoder_widths: tuple[int, ...] | None = None  # None mirrors the encoder
    # tanh: a ReLU bottleneck loses units during training and sends many distinct
    # inputs to the same all-zero latent. None reuses ``activation``.
    bottleneck_activation: str | None = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.decoder_widths is not None:
            object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))

    @property
    def bottleneck_dim(self) -> int:
        return self.widths[-1]

    @property
    def psi_dim(self) -> int:
        return sum(self.widths)

    @property
    def resolved_bottleneck_activation(self) -> str:
        return self.bottleneck_activation or self.activation

    @property
    def resolved_decoder_widths(self) -> tuple[int, ...]:
        if self.decoder_widths is not None:
            return self.decoder_widths
        return tuple(reversed(self.widths[:-1]))

    def violations(self) -> list[str]:
        out = []
        if self.input_dim < 2:
            out.append("input_dim must be >= 2")
        if not self.widths or any(w < 1 for w in self.widths):
            out.append("widths must be a non-empty list of positive counts")
        elif self.bottleneck_dim >= self.input_dim:
            out.append(
                f"bottleneck_dim E={self.bottleneck_dim} must be strictly smaller than input_dim D={self.input_dim}"
            )
        if self.activation not in ("relu", "tanh"):
            out.append("activation must be relu or tanh")
        if self.bottleneck_activation not in (None, "linear", "relu", "tanh"):
            out.append("bottleneck_activation must be linear, relu or tanh")
        if self.head not in ("classifier", "regressor"):
            out.append("head must be classifier or regressor")
        if self.head_dim < 1 or (self.head == "classifier" and self.head_dim < 2):
            out.append("head_dim must be >= 2 for a classifier and >= 1 for a regressor")
        return out

    def validate(self) -> "EncoderSpec":
        v = self.violations()
        if v:
            raise ConfigurationError("; ".join(v))
        return self

    def operators(self) -> list[str]:
        ops = ["affine", self.activation]
        if self.resolved_bottleneck_activation not in ("linear", self.activation):
            ops.append(self.resolved_bottleneck_activation)
        ops += ["concat", "linear_head"]
        if self.head == "classifier":
            ops.append("softmax")
        return ops

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["decoder_widths"] = None if self.decoder_widths is None else list(self.decoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    repr_loss: str = "center"
    pred_loss: str = "cross_entropy"
    batch_size: int = 128
    epochs: int = 20
    learning_rate: float = 1e-3
    optimizer: str = "adaptive_moments"
    seed: int = 0
    center_alpha: float = 0.5
    collapse_threshold: float = 1e-6
    standardize_inputs: bool = True
    diagnostics: bool = True
    diagnostics_rows: int = 1000

    def violations(self, spec: EncoderSpec | None = None) -> list[str]:
        out = list(self.weights.violations())
        if self.repr_loss not in REPR_LOSSES:
            out.append(f"repr_loss must be one of {REPR_LOSSES}")
        if self.pred_loss not in PRED_LOSSES:
            out.append(f"pred_loss must be one of {PRED_LOSSES}")
        if self.batch_size < 2:
            out.append("batch_size must be >= 2")
        if self.repr_loss == "laplacian_dense" and self.batch_size > L.DENSE_MAX_BATCH:
            out.append(
                f"dense Laplacian limited to batch_size <= {L.DENSE_MAX_BATCH}; use laplacian_knn for larger batches"
            )
        if self.epochs < 1:
            out.append("epochs must be >= 1")
        if self.learning_rate <= 0:
            out.append("learning_rate must be > 0")
        if self.optimizer not in ("adaptive_moments", "sgd_momentum"):
            out.append("optimizer must be adaptive_moments or sgd_momentum")
        if not 0 <= self.center_alpha <= 1:
            out.append("center_alpha must be in [0, 1]")
        if spec is not None:
            for name in (self.repr_loss, self.pred_loss):
                if spec.head == "regressor" and name in CLASSIFIER_ONLY:
                    out.append(f"{name} requires a classifier head")
                if spec.head == "classifier" and name in REGRESSOR_ONLY:
                    out.append(f"{name} requires a regressor head")
        return out

    def validate(self, spec: EncoderSpec | None = None) -> "TrainConfig":
        v = self.violations(spec)
        if v:
            raise ConfigurationError("; ".join(v))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = L.LossWeights(**d.get("weights", {}))
        return cls(**d)


@dataclass
class EncoderModel:
    spec: EncoderSpec
    params: dict[str, np.ndarray]
    centers: L.ClassCenters | None = None
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = self.spec
        self.encoder = MLP([s.input_dim, *s.widths], s.activation, s.resolved_bottleneck_activation, prefix="enc")
        self.decoder = MLP([s.bottleneck_dim, *s.resolved_decoder_widths, s.input_dim], s.activation, "linear", prefix="dec")
        self.head_net = MLP([s.psi_dim, s.head_dim], prefix="head")
        self.proj_net = MLP([s.psi_dim, 2], prefix="proj")
        for net in (self.encoder, self.decoder, self.head_net, self.proj_net):
            net.params = self.params

    @classmethod
    def initialize(cls, spec: EncoderSpec, seed: int) -> "EncoderModel":
        spec.validate()
        rng = make_rng(seed)
        params: dict[str, np.ndarray] = {
            "norm.mean": np.zeros(spec.input_dim),
            "norm.scale": np.ones(spec.input_dim),
            "target.mean": np.zeros(spec.head_dim if spec.head == "regressor" else 1),
            "target.scale": np.ones(spec.head_dim if spec.head == "regressor" else 1),
        }
        enc_sizes = [spec.input_dim, *spec.widths]
        dec_sizes = [spec.bottleneck_dim, *spec.resolved_decoder_widths, spec.input_dim]
        for prefix, sizes in (("enc", enc_sizes), ("dec", dec_sizes), ("head", [spec.psi_dim, spec.head_dim]), ("proj", [spec.psi_dim, 2])):
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"] = init_dense(rng, a, b)
        return cls(spec, params)

    def trainable_keys(self) -> list[str]:
        return [k for k in self.params if not k.startswith(("norm.", "target."))]

    def normalize(self, x) -> np.ndarray:
        return (as_matrix(x) - self.params["norm.mean"]) / self.params["norm.scale"]

    def predict(self, x) -> np.ndarray:
        """Head output on the original target scale (probabilities for a classifier)."""
        fp = forward_multilevel(self, x)
        if self.spec.head == "classifier":
            return softmax(fp.y_hat)
        return fp.y_hat * self.params["target.scale"] + self.params["target.mean"]


@dataclass
class ForwardPass:
    activations: list[np.ndarray]
    psi: np.ndarray
    z: np.ndarray
    x_hat: np.ndarray
    y_hat: np.ndarray
    psi2: np.ndarray
    x_norm: np.ndarray
    enc_cache: list = field(repr=False, default=None)
    dec_cache: list = field(repr=False, default=None)
    head_cache: list = field(repr=False, default=None)
    proj_cache: list = field(repr=False, default=None)


def forward_multilevel(model: EncoderModel, x_batch, params=None) -> ForwardPass:
    p = model.params if params is None else params
    x = as_matrix(x_batch)
    if x.shape[1] != model.spec.input_dim:
        raise ConfigurationError(f"expected {model.spec.input_dim} input columns, got {x.shape[1]}")
    xn = (x - p["norm.mean"]) / p["norm.scale"]
    z, enc_cache = model.encoder.forward(xn, p)
    acts = [c[2] for c in enc_cache]
    psi = np.concatenate(acts, axis=1)
    x_hat, dec_cache = model.decoder.forward(z, p)
    y_hat, head_cache = model.head_net.forward(psi, p)
    psi2, proj_cache = model.proj_net.forward(psi, p)
    return ForwardPass(acts, psi, z, x_hat, y_hat, psi2, xn, enc_cache, dec_cache, head_cache, proj_cache)


def encode_batch(model: EncoderModel, x_batch) -> np.ndarray:
    """Bottleneck latents quantised to float32; nothing else leaves this function."""
    x = as_matrix(x_batch)
    if x.shape[1] != model.spec.input_dim:
        raise ConfigurationError(f"expected {model.spec.input_dim} input columns, got {x.shape[1]}")
    z, _ = model.encoder.forward(model.normalize(x))
    return z.astype(np.float32)


def psi_batch(model: EncoderModel, x_batch) -> np.ndarray:
    """Full multi-level latent (trusted side only: diagnostics and training)."""
    return forward_multilevel(model, x_batch).psi


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray  # int labels (N,) for classifiers, float (N, dim) standardised targets otherwise
    x_pca: np.ndarray | None = None


@dataclass
class LossContext:
    """Per-run state the representation losses need besides the batch itself."""

    centers: L.ClassCenters | None = None
    sigma: float = 1.0


def _repr_component(name, psi, y, weights: L.LossWeights, ctx: LossContext):
    if name == "center":
        return L.center_loss(psi, y, ctx.centers)
    if name == "laplacian_dense":
        return L.laplacian_loss_dense(psi, L.build_dense_graph(y, ctx.sigma))
    if name == "laplacian_knn":
        k = min(weights.k, psi.shape[0] - 1)
        return L.laplacian_loss_sparse(psi, L.build_knn_graph(y, ctx.sigma, k, weights.sym_mode))
    if name == "info_nce":
        return L.info_nce_loss(psi, y, weights.tau)
    if name == "r_nce":
        return L.r_nce_loss(psi, y, ctx.sigma, weights.tau)
    raise ConfigurationError(f"unknown repr_loss {name!r}")


def _pred_component(name, y_hat, y, weights: L.LossWeights):
    if name == "cross_entropy":
        return L.cross_entropy_loss(y, y_hat)
    if name == "hinge":
        return L.hinge_loss(y_hat, y)
    if name == "ols":
        return L.ols_loss(y, y_hat)
    if name == "mae":
        return L.mae_loss(y, y_hat)
    if name == "huber":
        return L.huber_loss(y, y_hat, weights.delta)
    raise ConfigurationError(f"unknown pred_loss {name!r}")


def _component(label, fn, *args):
    try:
        return fn(*args)
    except (ConfigurationError, ValueError) as exc:
        raise ConfigurationError(f"{label} loss failed: {exc}") from exc


def composite_loss(model: EncoderModel, batch: Batch, config: TrainConfig, ctx: LossContext | None = None, params=None):
    """Weighted sum of reconstruction, representation, prediction and PCA-alignment losses.

    Returns ``(total, components, grads)``; ``grads`` covers every trainable parameter.
    """
    p = model.params if params is None else params
    ctx = ctx or LossContext(centers=model.centers)
    w = config.weights
    fp = forward_multilevel(model, batch.x, p)
    n = fp.psi.shape[0]

    comps = {}
    comps["recon"], g_xhat = _component("reconstruction", L.ols_loss, fp.x_norm, fp.x_hat)
    comps["repr"], g_psi_repr = _component("representation", _repr_component, config.repr_loss, fp.psi, batch.y, w, ctx)
    comps["pred"], g_yhat = _component("prediction", _pred_component, config.pred_loss, fp.y_hat, batch.y, w)
    if batch.x_pca is not None:
        comps["reg"], g_psi2 = _component("regularization", L.pca_cosine_loss, fp.psi2, batch.x_pca)
    else:
        comps["reg"], g_psi2 = 0.0, np.zeros_like(fp.psi2)
    total = w.lambda_recon * comps["recon"] + w.lambda_repr * comps["repr"] + w.lambda_pred * comps["pred"] + w.lambda_reg * comps["reg"]

    grads: dict[str, np.ndarray] = {}
    g_z, g = model.decoder.backward(fp.dec_cache, w.lambda_recon * g_xhat, p)
    grads.update(g)
    g_psi_head, g = model.head_net.backward(fp.head_cache, w.lambda_pred * g_yhat, p)
    grads.update(g)
    g_psi_proj, g = model.proj_net.backward(fp.proj_cache, w.lambda_reg * g_psi2, p)
    grads.update(g)
    g_psi = w.lambda_repr * g_psi_repr + g_psi_head + g_psi_proj

    # split the concatenated gradient back onto each encoder layer
    widths = model.spec.widths
    offsets = np.cumsum((0, *widths))
    ext = [g_psi[:, offsets[i] : offsets[i + 1]] for i in range(len(widths))]
    ext[-1] = ext[-1] + g_z
    g_up = np.zeros((n, widths[-1]))
    for i in reversed(range(len(widths))):
        h_in, pre, out = fp.enc_cache[i]
        g_out = ext[i] + g_up
        g_pre = activate_grad(pre, out, g_out, model.encoder.layer_activation(i))
        grads[f"enc.{i}.W"] = h_in.T @ g_pre
        grads[f"enc.{i}.b"] = g_pre.sum(axis=0)
        if i > 0:
            g_up = g_pre @ p[f"enc.{i}.W"].T
    return float(total), comps, grads


def detect_collapse(psi_batch, threshold: float = 1e-6) -> dict:
    """Flag a batch whose latents have (nearly) no spread."""
    psi = as_matrix(psi_batch)
    if psi.shape[0] < 2:
        raise ConfigurationError("detect_collapse needs at least 2 rows")
    mean_var = float(psi.var(axis=0).mean())
    diff = psi[:, None, :] - psi[None, :, :] if psi.shape[0] <= 512 else None
    if diff is None:
        sub = psi[:512]
        diff = sub[:, None, :] - sub[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    m = d.shape[0]
    mean_pair = float(d.sum() / (m * (m - 1)))
    mean_norm = float(np.linalg.norm(psi, axis=1).mean())
    if threshold <= 0:
        flagged = False
    else:
        flagged = mean_var < threshold or mean_pair < 1e-6 * mean_norm
    return {"collapsed": bool(flagged), "mean_variance": mean_var, "mean_pair_distance": mean_pair, "mean_row_norm": mean_norm}


def _standardizer(x: np.ndarray):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def _as_targets(spec: EncoderSpec, y) -> np.ndarray:
    if spec.head == "classifier":
        lab = np.asarray(y).reshape(-1).astype(np.int64)
        if lab.min() < 0 or lab.max() >= spec.head_dim:
            raise ConfigurationError(f"labels must lie in [0, {spec.head_dim - 1}]")
        return lab
    t = np.asarray(y, dtype=np.float64)
    t = t.reshape(-1, 1) if t.ndim == 1 else t
    if t.shape[1] != spec.head_dim:
        raise ConfigurationError(f"expected {spec.head_dim} target columns, got {t.shape[1]}")
    return t


def _r2(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(len(y), -1)
    ss_tot = float(np.sum((y - y.mean(axis=0)) ** 2))
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot if ss_tot > 0 else float("nan")


def _chunked_psi(model, x, chunk=4096):
    return np.concatenate([forward_multilevel(model, x[s : s + chunk]).psi for s in range(0, x.shape[0], chunk)], axis=0)


def train(x, y, spec: EncoderSpec, config: TrainConfig, x_val=None, y_val=None, model: EncoderModel | None = None):
    """Mini-batch training of the composite objective.

    Returns ``(model, log)`` where ``log`` holds one dict per epoch (epoch 0
    describes the initialisation). Regression runs with diagnostics enabled
    also record Spearman rho and k-NN R^2 on the validation rows.
    """
    from veil import diagnostics as diag

    spec.validate()
    config.validate(spec)
    x = as_matrix(x)
    if x.shape[1] != spec.input_dim:
        raise ConfigurationError(f"expected {spec.input_dim} input columns, got {x.shape[1]}")
    t = _as_targets(spec, y)
    if x.shape[0] != t.shape[0]:
        raise ConfigurationError("x and y have different row counts")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise ConfigurationError("training data contains non-finite values")
    rng = make_rng(config.seed)
    if model is None:
        model = EncoderModel.initialize(spec, config.seed)
    p = model.params
    if config.standardize_inputs:
        p["norm.mean"], p["norm.scale"] = _standardizer(x)
    if spec.head == "regressor":
        p["target.mean"], p["target.scale"] = _standardizer(t)
        t_std = (t - p["target.mean"]) / p["target.scale"]
    else:
        t_std = t

    xn = model.normalize(x)
    pca = pca_fit(xn, 2)
    x_pca = pca.transform(xn)

    ctx = LossContext()
    if config.repr_loss in ("laplacian_dense", "laplacian_knn", "r_nce"):
        ctx.sigma = config.weights.sigma if config.weights.sigma is not None else L.sigma_auto(t_std)
    if config.repr_loss == "center":
        model.centers = L.ClassCenters.from_data(_chunked_psi(model, x), t, spec.head_dim)
    ctx.centers = model.centers

    if x_val is not None:
        probe_x = as_matrix(x_val)[: config.diagnostics_rows]
        probe_y = _as_targets(spec, y_val)[: config.diagnostics_rows]
    else:
        probe_x, probe_y = x[: config.diagnostics_rows], t[: config.diagnostics_rows]

    opt = make_optimizer(config.optimizer, config.learning_rate)
    keys = model.trainable_keys()
    history = []

    def epoch_record(epoch, sums, count):
        rec = {"epoch": epoch}
        for k in ("recon", "repr", "pred", "reg", "total"):
            rec[k] = sums.get(k, float("nan")) / count if count else float("nan")
        fp = forward_multilevel(model, probe_x)
        coll = detect_collapse(fp.psi, config.collapse_threshold)
        rec["collapse_metric"] = coll["mean_variance"]
        rec["collapsed"] = coll["collapsed"]
        if spec.head == "regressor" and config.diagnostics and probe_x.shape[0] >= 10:
            y_pred = fp.y_hat * p["target.scale"] + p["target.mean"]
            rec["head_r2"] = _r2(probe_y, y_pred)
            rec["spearman_rho"] = diag.spearman_latent_target(fp.psi, probe_y, seed=config.seed)["rho"]
            kr = diag.knn_r2(fp.psi, probe_y, k=5, folds=5, seed=config.seed)
            rec["knn_r2"] = kr["mean"]
        elif spec.head == "classifier":
            rec["head_accuracy"] = float(np.mean(np.argmax(fp.y_hat, axis=1) == probe_y))
        return rec, coll

    rec, _ = epoch_record(0, {}, 0)
    history.append(rec)
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        sums: dict[str, float] = {}
        count = 0
        for b, idx in enumerate(_epoch_batches(n, config.batch_size, rng)):
            batch = Batch(x[idx], t_std[idx], x_pca[idx])
            total, comps, grads = composite_loss(model, batch, config, ctx)
            if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            m = len(idx)
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v * m
            sums["total"] = sums.get("total", 0.0) + total * m
            count += m
            if config.repr_loss == "center" and model.centers is not None:
                psi = forward_multilevel(model, batch.x).psi
            opt.step(p, {k: grads[k] for k in keys})
            if config.repr_loss == "center" and model.centers is not None:
                model.centers = L.update_centers(model.centers, psi, batch.y, config.center_alpha)
                ctx.centers = model.centers
        rec, coll = epoch_record(epoch, sums, count)
        history.append(rec)
        if coll["collapsed"]:
            log.warning(
                "latent collapse at epoch %d (mean variance %.3g): raise lambda_recon or switch repr_loss to a contrastive loss",
                epoch, coll["mean_variance"],
            )
    model.train_meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "config": config.to_dict(),
        "sigma": ctx.sigma,
        "n_train": int(n),
        "history": history,
    }
    return model, history


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    for s in starts:
        idx = perm[s : s + batch_size]
        if len(idx) < 2:
            continue
        yield idx


def plain_autoencoder_config(config: TrainConfig) -> TrainConfig:
    """Same run with only the reconstruction term switched on (the baseline autoencoder)."""
    w = replace(config.weights, lambda_recon=1.0, lambda_repr=0.0, lambda_pred=0.0, lambda_reg=0.0)
    return replace(config, weights=w)
