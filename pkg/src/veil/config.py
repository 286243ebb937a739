"""Run configuration: one JSON document for training, attacks and services.

Parsing is strict. Unknown keys anywhere are errors, and every problem found
is reported together rather than stopping at the first.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from veil import losses as L
from veil.attacks import AttributeConfig, MembershipConfig, ReconstructionConfig
from veil.errors import ConfigurationError
from veil.scrae import EncoderSpec, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    target: str | None = "target"
    exclude: tuple[str, ...] = ()
    keep: tuple[str, ...] = ()  # side columns (e.g. a sensitive attribute) kept out of the features
    validation_fraction: float = 0.2


@dataclass(frozen=True)
class EncoderSettings:
    widths: tuple[int, ...] = (32, 16)
    activation: str = "relu"
    head: str = "regressor"
    head_dim: int = 1
    decoder_widths: tuple[int, ...] | None = None
    bottleneck_activation: str | None = "tanh"

    def spec(self, input_dim: int) -> EncoderSpec:
        return EncoderSpec(input_dim, self.widths, self.activation, self.head, self.head_dim, self.decoder_widths,
                           self.bottleneck_activation)


@dataclass(frozen=True)
class AttackSettings:
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    attribute: AttributeConfig = field(default_factory=AttributeConfig)
    membership: MembershipConfig = field(default_factory=MembershipConfig)
    attribute_column: str | None = None


@dataclass(frozen=True)
class DiagnosticsSettings:
    max_pairs: int = 100_000
    k: int = 5
    folds: int = 5
    n_bins: int = 10


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 7400
    inference_host: str = "127.0.0.1"
    inference_port: int = 7401
    audit_path: str | None = None
    timeout: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(repr_loss="laplacian_dense", pred_loss="huber", batch_size=256))
    data: DataConfig = field(default_factory=DataConfig)
    attack: AttackSettings = field(default_factory=AttackSettings)
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def with_seed(self, seed: int) -> "RunConfig":
        """Propagate one seed into training and every attack."""
        a = self.attack
        return dataclasses.replace(
            self,
            seed=seed,
            train=dataclasses.replace(self.train, seed=seed),
            attack=dataclasses.replace(
                a,
                reconstruction=dataclasses.replace(a.reconstruction, seed=seed),
                attribute=dataclasses.replace(a.attribute, seed=seed),
                membership=dataclasses.replace(a.membership, seed=seed),
            ),
        )


_NESTED = {
    RunConfig: {"encoder": EncoderSettings, "train": TrainConfig, "data": DataConfig, "attack": AttackSettings,
                "diagnostics": DiagnosticsSettings, "service": ServiceConfig},
    TrainConfig: {"weights": L.LossWeights},
    AttackSettings: {"reconstruction": ReconstructionConfig, "attribute": AttributeConfig, "membership": MembershipConfig},
}
_TUPLES = {"widths", "decoder_widths", "exclude", "keep", "hidden", "mlp_hidden"}


def _build(cls, raw, path: str, errors: list[str], base=None):
    base = base if base is not None else cls()
    if not isinstance(raw, dict):
        errors.append(f"{path or '<root>'}: expected an object, got {type(raw).__name__}")
        return base
    names = {f.name for f in dataclasses.fields(cls)}
    for k in sorted(set(raw) - names):
        errors.append(f"{path + '.' if path else ''}{k}: unknown key")
    kwargs = {}
    for k, v in raw.items():
        if k not in names:
            continue
        sub = _NESTED.get(cls, {}).get(k)
        if sub is not None:
            kwargs[k] = _build(sub, v, f"{path}.{k}" if path else k, errors, getattr(base, k))
        elif k in _TUPLES and isinstance(v, list):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as e:
        errors.append(f"{path or '<root>'}: {e}")
        return base


def _check_types(obj, path: str, errors: list[str]) -> None:
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        p = f"{path}.{f.name}" if path else f.name
        if dataclasses.is_dataclass(v):
            _check_types(v, p, errors)
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, bool) and not isinstance(v, bool):
            errors.append(f"{p}: expected true/false")
        elif isinstance(default, int) and not isinstance(default, bool) and (isinstance(v, bool) or not isinstance(v, int)):
            errors.append(f"{p}: expected an integer")
        elif isinstance(default, float) and (isinstance(v, bool) or not isinstance(v, (int, float))):
            errors.append(f"{p}: expected a number")


def parse_run_config(raw: dict, input_dim: int | None = None) -> RunConfig:
    """Validate ``raw`` and return a resolved :class:`RunConfig`.

    Raises :class:`ConfigurationError` listing every violated constraint.
    """
    errors: list[str] = []
    cfg = _build(RunConfig, raw, "", errors)
    _check_types(cfg, "", errors)
    if "seed" in raw and isinstance(cfg.seed, int):
        cfg = cfg.with_seed(cfg.seed)
    spec = None
    # semantic checks run even after type errors; one that trips over a bad type is skipped
    if input_dim is not None:
        try:
            spec = cfg.encoder.spec(input_dim)
            errors += [f"encoder: {v}" for v in spec.violations()]
        except (TypeError, ValueError):
            spec = None
    try:
        usable = spec if spec is not None and not spec.violations() else None
        errors += [f"train: {v}" for v in cfg.train.violations(usable)]
    except TypeError:
        try:
            errors += [f"train.weights: {v}" for v in cfg.train.weights.violations()]
        except TypeError:
            pass
    try:
        if not 0 < cfg.data.validation_fraction < 1:
            errors.append("data.validation_fraction: must be in (0, 1)")
    except TypeError:
        pass
    if errors:
        raise ConfigurationError("invalid run config:\n  " + "\n  ".join(errors))
    return cfg


def load_run_config(path=None, input_dim: int | None = None) -> RunConfig:
    if path is None:
        return parse_run_config({}, input_dim)
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: not valid JSON ({e})") from None
    return parse_run_config(raw, input_dim)
