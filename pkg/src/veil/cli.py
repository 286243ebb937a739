"""Command line entry point: ``veil train|encode|diagnose|attack|serve``.

Exit codes: 0 success (or no_leak), 1 usage/config error, 2 leak or failed
structural check, 3 inconclusive attack.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

import numpy as np

from veil import artifact, attacks, diagnostics, latent_io
from veil.config import RunConfig, load_run_config, parse_run_config
from veil.data import Dataset, ingest_csv
from veil.downstream import LinearDownstream, fit_classifier, fit_regressor
from veil.errors import ConfigurationError, ProtocolError, TrainingError
from veil.numeric import make_rng
from veil.scrae import encode_batch, train

log = logging.getLogger("veil")


def _setup_logging() -> None:
    level = os.environ.get("VEIL_LOG", "info").lower()
    if level not in ("error", "info", "debug"):
        level = "info"
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s")


def _config(args, input_dim=None) -> RunConfig:
    cfg = load_run_config(args.config, input_dim)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dataset(args, cfg: RunConfig) -> Dataset:
    if args.data is None:
        raise ConfigurationError("--data is required")
    keep = tuple(cfg.data.keep)
    col = getattr(args, "attribute", None) or cfg.attack.attribute_column
    if col and col not in keep:
        keep = keep + (col,)
    return ingest_csv(args.data, cfg.data.target, cfg.data.exclude, keep)


def _split(n: int, frac: float, seed: int):
    perm = make_rng(seed).permutation(n)
    n_val = max(1, int(round(frac * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _data_settings(args) -> RunConfig:
    """Config good enough to read the CSV, even when other sections are invalid.

    Width constraints need the input dimension, so a broken config is re-checked
    against the data and every violation is reported together.
    """
    try:
        return _config(args)
    except ConfigurationError as first:
        try:
            raw = json.loads(Path(args.config).read_text())
            return parse_run_config({"data": raw.get("data", {})})
        except (ConfigurationError, ValueError, AttributeError, OSError):
            raise first from None


def cmd_train(args) -> int:
    ds = _dataset(args, _data_settings(args))
    cfg = _config(args, ds.x.shape[1])
    if ds.y is None:
        raise ConfigurationError("training needs a target column (data.target)")
    spec = cfg.encoder.spec(ds.x.shape[1])
    y = ds.y.astype(np.int64) if spec.head == "classifier" else ds.y
    tr, va = _split(ds.n_rows, cfg.data.validation_fraction, cfg.seed)
    model, history = train(ds.x[tr], y[tr], spec, cfg.train, ds.x[va], y[va])
    model.train_meta["run_config"] = cfg.to_dict()
    out = Path(args.out)
    artifact.save_encoder(out, model)
    _sidecar(out, ".history.csv").write_text(diagnostics.history_to_csv(history))
    z_tr = encode_batch(model, ds.x[tr])
    ds_model = fit_classifier(z_tr, y[tr]) if spec.head == "classifier" else fit_regressor(z_tr, y[tr])
    ds_model.save(_sidecar(out, ".downstream.bin"))
    log.info("wrote %s, %s and %s", out, _sidecar(out, ".history.csv").name, _sidecar(out, ".downstream.bin").name)
    return 0


def cmd_encode(args) -> int:
    cfg = _config(args)
    model = artifact.load_encoder(args.model)
    ds = _dataset(args, cfg)
    z = encode_batch(model, ds.x)
    size = latent_io.write(args.out, latent_io.LatentBatch(z, ds.y))
    log.info("wrote %d latent rows (%d bytes) to %s", z.shape[0], size, args.out)
    return 0


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    model = artifact.load_encoder(args.model)
    if model.spec.head != "regressor":
        raise ConfigurationError("diagnostics are defined for regression encoders")
    ds = _dataset(args, cfg)
    tr, va = _split(ds.n_rows, cfg.data.validation_fraction, cfg.seed)
    d = cfg.diagnostics
    rep = diagnostics.diagnose(model, ds.x[tr], ds.y[tr], ds.x[va], ds.y[va], model.train_meta.get("history"),
                               d.k, d.folds, d.n_bins, d.max_pairs, cfg.seed, cfg.to_dict())
    out = Path(args.out)
    out.write_text(rep.to_json() + "\n")
    out.with_suffix(".csv").write_text(rep.history_csv())
    log.info("spearman rho %.4f, knn R2 %.4f, downstream R2 %.4f", rep.spearman_rho, rep.knn_r2_mean, rep.downstream_r2)
    return 0


def _latents(args, ds: Dataset):
    if getattr(args, "identity", False):
        return ds.x.astype(np.float32)
    if getattr(args, "latents", None):
        return latent_io.read(args.latents).latents
    if args.model is None:
        raise ConfigurationError("--model, --latents or --identity is required")
    return encode_batch(artifact.load_encoder(args.model), ds.x)


def cmd_attack(args) -> int:
    cfg = _config(args)
    ds = _dataset(args, cfg)
    a = cfg.attack
    if args.kind == "structural":
        if args.model is None:
            raise ConfigurationError("--model is required for the structural check")
        rep = attacks.structural_check(args.model, ds.x)
        out = rep.to_dict()
        out["config"] = cfg.to_dict()
        _write_json(args.out, out)
        log.info("structural check %s", "passed" if rep.passed else "FAILED")
        return 0 if rep.passed else 2
    z = _latents(args, ds)
    if args.kind == "reconstruct":
        rep = attacks.reconstruction_attack(z, ds.x, ds.kinds, a.reconstruction)
    elif args.kind == "attribute":
        col = args.attribute or a.attribute_column
        if not col:
            raise ConfigurationError("attribute attack needs --attribute or attack.attribute_column")
        rep = attacks.attribute_inference(z, ds.extra[col], a.attribute)
    else:
        if ds.y is None:
            raise ConfigurationError("membership inference needs a target column")
        rep = attacks.membership_inference(z, ds.y, a.membership)
    out = rep.to_dict()
    out["run_config"] = cfg.to_dict()
    _write_json(args.out, out)
    log.info("%s attack: advantage %.4f, p %.4f -> %s", rep.attack, rep.advantage, rep.p_value, rep.verdict)
    return rep.exit_code


def _wait_forever() -> None:
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        stop.wait()
    except KeyboardInterrupt:
        pass


def cmd_serve(args) -> int:
    from veil.service.audit import AuditLog
    from veil.service.inference import InferenceServer
    from veil.service.source import LocalSourceServer, SourceService

    cfg = _config(args)
    s = cfg.service
    if args.model is None:
        raise ConfigurationError("--model is required")
    if args.role == "inference":
        srv = InferenceServer(LinearDownstream.load(args.model), s.inference_host, s.inference_port).start()
        log.info("inference listening on %s:%d", *srv.address)
        _wait_forever()
        srv.stop()
        return 0
    source = SourceService(artifact.load_encoder(args.model), (s.inference_host, s.inference_port),
                           AuditLog(s.audit_path), timeout=s.timeout).connect()
    local = LocalSourceServer(source, s.host, s.port)
    t = threading.Thread(target=local.serve_forever, daemon=True)
    t.start()
    log.info("source listening on %s:%d (JSON lines), forwarding to %s:%d", *local.server_address[:2], s.inference_host, s.inference_port)
    _wait_forever()
    local.shutdown()
    local.server_close()
    source.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="veil", description="Train encoders, export latents and attack them.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (strict: unknown keys are errors)")
    common.add_argument("--data", help="CSV with a header row")
    common.add_argument("--model", help="model artifact")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common], help="train an encoder; writes artifact, history CSV, downstream model")
    s.set_defaults(func=cmd_train)
    s = sub.add_parser("encode", parents=[common], help="write a latent batch file")
    s.set_defaults(func=cmd_encode)
    s = sub.add_parser("diagnose", parents=[common], help="latent-space diagnostics (regression)")
    s.set_defaults(func=cmd_diagnose)
    s = sub.add_parser("attack", parents=[common], help="run a privacy attack")
    s.add_argument("kind", choices=["reconstruct", "attribute", "membership", "structural"])
    s.add_argument("--latents", help="attack a latent batch file instead of encoding --data")
    s.add_argument("--identity", action="store_true", help="use raw features as latents (positive control)")
    s.add_argument("--attribute", help="CSV column holding the sensitive attribute")
    s.set_defaults(func=cmd_attack)
    s = sub.add_parser("serve", parents=[common], help="run the inference or source service")
    s.add_argument("role", choices=["inference", "source"])
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    needs_out = args.command in ("train", "encode", "diagnose", "attack")
    if needs_out and not args.out:
        print(f"veil {args.command}: --out is required", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigurationError, ProtocolError, TrainingError, FileNotFoundError) as e:
        print(f"veil {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
