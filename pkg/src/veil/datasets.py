"""Fixture data: a synthetic nonlinear regression table and an MNIST IDX reader."""
from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from veil.numeric import make_rng

MNIST_ENV = "VEIL_MNIST_DIR"


def synthetic_regression(n: int = 5000, d: int = 100, noise: float = 0.1, seed: int = 0):
    """Isotropic Gaussian inputs with a smooth nonlinear target along one hidden direction.

    Returns ``(x, y, direction)``.
    """
    rng = make_rng(seed)
    x = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    t = x @ w
    y = np.sin(2.0 * t) + 0.5 * t + noise * rng.standard_normal(n)
    return x, y, w


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        magic = struct.unpack(">I", fh.read(4))[0]
        ndim = magic & 0xFF
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(dims)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem + ".gz", stem):
        p = directory / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def mnist_dir() -> Path:
    env = os.environ.get(MNIST_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data" / "mnist"


def load_mnist(directory=None, split: str = "train"):
    """Pixels scaled to [0, 1] as float64 rows of 784, and integer labels."""
    d = Path(directory) if directory is not None else mnist_dir()
    prefix = "train" if split == "train" else "t10k"
    images = _read_idx(_find(d, f"{prefix}-images-idx3-ubyte"))
    labels = _read_idx(_find(d, f"{prefix}-labels-idx1-ubyte"))
    return images.reshape(images.shape[0], -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def mnist_subset(n_train: int = 10_000, n_test: int = 2_000, seed: int = 0, directory=None):
    """Seeded subset: ``n_train`` rows from the training file, ``n_test`` from the test file."""
    rng = make_rng(seed)
    xtr, ytr = load_mnist(directory, "train")
    xte, yte = load_mnist(directory, "test")
    i = np.sort(rng.choice(xtr.shape[0], n_train, replace=False))
    j = np.sort(rng.choice(xte.shape[0], n_test, replace=False))
    return xtr[i], ytr[i], xte[j], yte[j]
