"""Linear downstream models that consume exported latents.

These run on the inference side: they see only float32 latents, never raw
features. Fitting uses scikit-learn; the fitted weights are stored as a plain
affine map so the inference service needs nothing but numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import LinearRegression, LogisticRegression

from veil import artifact
from veil.errors import ConfigurationError, ProtocolError
from veil.nn import softmax
from veil.numeric import as_matrix


@dataclass
class LinearDownstream:
    kind: str  # "classifier" | "regressor"
    W: np.ndarray  # (E, K) or (E, out_dim)
    b: np.ndarray
    classes: list = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.W.shape[1]

    def scores(self, z) -> np.ndarray:
        z = as_matrix(z)
        if z.shape[1] != self.latent_dim:
            raise ConfigurationError(f"expected {self.latent_dim} latent columns, got {z.shape[1]}")
        return z @ self.W + self.b

    def predict_vector(self, z) -> np.ndarray:
        """Class probabilities (classifier) or regression outputs, one row per latent."""
        s = self.scores(z)
        return softmax(s) if self.kind == "classifier" else s

    def predict(self, z) -> np.ndarray:
        out = self.predict_vector(z)
        if self.kind == "classifier":
            return np.asarray(self.classes)[np.argmax(out, axis=1)]
        return out[:, 0] if out.shape[1] == 1 else out

    def operators(self) -> list[str]:
        return ["affine", "softmax"] if self.kind == "classifier" else ["affine"]

    def save(self, path) -> None:
        header = {"kind": "downstream", "model": self.kind, "classes": [int(c) for c in self.classes], "operators": self.operators()}
        artifact.save(path, header, {"W": self.W, "b": self.b})

    @classmethod
    def load(cls, path) -> "LinearDownstream":
        header, blobs = artifact.load(path)
        if header.get("kind") != "downstream":
            raise ProtocolError(f"expected a downstream artifact, found kind {header.get('kind')!r}")
        return cls(header["model"], blobs["W"], blobs["b"], list(header.get("classes", [])))


def fit_classifier(z, labels, C: float = 1.0, max_iter: int = 1000) -> LinearDownstream:
    z = as_matrix(z)
    lab = np.asarray(labels).reshape(-1)
    clf = LogisticRegression(C=C, max_iter=max_iter)
    clf.fit(z, lab)
    coef, icpt = clf.coef_, clf.intercept_
    if coef.shape[0] == 1:
        # binary case: sklearn keeps one logit; expand to two with the first fixed at 0
        coef = np.vstack([np.zeros_like(coef), coef])
        icpt = np.concatenate([[0.0], icpt])
    return LinearDownstream("classifier", coef.T.copy(), icpt.copy(), [int(c) for c in clf.classes_])


def fit_regressor(z, y) -> LinearDownstream:
    z = as_matrix(z)
    y = np.asarray(y, dtype=np.float64)
    y2 = y.reshape(-1, 1) if y.ndim == 1 else y
    reg = LinearRegression().fit(z, y2)
    return LinearDownstream("regressor", reg.coef_.T.copy(), np.atleast_1d(reg.intercept_).copy())
