"""JSON serialisation of fitted models.

Floats are written with ``repr`` precision by :mod:`json`, so every
finite double survives a save/load cycle bit for bit.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .baselines import KdeModel, RidgeModel
from .data import Dataset, Standardizer
from .dmrk import DmrkModel
from .errors import ConfigError, DataError, NumericalError, StorageError
from .lsld import LsldModel
from .nn import Mlp, ScoreNet

__all__ = [
    "FORMAT_VERSION",
    "StandardizedModel",
    "NeuralModel",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "write_json",
]

FORMAT_VERSION = 1


def _std_to_dict(s):
    return {"x_mean": s.x_mean.tolist(), "x_std": s.x_std.tolist(),
            "y_mean": s.y_mean, "y_std": s.y_std}


def _std_from_dict(d):
    return Standardizer(np.array(d["x_mean"], dtype=float), np.array(d["x_std"], dtype=float),
                        float(d["y_mean"]), float(d["y_std"]))


@dataclass
class StandardizedModel:
    """A model fitted in standardised units, predicting in raw units."""

    inner: object
    standardizer: Standardizer

    @property
    def d(self):
        return self.standardizer.x_mean.size

    def predict_standardized(self, X):
        return self.inner.predict(self.standardizer.apply_X(_as_rows(X, self.d)))

    def predict(self, X):
        return self.standardizer.invert_prediction(self.predict_standardized(X))

    def to_dict(self):
        return {"kind": "standardized", "standardizer": _std_to_dict(self.standardizer),
                "inner": model_to_dict(self.inner)}


@dataclass
class NeuralModel:
    """Regressor network, with the score network it was trained against."""

    f_net: Mlp
    score: ScoreNet = None
    method: str = "dmrnn"

    def predict(self, X):
        X = _as_rows(X, self.f_net.sizes[0])
        return self.f_net.predict(X)

    def to_dict(self):
        return {"kind": "neural", "method": self.method, "f_net": self.f_net.to_dict(),
                "score": None if self.score is None else self.score.to_dict()}


def _as_rows(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.shape[1] != d:
        raise DataError(f"dimension mismatch: model expects d={d}, got {X.shape[1]}")
    return X


def model_to_dict(model):
    if not hasattr(model, "to_dict"):
        raise ConfigError(f"cannot serialise {type(model).__name__}")
    return model.to_dict()


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "lsld":
        return LsldModel.from_dict(d)
    if kind in ("dmrk", "mrkde"):
        return DmrkModel.from_dict(d)
    if kind in ("krr", "lad"):
        return RidgeModel.from_dict(d)
    if kind == "kde":
        y = np.array(d["train_y"], dtype=float)
        X = np.array(d["train_X"], dtype=float).reshape(y.size, -1)
        return KdeModel(float(d["h_y"]), float(d["h_x"]), Dataset(X, y))
    if kind == "mlp":
        return Mlp.from_dict(d)
    if kind == "scorenet":
        return ScoreNet.from_dict(d)
    if kind == "standardized":
        return StandardizedModel(model_from_dict(d["inner"]), _std_from_dict(d["standardizer"]))
    if kind == "neural":
        score = None if d.get("score") is None else ScoreNet.from_dict(d["score"])
        return NeuralModel(Mlp.from_dict(d["f_net"]), score, d.get("method", "dmrnn"))
    raise DataError(f"unknown model kind {kind!r}")


def write_json(obj, path):
    """Write ``obj`` as JSON with sorted keys and a trailing newline."""
    try:
        text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"
    except ValueError as exc:
        raise NumericalError(f"refusing to write non-finite values to {path}") from exc
    try:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def save_model(model, path, extra=None):
    doc = {"format_version": FORMAT_VERSION, "model": model_to_dict(model)}
    if extra:
        doc["info"] = extra
    write_json(doc, path)


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a model file ({exc})") from exc
    if not isinstance(doc, dict) or "model" not in doc:
        raise DataError(f"{path}: missing 'model' entry")
    return model_from_dict(doc["model"])
