"""Datasets, the synthetic regression generators, table I/O, standardisation
and the two evaluation metrics.

Random streams come from numpy's counter-based Philox generator.  Every
stream is keyed by ``(seed, purpose)`` so that, for example, the training
and test draws of one benchmark replication never overlap.
"""

import csv
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, StorageError

TARGETS = ("M1", "M2", "M3")
NOISES = ("gauss", "outlier", "skewed", "nonstationary")

GAUSS_VAR = 0.5
SKEW_MEAN = 0.5
OUTLIER_FRACTION = 0.1
OUTLIER_RANGE = (1.0, 5.0)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise DataError(f"X rows ({X.shape[0]}) do not match y ({y.size})")
        if y.size < 1:
            raise DataError("empty dataset")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite values")
        self.X = X
        self.y = y

    @property
    def n(self):
        return self.y.size

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], dict(self.meta))

    def equals(self, other):
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True)
class GeneratorSpec:
    target: str = "M1"
    noise: str = "gauss"
    d: int = 1
    n: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; choose from {TARGETS}")
        if self.noise not in NOISES:
            raise ConfigError(f"unknown noise {self.noise!r}; choose from {NOISES}")
        if int(self.d) < 1 or int(self.n) < 1:
            raise ConfigError("d and n must be at least 1")

    def to_dict(self):
        return {"target": self.target, "noise": self.noise, "d": int(self.d),
                "n": int(self.n), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d):
        return cls(target=d["target"], noise=d["noise"], d=int(d["d"]),
                   n=int(d["n"]), seed=int(d["seed"]))


def make_rng(seed, purpose=""):
    """Philox generator for the stream ``(seed, purpose)``."""
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key])
    return np.random.Generator(np.random.Philox(ss))


def true_f(target, X):
    """Noise-free regression function evaluated on the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    d = X.shape[1]
    if target == "M1":
        return X.sum(axis=1) / d
    if target == "M2":
        return np.sin(np.pi / d * np.abs(X).sum(axis=1))
    if target == "M3":
        return (X**2).sum(axis=1) / d
    raise ConfigError(f"unknown target {target!r}")


def sample_noise(noise, X, rng):
    """Draw one noise value per row of X.

    All four families have their mode at zero.  The skewed family is an
    unshifted exponential with mean 0.5, so its mean is not zero.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    m = X.shape[0]
    sd = np.sqrt(GAUSS_VAR)
    if noise == "gauss":
        return rng.normal(0.0, sd, size=m)
    if noise == "outlier":
        return outlier_noise(m, rng)[0]
    if noise == "skewed":
        return rng.exponential(SKEW_MEAN, size=m)
    if noise == "nonstationary":
        gamma = rng.exponential(SKEW_MEAN, size=m)
        return np.abs(np.cos(np.pi * X[:, 0])) * gamma
    raise ConfigError(f"unknown noise {noise!r}")


def outlier_noise(m, rng):
    """Gaussian/uniform mixture draws and the mask of uniform components."""
    is_out = rng.random(m) < OUTLIER_FRACTION
    gauss = rng.normal(0.0, np.sqrt(GAUSS_VAR), size=m)
    unif = rng.uniform(*OUTLIER_RANGE, size=m)
    return np.where(is_out, unif, gauss), is_out


def gen_synthetic(spec, purpose="train"):
    """Inputs uniform on ``[-1, 1]^d``, outputs ``f*(x) + noise(x)``."""
    rng = make_rng(spec.seed, purpose)
    X = rng.uniform(-1.0, 1.0, size=(spec.n, spec.d))
    y = true_f(spec.target, X) + sample_noise(spec.noise, X, rng)
    meta = {"source": "synthetic", "purpose": purpose, **spec.to_dict()}
    return Dataset(X, y, meta)


# ---------------------------------------------------------------------------
# tables


def load_table(path, fmt="csv", target_column="y", n_features=None):
    """Read a CSV or LIBSVM file into a :class:`Dataset`.

    CSV files may carry a header; the target is picked by name when a
    header is present, otherwise ``target_column`` must be an integer index
    (negative values count from the end).  LIBSVM indices are 1-based and
    expanded densely to ``n_features`` columns (default: largest index seen).
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if fmt == "csv":
        X, y = _parse_csv(lines, target_column, path)
    elif fmt == "libsvm":
        X, y = _parse_libsvm(lines, n_features, path)
    else:
        raise ConfigError(f"unknown table format {fmt!r}")
    return Dataset(X, y, {"source": "file", "path": str(path), "format": fmt})


def _parse_csv(lines, target_column, path):
    rows = [r for r in csv.reader(lines) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no rows")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if header is not None:
        if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
            if target_column not in header:
                raise DataError(f"{path}: target column {target_column!r} not in header")
            tcol = header.index(target_column)
        else:
            tcol = int(target_column) % len(header)
    else:
        if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
            raise DataError(f"{path}: no header, target column must be an index")
        tcol = int(target_column)
    width = len(header) if header is not None else len(rows[0])
    tcol %= width
    data = np.empty((len(rows), width))
    offset = 2 if header is not None else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}:{i + offset}: expected {width} fields, got {len(row)}")
        try:
            data[i] = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}:{i + offset}: non-numeric cell ({exc})") from exc
    y = data[:, tcol]
    X = np.delete(data, tcol, axis=1)
    return X, y


def _parse_libsvm(lines, n_features, path):
    ys, entries = [], []
    max_idx = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            ys.append(float(parts[0]))
            row = {}
            for tok in parts[1:]:
                k, v = tok.split(":", 1)
                k = int(k)
                if k < 1:
                    raise ValueError("feature indices are 1-based")
                row[k] = float(v)
                max_idx = max(max_idx, k)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        entries.append(row)
    if not ys:
        raise DataError(f"{path}: no rows")
    d = max_idx if n_features is None else int(n_features)
    if max_idx > d:
        raise DataError(f"{path}: feature index {max_idx} exceeds n_features={d}")
    X = np.zeros((len(ys), max(d, 1)))
    for i, row in enumerate(entries):
        for k, v in row.items():
            X[i, k - 1] = v
    return X, np.array(ys)


def write_csv(dataset, path):
    """Write ``x1..xd,y`` with a header, shortest round-trip float repr."""
    header = [f"x{j + 1}" for j in range(dataset.d)] + ["y"]
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for xi, yi in zip(dataset.X, dataset.y):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def train_test_split(dataset, train_fraction, seed):
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("split fraction must lie in (0, 1)")
    rng = make_rng(seed, "split")
    perm = rng.permutation(dataset.n)
    n_tr = int(round(train_fraction * dataset.n))
    n_tr = min(max(n_tr, 1), dataset.n - 1)
    return dataset.subset(np.sort(perm[:n_tr])), dataset.subset(np.sort(perm[n_tr:]))


# ---------------------------------------------------------------------------
# standardisation


@dataclass
class Standardizer:
    """Column means and population (1/n) standard deviations."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, dataset):
        x_std = dataset.X.std(axis=0)
        y_std = float(dataset.y.std())
        if np.any(x_std <= 0) or y_std <= 0:
            bad = [j for j, s in enumerate(x_std) if s <= 0]
            raise DataError(f"zero-variance column(s): x{bad}" if bad else "zero-variance target")
        return cls(dataset.X.mean(axis=0), x_std, float(dataset.y.mean()), y_std)

    def apply_X(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def apply_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def apply(self, dataset):
        meta = dict(dataset.meta, standardized=True)
        return Dataset(self.apply_X(dataset.X), self.apply_y(dataset.y), meta)

    def invert_prediction(self, y_std_units):
        return np.asarray(y_std_units, dtype=float) * self.y_std + self.y_mean


def fit_standardizer(dataset):
    return Standardizer.fit(dataset)


# ---------------------------------------------------------------------------
# metrics


def mae_to_truth(predictions, target, X_te):
    """Mean absolute deviation from the noise-free regression function.

    ``target`` is either a target name or a :class:`GeneratorSpec`.
    """
    if isinstance(target, GeneratorSpec):
        target = target.target
    pred = np.asarray(predictions, dtype=float).ravel()
    truth = true_f(target, X_te)
    if pred.shape != truth.shape:
        raise DataError(f"shape mismatch: {pred.shape} predictions vs {truth.shape} inputs")
    return float(np.mean(np.abs(pred - truth)))


def default_sigma(n_te):
    return float(n_te) ** (-0.2)


def surrogate_score(predictions, y_te, sigma=None):
    """Average Gaussian density of the test residuals; larger is better.

    ``sigma`` defaults to ``n_te ** (-1/5)``.
    """
    pred = np.asarray(predictions, dtype=float).ravel()
    y_te = np.asarray(y_te, dtype=float).ravel()
    if pred.shape != y_te.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {y_te.shape}")
    if sigma is None:
        sigma = default_sigma(y_te.size)
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    resid = y_te - pred
    return float(np.mean(np.exp(-(resid**2) / (2.0 * sigma**2))) / np.sqrt(2.0 * np.pi * sigma**2))
