"""Regression datasets: CSV ingestion, normalisation, splitting and the
per-dimension summary statistics the hyperprior is built from."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"inputs {X.shape} and targets {y.shape} do not align")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def dim(self):
        return self.inputs.shape[1]

    @property
    def count(self):
        return self.inputs.shape[0]

    def __len__(self):
        return self.count

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return Dataset(self.inputs[index], self.targets[index])


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map from raw to normalised units.

    ``normalised = (raw - offset) / scale`` for inputs (per dimension) and
    targets alike.
    """

    input_offset: np.ndarray
    input_scale: np.ndarray
    target_offset: float
    target_scale: float

    def transform(self, d):
        X = (d.inputs - self.input_offset) / self.input_scale
        y = (d.targets - self.target_offset) / self.target_scale
        return Dataset(X, y)

    def transform_inputs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.input_offset) / self.input_scale

    def inverse(self, d):
        X = d.inputs * self.input_scale + self.input_offset
        y = d.targets * self.target_scale + self.target_offset
        return Dataset(X, y)

    def to_dict(self):
        return {
            "input_offset": [float(v) for v in self.input_offset],
            "input_scale": [float(v) for v in self.input_scale],
            "target_offset": float(self.target_offset),
            "target_scale": float(self.target_scale),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            np.asarray(obj["input_offset"], dtype=float),
            np.asarray(obj["input_scale"], dtype=float),
            float(obj["target_offset"]),
            float(obj["target_scale"]),
        )


@dataclass(frozen=True)
class DataSummary:
    nyquist_frequency: np.ndarray  # cycles per normalised input unit, per dimension
    window_size: np.ndarray
    count: int

    def to_dict(self):
        return {
            "nyquist_frequency": [float(v) for v in self.nyquist_frequency],
            "window_size": [float(v) for v in self.window_size],
            "count": int(self.count),
        }


def _parse_cell(text, row, col):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric cell {text!r} at row {row}, column {col}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite cell {text!r} at row {row}, column {col}")
    return value


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, target_column=-1, header=None):
    """Read a numeric CSV into a raw :class:`Dataset`.

    ``target_column`` is a header name or a (possibly negative) column index;
    the remaining columns become inputs in their original order. ``header``
    forces header handling; by default the first row is treated as a header
    when any of its cells is non-numeric. Row and column numbers in error
    messages are 1-based file positions.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} is empty")
    if header is None:
        header = not all(_is_number(c) for c in rows[0])
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    start = 2 if header else 1
    if not body:
        raise DataError(f"{path} has no data rows")

    width = len(body[0])
    if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
        if names is None or target_column not in names:
            raise DataError(f"target column {target_column!r} not found in header")
        target = names.index(target_column)
    else:
        target = int(target_column)
        if not -width <= target < width:
            raise DataError(f"target column index {target} out of range for {width} columns")
        target %= width

    values = np.empty((len(body), width))
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"row {i + start} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            values[i, j] = _parse_cell(cell.strip(), i + start, j + 1)
    keep = [j for j in range(width) if j != target]
    if not keep:
        raise DataError("dataset has no input columns")
    return Dataset(values[:, keep], values[:, target])


def fit_normalization(d):
    if d.count < 2:
        raise DataError("normalisation needs at least 2 rows")
    lo = d.inputs.min(axis=0)
    span = d.inputs.max(axis=0) - lo
    if np.any(span <= 0):
        bad = np.flatnonzero(span <= 0).tolist()
        raise DataError(f"constant input dimension(s) {bad}")
    mu = float(np.mean(d.targets))
    sd = float(np.std(d.targets))
    if not sd > 0:
        raise DataError("targets are constant (standard deviation 0)")
    return NormalizationRecord(lo, span, mu, sd)


def normalize(raw):
    """Min-max rescale inputs to [0, 1] and standardise targets.

    Returns the normalised dataset and the record needed to undo it.
    """
    rec = fit_normalization(raw)
    return rec.transform(raw), rec


def denormalize(d, rec):
    return rec.inverse(d)


def summarize(d):
    """Nyquist frequency and window size per input dimension.

    The Nyquist frequency is that of an evenly sampled dataset whose spacing
    equals the mean gap between sorted unique coordinates: 0.5 / mean_gap.
    """
    fs = np.empty(d.dim)
    window = np.empty(d.dim)
    for k in range(d.dim):
        u = np.unique(d.inputs[:, k])
        if u.size < 2:
            raise DataError(f"dimension {k} has fewer than 2 distinct values")
        window[k] = u[-1] - u[0]
        fs[k] = 0.5 / (window[k] / (u.size - 1))
    return DataSummary(fs, window, d.count)


def split_indices(n, test_fraction, seed):
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    if n < 2:
        raise DataError("need at least 2 rows to split")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split(d, test_fraction, seed):
    """Random train/test partition, deterministic in ``seed``."""
    train, test = split_indices(d.count, test_fraction, seed)
    return d.subset(train), d.subset(test)
