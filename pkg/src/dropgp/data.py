"""CSV datasets and bundled synthetic generators.

Files are headered CSV. Regression targets are the columns whose names start
with ``y_``; a column named ``label`` holds 1-based classes. Every other column
is an input.
"""
import csv
import math

import numpy as np

from dropgp.network import Dataset
from dropgp.numerics import RngState


class DataError(ValueError):
    pass


def read_csv(path, require_targets=True):
    """Load a dataset; returns (Dataset or None, X, input column names).

    ``require_targets=False`` allows input-only files (for prediction).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
        lcol = header.index("label") if "label" in header else None
        if ycols and lcol is not None:
            raise DataError(f"{path}: both y_ columns and a label column present")
        xcols = [i for i in range(len(header)) if i not in ycols and i != lcol]
        if not xcols:
            raise DataError(f"{path}: no input columns")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DataError(f"{path}: line {line_no}: non-numeric field") from None
            if not all(math.isfinite(v) for v in rows[-1]):
                raise DataError(f"{path}: line {line_no}: non-finite value")
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    X = arr[:, xcols]
    names = [header[i] for i in xcols]
    if ycols:
        return Dataset(X, Y=arr[:, ycols]), X, names
    if lcol is not None:
        lab = arr[:, lcol]
        if np.any(lab != np.round(lab)) or lab.min() < 1:
            raise DataError(f"{path}: labels must be positive integers")
        return Dataset(X, labels=lab.astype(np.int64)), X, names
    if require_targets:
        raise DataError(f"{path}: no target columns (y_* or label)")
    return None, X, names


def write_csv(path, X, Y=None, labels=None):
    X = np.atleast_2d(X)
    header = [f"x_{j}" for j in range(X.shape[1])]
    if Y is not None:
        Y = np.asarray(Y).reshape(X.shape[0], -1)
        header += [f"y_{j}" for j in range(Y.shape[1])]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(X.shape[0]):
            row = [repr(float(v)) for v in X[n]]
            if Y is not None:
                row += [repr(float(v)) for v in Y[n]]
            if labels is not None:
                row.append(int(labels[n]))
            w.writerow(row)


# ---------------------------------------------------------------- generators

SINE_TRAIN = ((-4.0, -1.0), (1.0, 4.0))
SINE_GAP = (-1.0, 1.0)
SINE_OUTER = ((-8.0, -4.0), (4.0, 8.0))


def sine_with_gap(n=120, noise=0.1, seed=0):
    """y = sin(x) + noise on [-4, -1] U [1, 4]; (-1, 1) is left empty."""
    rng = RngState(seed, 1)
    u = rng.uniform(n)
    half = n // 2
    lo = np.where(np.arange(n) < half, SINE_TRAIN[0][0], SINE_TRAIN[1][0])
    x = lo + 3.0 * u
    y = np.sin(x) + noise * rng.normal(n)
    order = np.argsort(x, kind="stable")
    return x[order, None], y[order, None]


def sine_regions(x):
    """'train', 'gap' or 'outer' for each scalar input."""
    x = np.asarray(x).ravel()
    out = np.full(x.shape, "outer", dtype=object)
    out[(np.abs(x) >= 1.0) & (np.abs(x) <= 4.0)] = "train"
    out[np.abs(x) < 1.0] = "gap"
    return out


def two_moons(n=200, noise=0.1, seed=0):
    rng = RngState(seed, 2)
    half = n // 2
    t = math.pi * rng.uniform(n)
    cls = (np.arange(n) >= half).astype(int)
    x0 = np.where(cls == 0, np.cos(t), 1.0 - np.cos(t))
    x1 = np.where(cls == 0, np.sin(t), 0.5 - np.sin(t))
    X = np.column_stack([x0, x1]) + noise * rng.normal(2 * n).reshape(n, 2)
    return X, cls + 1


def two_blobs(n=200, separation=4.0, seed=0):
    """Two linearly separable Gaussian clusters; labels 1 and 2."""
    rng = RngState(seed, 3)
    cls = (np.arange(n) >= n // 2).astype(int)
    centre = np.where(cls[:, None] == 0, -separation / 2, separation / 2) * np.array([1.0, 1.0])
    X = centre + 0.5 * rng.normal(2 * n).reshape(n, 2)
    return X, cls + 1


GENERATORS = ("sine", "moons", "blobs")
