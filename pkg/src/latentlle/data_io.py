"""Synthetic manifolds and CSV persistence.

Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly.  Files are UTF-8, comma separated, LF terminated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import PinnedRNG
from .exceptions import InvalidInputError, ParseError
from .neighborhood import DataMatrix

KINDS = ("swiss_roll", "s_curve", "affine_patch", "gaussian_blobs", "csv")
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "swiss_roll"
    n: int = 500
    noise: float = 0.0
    seed: int = 0
    path: Optional[str] = None
    d: int = 5               # ambient dimension (affine_patch, gaussian_blobs)
    m: int = 2               # intrinsic dimension (affine_patch)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"dataset kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.n) < 1:
            raise InvalidInputError("n must be >= 1")
        if not self.noise >= 0:
            raise InvalidInputError("noise must be >= 0")
        if self.kind == "affine_patch" and not 1 <= self.m <= self.d:
            raise InvalidInputError("affine_patch needs 1 <= m <= d")


def _swiss_roll(rng, n):
    t = rng.uniform(n, 1.5 * np.pi, 4.5 * np.pi)
    h = rng.uniform(n, 0.0, 21.0)
    X = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    return X, np.column_stack([t, h])


def _s_curve(rng, n):
    t = rng.uniform(n, -1.5 * np.pi, 1.5 * np.pi)
    h = rng.uniform(n, 0.0, 2.0)
    X = np.column_stack([np.sin(t), h, np.sign(t) * (np.cos(t) - 1.0)])
    return X, np.column_stack([t, h])


def _affine_patch(rng, n, d, m):
    basis = rng.normal((d, m))
    offset = rng.normal(d)
    coef = rng.uniform((n, m), -1.0, 1.0)
    return coef @ basis.T + offset, coef


def _blobs(rng, n, d, centers=3):
    means = rng.uniform((centers, d), -5.0, 5.0)
    labels = np.arange(n) % centers
    return means[labels] + rng.normal((n, d)), labels[:, None].astype(float)


def generate(spec: DatasetSpec):
    """Return ``(DataMatrix, intrinsic_coords)``; deterministic in ``spec.seed``.

    Gaussian noise with standard deviation ``spec.noise`` is added after the
    clean points are drawn, from the same stream.
    """
    if spec.kind == "csv":
        raise InvalidInputError("csv datasets are read with load_csv(path)")
    rng = PinnedRNG(spec.seed)
    n = int(spec.n)
    if spec.kind == "swiss_roll":
        X, Z = _swiss_roll(rng, n)
    elif spec.kind == "s_curve":
        X, Z = _s_curve(rng, n)
    elif spec.kind == "affine_patch":
        X, Z = _affine_patch(rng, n, spec.d, spec.m)
    else:
        X, Z = _blobs(rng, n, spec.d)
    if spec.noise > 0:
        X = X + spec.noise * rng.normal(X.shape)
    return DataMatrix(X), Z


def load_csv(path, has_header: bool = False) -> DataMatrix:
    """Read a rectangular numeric CSV; errors name the offending line/column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path) from exc
    rows, width = [], None
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if has_header and lineno == 1:
            continue
        if not row or all(not c.strip() for c in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", path, lineno)
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell.strip()!r}", path, lineno, col) from None
            if not np.isfinite(v):
                raise ParseError("NaN/Inf is not allowed", path, lineno, col)
            values.append(v)
        rows.append(values)
    if not rows:
        raise ParseError("file contains no data rows", path)
    return DataMatrix(np.array(rows))


def _write_rows(path, header, rows):
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if header:
                w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _fmt(v):
    return FLOAT_FMT % v


def save_csv(path, X, header=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _write_rows(path, header, ([_fmt(v) for v in row] for row in X))


def save_embedding(path, Y):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    save_csv(path, Y, [f"y{j}" for j in range(Y.shape[1])])


def save_weights(path, neighbor_indices, weights):
    idx = np.asarray(neighbor_indices)
    weights = np.asarray(weights, dtype=float)
    rows = ([str(i), str(int(j)), _fmt(w)]
            for i in range(idx.shape[0]) for j, w in zip(idx[i], weights[i]))
    _write_rows(path, ["point", "neighbor", "weight"], rows)


def load_weights(path):
    """Inverse of :func:`save_weights`: ``(neighbor_indices, weights)`` arrays."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros((0, 0), dtype=int), np.zeros((0, 0))
    n = max(int(r["point"]) for r in rows) + 1
    k = len(rows) // n
    idx = np.array([int(r["neighbor"]) for r in rows]).reshape(n, k)
    w = np.array([float(r["weight"]) for r in rows]).reshape(n, k)
    return idx, w


def save_trace(path, trace):
    rows = ([str(it), _fmt(obj), _fmt(ch)] for it, obj, ch in trace.iterations)
    _write_rows(path, ["iter", "objective", "max_change"], rows)


def save_results(path, embedding, weights, trace, neighbor_indices=None):
    """Write ``embedding.csv``, ``weights.csv`` and ``trace.csv`` under ``path``.

    ``weights`` is either an ``(n, k)`` array paired with ``neighbor_indices``
    or a dense ``n x n`` matrix, whose nonzero pattern is written.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    save_embedding(out / "embedding.csv", embedding.Y)
    weights = np.asarray(weights, dtype=float)
    if neighbor_indices is None:
        nz = [np.flatnonzero(row) for row in weights]
        k = max((len(r) for r in nz), default=0)
        neighbor_indices = np.array([np.pad(r, (0, k - len(r))) for r in nz], dtype=int)
        weights = np.take_along_axis(weights, neighbor_indices, axis=1)
    save_weights(out / "weights.csv", neighbor_indices, weights)
    save_trace(out / "trace.csv", trace)
