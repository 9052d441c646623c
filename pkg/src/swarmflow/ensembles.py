"""Swarm point clouds: generators and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class Ensemble:
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ShapeError(f"ensemble needs an n x d array with n >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("ensemble contains non-finite entries")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


def gaussian(n: int, mean, cov_cholesky=None, seed: int = 0, label: str = "gaussian") -> Ensemble:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.size
    L = np.eye(d) if cov_cholesky is None else np.atleast_2d(np.asarray(cov_cholesky, dtype=float))
    if L.shape != (d, d):
        raise ShapeError(f"covariance factor must be {d} x {d}, got {L.shape}")
    if np.any(np.triu(L, 1) != 0) or np.any(np.diag(L) < 0):
        raise ValueError("cov_cholesky must be lower triangular with a non-negative diagonal")
    rng = np.random.default_rng(seed)
    return Ensemble(mean + rng.standard_normal((n, d)) @ L.T, label)


def _ring(rng, n, radius=1.0, width=0.05):
    if radius <= 0 or width < 0:
        raise ValueError("ring needs radius > 0 and width >= 0")
    theta = rng.uniform(0.0, 2 * np.pi, n)
    rad = radius + width * rng.standard_normal(n)
    return np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])


def _pyramid(rng, n, half_width=1.0, height=1.0):
    """Uniform over the solid square pyramid with base [-a, a]^2 at z = 0."""
    if half_width <= 0 or height <= 0:
        raise ValueError("pyramid needs half_width > 0 and height > 0")
    # slice area at height z is proportional to (1 - z/h)^2
    z = height * (1.0 - rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0))
    scale = half_width * (1.0 - z / height)
    xy = rng.uniform(-1.0, 1.0, (n, 2)) * scale[:, None]
    return np.column_stack([xy, z])


def _torus(rng, n, major=2.0, minor=0.5):
    """Area-uniform torus surface via rejection on the minor angle."""
    if not major > minor > 0:
        raise ValueError("torus needs major radius > minor radius > 0")
    phi = np.empty(0)
    while phi.size < n:
        cand = rng.uniform(0.0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0.0, 1.0, 2 * n) < (major + minor * np.cos(cand)) / (major + minor)
        phi = np.concatenate([phi, cand[keep]])
    phi = phi[:n]
    theta = rng.uniform(0.0, 2 * np.pi, n)
    ring = major + minor * np.cos(phi)
    return np.column_stack([ring * np.cos(theta), ring * np.sin(theta), minor * np.sin(phi)])


def _mixture(rng, n, centers=((0, 0), (1, 0), (0, 1), (1, 1)), std=0.1, weights=None):
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if std < 0:
        raise ValueError("mixture std must be non-negative")
    k = len(centers)
    p = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, float) / np.sum(weights)
    comp = rng.choice(k, size=n, p=p)
    return centers[comp] + std * rng.standard_normal((n, centers.shape[1]))


_SHAPES = {"ring": _ring, "pyramid": _pyramid, "torus": _torus, "mixture": _mixture}


def shape(kind: str, n: int, params: dict | None = None, seed: int = 0) -> Ensemble:
    """Sample ``n`` points from a named shape; ``params`` are keyword arguments.

    ring: radius, width. pyramid: half_width, height. torus: major, minor.
    mixture: centers, std, weights.
    """
    if kind not in _SHAPES:
        raise ValueError(f"unknown shape {kind!r}; choose from {sorted(_SHAPES)}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return Ensemble(_SHAPES[kind](rng, n, **(params or {})), kind)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path) -> Ensemble:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(i, row) for i, row in enumerate(csv.reader(fh), start=1)
                if row and any(cell.strip() for cell in row)]
    if rows and not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0][1])
    points = []
    for line, row in rows:
        if len(row) != width:
            raise ValueError(f"{path}:{line}: expected {width} columns, found {len(row)}")
        try:
            points.append([float(c) for c in row])
        except ValueError:
            raise ValueError(f"{path}:{line}: non-numeric cell in {row!r}") from None
    return Ensemble(np.array(points), path.stem)


def save_csv(ens: Ensemble, path, header: bool = True) -> None:
    """Write points with 17 significant digits so a reload is bit-exact."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j + 1}" for j in range(ens.d)])
        for p in ens.points:
            w.writerow([f"{v:.17g}" for v in p])
