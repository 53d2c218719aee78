"""Weighted point clouds: the empirical stand-in for a measure."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import InputError


@dataclass(frozen=True, eq=False)
class WeightedCloud:
    points: np.ndarray = field(repr=False)  # (n, d)
    weights: np.ndarray = field(repr=False)  # (n,), sums to 1
    resolution: float = 0.0  # size of the cells the points stand for

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise InputError("cloud points must be an (n, d) array")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise InputError("one weight per point required")
        if np.any(w < 0):
            raise InputError("weights must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points, resolution: float = 0.0) -> "WeightedCloud":
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        if n == 0:
            raise InputError("empty cloud")
        return cls(points, np.full(n, 1.0 / n), resolution)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def diameter(self) -> float:
        """Diameter of the bounding box (an upper bound, cheap for large clouds)."""
        if self.n == 0:
            return 0.0
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.sqrt((span**2).sum()))

    def subsample(self, n: int, rng: np.random.Generator) -> "WeightedCloud":
        if n >= self.n:
            return self
        idx = np.sort(rng.choice(self.n, size=n, replace=False))
        w = self.weights[idx]
        return WeightedCloud(self.points[idx], w / w.sum(), self.resolution)


def as_points(x, dim: Optional[int] = None) -> np.ndarray:
    """Accept a cloud, an (n, d) array or a 1-d array of scalars."""
    if isinstance(x, WeightedCloud):
        pts = x.points
    else:
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
    if dim is not None and pts.shape[1] != dim:
        raise InputError(f"expected {dim}-dimensional points, got {pts.shape[1]}")
    return pts
