"""Projections, distance and direction sets, and dimension estimators.

Hausdorff dimension cannot be read off a finite sample. Everything here is a
box-counting or mass-scaling estimate at desk scale, except
:func:`exact_measure_dimension`, which is the closed-form entropy over
Lyapunov exponent for strongly separated similarity systems.

The estimators follow the scikit-learn protocol (``fit`` learns trailing
underscore attributes, ``transform`` maps points); the module-level functions
are thin wrappers that return :class:`DimensionEstimate` records.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from .cloud import WeightedCloud, as_points
from .exceptions import CapError, InputError
from .gibbs import GibbsModel
from .ifs import IfsSystem, check_strong_separation, sample_measure, similarity_dimension

PAIR_CAP = 2 * 10**7
MIN_BOX_POINTS = 1000
LADDER_LEVELS = 12
FIT_LEVELS = 8
STATE_CAP = 10**6
DIM_CAVEAT = "box-counting estimate at desk scale; stands in for Hausdorff dimension"


@dataclass(frozen=True)
class DimensionEstimate:
    value: float
    scales: list  # (log 1/r, log N(r)) or (log 1/r, mean log mass)
    slope_stderr: float
    method: str  # box_count | local_dim | exact_formula
    fitted: tuple = ()  # indices of the scales used in the regression
    caveat: str = DIM_CAVEAT

    def __str__(self):
        return f"{self.method}: {self.value:.4f} +- {self.slope_stderr:.4f} ({len(self.scales)} scales; {self.caveat})"


def _fit_slope(x: np.ndarray, y: np.ndarray) -> tuple:
    """Least-squares slope and its standard error."""
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - ym)).sum() / sxx
    resid = y - ym - slope * (x - xm)
    stderr = math.sqrt((resid**2).sum() / (n - 2) / sxx) if n > 2 else 0.0
    return float(slope), float(stderr)


def _middle(levels: int, fit: int) -> slice:
    drop = max(levels - fit, 0)
    return slice(drop // 2, drop // 2 + min(fit, levels))


# ---------------------------------------------------------------------------
# projections


@dataclass(frozen=True, eq=False)
class ProjectionSpec:
    """Orthogonal projection R^d -> R^k given by a row-orthonormal k x d frame."""

    frame: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.frame, dtype=float))
        k, d = f.shape
        if not k < d:
            raise InputError("target dimension must be below the ambient one")
        if not np.allclose(f @ f.T, np.eye(k), atol=1e-12, rtol=0):
            raise InputError("projection rows are not orthonormal")
        object.__setattr__(self, "frame", f)

    @classmethod
    def from_angle(cls, theta: float) -> "ProjectionSpec":
        """Planar projection onto the line at angle theta (taken mod pi)."""
        theta = float(theta) % math.pi
        return cls(np.array([[math.cos(theta), math.sin(theta)]]))

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    @property
    def k(self) -> int:
        return self.frame.shape[0]

    @property
    def angle(self) -> float:
        if (self.k, self.d) != (1, 2):
            raise InputError("angle is defined for planar line projections")
        return float(math.atan2(self.frame[0, 1], self.frame[0, 0]) % math.pi)


class OrthogonalProjection(TransformerMixin, BaseEstimator):
    """Transformer applying a fixed orthogonal projection."""

    def __init__(self, theta: Optional[float] = None, frame=None):
        self.theta = theta
        self.frame = frame

    def _spec(self) -> ProjectionSpec:
        if (self.theta is None) == (self.frame is None):
            raise InputError("give exactly one of theta or frame")
        return ProjectionSpec.from_angle(self.theta) if self.frame is None else ProjectionSpec(self.frame)

    def fit(self, X, y=None):
        self.spec_ = self._spec()
        self.n_features_in_ = self.spec_.d
        return self

    def transform(self, X):
        spec = getattr(self, "spec_", None) or self._spec()
        pts = as_points(X)
        if pts.shape[1] != spec.d:
            raise InputError(f"cloud is {pts.shape[1]}-dimensional, projection expects {spec.d}")
        return pts @ spec.frame.T


def project(cloud: WeightedCloud, spec: ProjectionSpec) -> WeightedCloud:
    pts = OrthogonalProjection(frame=spec.frame).fit(cloud.points).transform(cloud.points)
    return WeightedCloud(pts, cloud.weights, cloud.resolution)


# ---------------------------------------------------------------------------
# box counting


def default_ladder(diam: float, resolution: float, levels: int = LADDER_LEVELS,
                   n_points: int = 0, ambient: int = 1) -> tuple:
    r_max = diam / 8
    r_min = max(resolution * 10, diam * 2.0**-14)
    if n_points:
        # n points fill at most n boxes: stop before the ambient-dimension saturation scale
        r_min = min(max(r_min, 2 * diam * n_points ** (-1.0 / ambient)), r_max / 4)
    return r_min, r_max


def box_counts(points: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Occupied grid cells of side r (grid anchored at the cloud's lower corner)."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    if pts.shape[1] == 1:
        s = np.sort(pts[:, 0] - lo[0])
        return np.array([1 + np.count_nonzero(np.diff(np.floor(s / r))) for r in radii])
    out = []
    for r in radii:
        idx = np.floor((pts - lo) / r).astype(np.int64)
        key = np.sort(np.ravel_multi_index(idx.T, idx.max(axis=0) + 1))
        out.append(1 + np.count_nonzero(np.diff(key)))
    return np.array(out)


class BoxCountingDimension(BaseEstimator):
    """Slope of log N(r) against log 1/r over a geometric ladder of box sides."""

    def __init__(self, r_min: Optional[float] = None, r_max: Optional[float] = None,
                 levels: int = LADDER_LEVELS, fit_levels: int = FIT_LEVELS,
                 resolution: float = 0.0, min_points: int = MIN_BOX_POINTS):
        self.r_min = r_min
        self.r_max = r_max
        self.levels = levels
        self.fit_levels = fit_levels
        self.resolution = resolution
        self.min_points = min_points

    def fit(self, X, y=None):
        pts = as_points(X)
        self.n_features_in_ = pts.shape[1]
        if pts.shape[0] < self.min_points:
            raise InputError(f"box counting needs >= {self.min_points} points, got {pts.shape[0]}")
        if self.levels < 5:
            raise InputError("need at least 5 scales")
        span = pts.max(axis=0) - pts.min(axis=0)
        diam = float(np.sqrt((span**2).sum()))
        if diam == 0:
            warnings.warn("degenerate cloud (a single point): dimension 0", RuntimeWarning)
            self.dimension_, self.stderr_, self.scales_, self.fitted_ = 0.0, 0.0, [], ()
            return self
        lo_def, hi_def = default_ladder(diam, self.resolution, self.levels, *pts.shape)
        r_min = lo_def if self.r_min is None else self.r_min
        r_max = hi_def if self.r_max is None else self.r_max
        if not 0 < r_min < r_max:
            raise InputError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
        if r_min < self.resolution * 10:
            warnings.warn(f"r_min {r_min:.3g} is below ten times the sampling resolution "
                          f"{self.resolution:.3g}", RuntimeWarning)
        radii = np.geomspace(r_max, r_min, self.levels)
        counts = box_counts(pts, radii)
        x, yv = -np.log(radii), np.log(counts.astype(float))
        mid = _middle(self.levels, self.fit_levels)
        slope, err = _fit_slope(x[mid], yv[mid])
        self.dimension_ = float(min(max(slope, 0.0), pts.shape[1]))
        self.stderr_ = err
        self.scales_ = list(zip(x.tolist(), yv.tolist()))
        self.fitted_ = tuple(range(self.levels)[mid])
        return self

    def estimate(self) -> DimensionEstimate:
        return DimensionEstimate(self.dimension_, self.scales_, self.stderr_, "box_count", self.fitted_)


def box_dimension(cloud, r_min: Optional[float] = None, r_max: Optional[float] = None,
                  levels: int = LADDER_LEVELS) -> DimensionEstimate:
    res = cloud.resolution if isinstance(cloud, WeightedCloud) else 0.0
    est = BoxCountingDimension(r_min, r_max, levels, resolution=res).fit(as_points(cloud))
    return est.estimate()


# ---------------------------------------------------------------------------
# measure dimensions


def lyapunov_exponent(sys: IfsSystem, g: GibbsModel) -> float:
    return float(-(g.stationary * np.log(sys.ratios)).sum())


def exact_measure_dimension(sys: IfsSystem, g: GibbsModel) -> float:
    """Entropy over Lyapunov exponent, h / lambda.

    Valid for Gibbs measures on strongly separated similarity systems; the
    separation certificate is checked before returning.
    """
    if sys.kind != "similarity":
        raise InputError("exact dimension is only available for similarity systems; "
                         "use local_dimension for an estimate")
    if g.system != sys.symbolic:
        raise InputError("Gibbs model lives on a different subshift")
    rep = check_strong_separation(sys)
    if not rep.passed:
        raise InputError(f"strong separation not certified: {rep}")
    return g.entropy_rate() / lyapunov_exponent(sys, g)


class LocalDimension(BaseEstimator):
    """Mean over sampled centres of log mu(B(x, r)), regressed on log r.

    ``mass_fn(centers, r)`` may supply exact ball masses; otherwise masses
    are read off the (weighted) cloud.
    """

    def __init__(self, n_centers: int = 400, r_ladder=None, levels: int = LADDER_LEVELS,
                 fit_levels: int = FIT_LEVELS, min_count: int = 30, seed: int = 0,
                 mass_fn: Optional[Callable] = None):
        self.n_centers = n_centers
        self.r_ladder = r_ladder
        self.levels = levels
        self.fit_levels = fit_levels
        self.min_count = min_count
        self.seed = seed
        self.mass_fn = mass_fn

    def fit(self, X, y=None, sample_weight=None):
        pts = as_points(X)
        n = pts.shape[0]
        self.n_features_in_ = pts.shape[1]
        w = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight, float)
        w = w / w.sum()
        rng = np.random.default_rng(self.seed)
        centers = pts[rng.choice(n, size=min(self.n_centers, n), replace=False, p=w)]
        span = pts.max(axis=0) - pts.min(axis=0)
        diam = float(np.sqrt((span**2).sum()))
        if diam == 0:
            self.dimension_, self.stderr_, self.scales_, self.fitted_ = 0.0, 0.0, [], ()
            return self
        tree = cKDTree(pts)
        if self.r_ladder is not None:
            radii = np.sort(np.asarray(self.r_ladder, dtype=float))[::-1]
        else:
            radii = self._auto_ladder(tree, centers, diam, n)
        if radii.size < 5:
            raise InputError("need at least 5 radii")
        logm = np.empty(radii.size)
        for k, r in enumerate(radii):
            if self.mass_fn is not None:
                m = np.asarray(self.mass_fn(centers, r), dtype=float)
            elif sample_weight is None:
                m = tree.query_ball_point(centers, r, return_length=True) / n
            else:
                m = np.array([w[idx].sum() for idx in tree.query_ball_point(centers, r)])
            logm[k] = np.log(m).mean()
        x = -np.log(radii)
        mid = _middle(radii.size, self.fit_levels)
        slope, err = _fit_slope(x[mid], -logm[mid])
        self.dimension_ = float(min(max(slope, 0.0), pts.shape[1]))
        self.stderr_ = err
        self.scales_ = list(zip(x.tolist(), logm.tolist()))
        self.fitted_ = tuple(range(radii.size)[mid])
        return self

    def _auto_ladder(self, tree, centers, diam, n) -> np.ndarray:
        r_max = diam / 8
        r_min = diam * 2.0**-14
        # widen until the smallest balls hold min_count points on average
        while r_min < r_max / 4:
            counts = tree.query_ball_point(centers, r_min, return_length=True)
            if counts.mean() >= self.min_count:
                break
            r_min *= 2
        if r_min > diam * 2.0**-14:
            warnings.warn(f"mass resolution limited by {n} points: ladder widened to r_min={r_min:.3g}",
                          RuntimeWarning)
        return np.geomspace(r_max, r_min, self.levels)

    def estimate(self) -> DimensionEstimate:
        return DimensionEstimate(self.dimension_, self.scales_, self.stderr_, "local_dim", self.fitted_,
                                 "mass-scaling estimate at desk scale; stands in for dim_H of the measure")


def local_dimension(cloud: WeightedCloud, mass_fn: Optional[Callable] = None, n_centers: int = 400,
                    r_ladder=None, seed: int = 0) -> DimensionEstimate:
    est = LocalDimension(n_centers, r_ladder, seed=seed, mass_fn=mass_fn)
    uniform = np.allclose(cloud.weights, cloud.weights[0])
    est.fit(cloud.points, sample_weight=None if uniform else cloud.weights)
    return est.estimate()


# ---------------------------------------------------------------------------
# pairs: distances and directions


def _pair_indices(n: int, pair_cap: int, seed: int) -> Optional[tuple]:
    """None for full enumeration, else (i, j) arrays of uniformly drawn pairs i < j."""
    total = n * (n - 1) // 2
    if total <= pair_cap:
        return None
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=pair_cap)
    j = rng.integers(0, n - 1, size=pair_cap)
    j = np.where(j >= i, j + 1, j)
    return np.minimum(i, j), np.maximum(i, j)


def _pair_diffs(pts: np.ndarray, pair_cap: int, seed: int, chunk: int = 2**22):
    """Yield blocks of x_j - x_i over the selected pairs, in a fixed order."""
    n = pts.shape[0]
    sel = _pair_indices(n, pair_cap, seed)
    if sel is not None:
        i, j = sel
        for s in range(0, i.size, chunk):
            yield pts[j[s:s + chunk]] - pts[i[s:s + chunk]]
        return
    rows = max(1, chunk // max(n, 1))
    for s in range(0, n - 1, rows):
        block = []
        for a in range(s, min(s + rows, n - 1)):
            block.append(pts[a + 1:] - pts[a])
        yield np.concatenate(block)


def _norms(diff: np.ndarray) -> np.ndarray:
    return np.sqrt((diff * diff).sum(axis=1))


def distance_set(cloud, pair_cap: int = PAIR_CAP, seed: int = 0) -> np.ndarray:
    """|x - y| over all pairs (i < j), or over ``pair_cap`` uniformly drawn pairs."""
    pts = as_points(cloud)
    if pts.shape[0] < 2:
        raise InputError("distance set needs at least two points")
    return np.concatenate([_norms(d) for d in _pair_diffs(pts, pair_cap, seed)])


def _angles(diff: np.ndarray, folded: bool) -> np.ndarray:
    a = np.arctan2(diff[:, 1], diff[:, 0])
    return np.mod(a, math.pi if folded else 2 * math.pi)


def direction_set(cloud, pair_cap: int = PAIR_CAP, seed: int = 0, folded: bool = True) -> np.ndarray:
    """Directions of x - y as angles: in [0, pi) when folded, else in [0, 2 pi)."""
    pts = as_points(cloud, 2)
    out = []
    for d in _pair_diffs(pts, pair_cap, seed):
        d = d[_norms(d) > 0]
        out.append(_angles(d, folded))
    a = np.concatenate(out) if out else np.empty(0)
    if a.size == 0:
        raise InputError("all points coincide: no directions")
    return a


def largest_gap(angles: np.ndarray, period: float = math.pi) -> float:
    """Largest gap between consecutive angles on the circle R / period Z."""
    a = np.unique(np.mod(np.asarray(angles, dtype=float), period))
    if a.size == 0:
        return period
    gaps = np.diff(np.concatenate([a, [a[0] + period]]))
    return float(gaps.max())


def is_dense(angles: np.ndarray, eps: float, period: float = math.pi) -> bool:
    """Every point of the circle lies within eps of some angle (heuristic density)."""
    return largest_gap(angles, period) < 2 * eps


@dataclass(frozen=True)
class Arc:
    """Closed arc of directions centred at ``center`` (radians) of angular ``width``."""

    center: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise InputError("arcs need positive width")

    def contains(self, a: np.ndarray) -> np.ndarray:
        if self.width >= 2 * math.pi:
            return np.ones(np.shape(a), dtype=bool)
        off = np.mod(np.asarray(a) - self.center + math.pi, 2 * math.pi) - math.pi
        return np.abs(off) <= self.width / 2


def restricted_distance_set(cloud, arcs: Sequence, pair_cap: int = PAIR_CAP, seed: int = 0) -> np.ndarray:
    """Distances of pairs whose direction (either orientation) lies in one of the arcs."""
    arcs = [a if isinstance(a, Arc) else Arc(*a) for a in arcs]
    if not arcs:
        raise InputError("need at least one arc")
    pts = as_points(cloud, 2)
    if pts.shape[0] < 2:
        raise InputError("distance set needs at least two points")
    out = []
    for d in _pair_diffs(pts, pair_cap, seed):
        a = _angles(d, folded=False)
        back = np.mod(a + math.pi, 2 * math.pi)
        keep = np.zeros(a.size, dtype=bool)
        for arc in arcs:
            keep |= arc.contains(a) | arc.contains(back)
        out.append(_norms(d[keep]))
    res = np.concatenate(out)
    if res.size == 0:
        warnings.warn("no pair direction falls in the arcs: empty restricted distance set", RuntimeWarning)
    return res


# ---------------------------------------------------------------------------
# minimality of the rotation parts


@dataclass(frozen=True)
class MinimalityReport:
    passed: bool
    gap: float
    eps: float
    depth: int
    n_angles: int
    angles: np.ndarray = field(repr=False)

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"minimality {verdict}: {self.n_angles} projection directions up to depth "
                f"{self.depth}, largest gap {self.gap:.4f} (eps {self.eps})")


def minimality_density(sys: IfsSystem, depth: int, eps: float) -> MinimalityReport:
    """Directions of pi_0 o O(S_w), mod pi, over admissible |w| <= depth; PASS iff the largest gap < eps.

    O = R_a F^r (F the reflection in the x-axis) sends the projection onto
    the x-axis to the projection onto the line at angle -a (r = 0) or a (r = 1).
    """
    if sys.kind != "similarity" or sys.dim != 2:
        raise InputError("minimality is checked for planar similarity systems")
    if depth < 1:
        raise InputError("depth must be >= 1")
    m = sys.alphabet_size
    rot = np.array([mp.angle for mp in sys.maps])
    ref = np.array([mp.reflects for mp in sys.maps], dtype=np.int64)
    # F^r R_b = R_{(-1)^r b} F^r; store a word as (last symbol, a, r)
    states = {(i, round(rot[i] % (2 * math.pi), 12), int(ref[i])) for i in range(m)}
    seen = {(a, r) for _, a, r in states}
    for _ in range(depth - 1):
        nxt = set()
        for last, a, r in states:
            for j in sys.symbolic.followers(last):
                j = int(j)
                b = a + (-rot[j] if r else rot[j])
                nxt.add((j, round(b % (2 * math.pi), 12), r ^ int(ref[j])))
        states = nxt
        seen |= {(a, r) for _, a, r in states}
        if len(states) > STATE_CAP:
            raise CapError("rotation states", len(states), STATE_CAP)
    angles = np.array(sorted({round((a if r else -a) % math.pi, 12) for a, r in seen}))
    gap = largest_gap(angles)
    return MinimalityReport(bool(gap < eps), gap, eps, depth, angles.size, angles)


# ---------------------------------------------------------------------------
# projection sweeps


@dataclass(frozen=True, eq=False)
class ProjectionSweep:
    thetas: np.ndarray
    estimates: list
    full: DimensionEstimate  # box dimension of the unprojected cloud
    reference: float  # min{1, dimension oracle}

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    @property
    def min_value(self) -> float:
        return float(self.values.min())


def projection_sweep(sys: IfsSystem, g: GibbsModel, angles: int, depth: int, points: int,
                     seed: int = 0) -> ProjectionSweep:
    """Box dimension of the projection onto each of ``angles`` equally spaced lines."""
    if sys.dim != 2:
        raise InputError("projection sweeps need a planar system")
    if angles < 1:
        raise InputError("need at least one angle")
    cloud = sample_measure(sys, g, points, depth, seed)
    thetas = np.arange(angles) * (math.pi / angles)
    ests = [box_dimension(project(cloud, ProjectionSpec.from_angle(t))) for t in thetas]
    full = box_dimension(cloud)
    oracle = sys.oracle_dimension
    if oracle is None and sys.kind == "similarity":
        oracle = similarity_dimension(sys)
    ref = min(1.0, oracle if oracle is not None else full.value)
    return ProjectionSweep(thetas, ests, full, ref)
