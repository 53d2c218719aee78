"""Contracting map families driven by a subshift.

Two families are supported: similarities of R^d (d = 1 or 2) and
holomorphic maps of the plane (Moebius maps and inverse branches of
z^2 + c). Points are real ``(n, d)`` arrays at the API boundary; planar
conformal code converts to complex internally.

Symbol ``i`` only ever acts on the pieces of the symbols that may follow
it, so every conformal bound is computed over the follower pieces of a
word's last symbol, not over the whole ambient square.
"""

from __future__ import annotations

import math
import warnings
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from shapely.geometry import MultiPoint

from .cloud import WeightedCloud
from .exceptions import CapError, InputError
from .gibbs import GibbsModel, build_gibbs, geometric_potential, parry_measure, pressure
from .symbolic import (
    SymbolicSystem,
    admissible_word_array,
    check_word,
    count_words,
    full_shift,
    is_admissible,
    is_transitive,
)

SAMPLE_CAP = 10**7  # points
DEPTH_CAP = 64
GRID_SIDE = 32  # grid points across a piece for conformal derivative bounds
GRID_REFINE = 4  # the grid may be halved this many times to certify contraction
SEPARATION_TOL = 1e-12


def _c2r(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1)


def _r2c(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., 0] + 1j * p[..., 1]


# ---------------------------------------------------------------------------
# regions


class Region:
    """Compact region of R^d. Planar regions also answer complex queries."""

    dim: int

    @property
    def center(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def reach(self) -> float:
        """Bound on the length of a path inside the region from ``center`` to any point."""
        raise NotImplementedError

    def corners(self) -> np.ndarray:
        """Points whose convex hull contains the region."""
        raise NotImplementedError(f"{type(self).__name__} has no polygonal hull")

    def grid(self, h: float) -> np.ndarray:
        """Complex grid of step ``h`` covering the region enlarged by ``h``."""
        raise NotImplementedError

    def distance_to(self, z: complex) -> float:
        raise NotImplementedError

    def contains_ball(self, center, radius: float, tol: float = 1e-12) -> bool:
        raise NotImplementedError


def _square_grid(lo: np.ndarray, hi: np.ndarray, h: float) -> np.ndarray:
    xs = np.arange(lo[0] - h, hi[0] + h + 0.5 * h, h)
    ys = np.arange(lo[1] - h, hi[1] + h + 0.5 * h, h)
    gx, gy = np.meshgrid(xs, ys)
    return (gx + 1j * gy).ravel()


@dataclass(frozen=True, eq=False)
class Box(Region):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InputError("box needs lo < hi coordinatewise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, d: int) -> "Box":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def reach(self) -> float:
        return 0.5 * self.diameter

    def corners(self) -> np.ndarray:
        d = self.dim
        bits = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1
        return np.where(bits == 1, self.hi, self.lo)

    def grid(self, h: float) -> np.ndarray:
        if self.dim != 2:
            raise InputError("complex grids need a planar box")
        return _square_grid(self.lo, self.hi, h)

    def distance_to(self, z: complex) -> float:
        p = np.array([z.real, z.imag]) if self.dim == 2 else np.array([float(np.real(z))])
        gap = np.maximum(np.maximum(self.lo - p, p - self.hi), 0.0)
        return float(np.linalg.norm(gap))

    def contains_ball(self, center, radius: float, tol: float = 1e-12) -> bool:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return bool(np.all(c - radius >= self.lo - tol) and np.all(c + radius <= self.hi + tol))


@dataclass(frozen=True)
class Disk(Region):
    center_z: complex
    radius: float
    dim: int = field(default=2, init=False)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.center_z.real, self.center_z.imag])

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def reach(self) -> float:
        return self.radius

    def corners(self) -> np.ndarray:
        # circumscribed 32-gon
        k = 32
        ang = 2 * np.pi * np.arange(k) / k
        rr = self.radius / math.cos(math.pi / k)
        return _c2r(self.center_z + rr * np.exp(1j * ang))

    def grid(self, h: float) -> np.ndarray:
        c, r = self.center_z, self.radius
        g = _square_grid(np.array([c.real - r, c.imag - r]), np.array([c.real + r, c.imag + r]), h)
        return g[np.abs(g - c) <= r + h]

    def distance_to(self, z: complex) -> float:
        return max(abs(z - self.center_z) - self.radius, 0.0)

    def contains_ball(self, center, radius: float, tol: float = 1e-12) -> bool:
        c = complex(center[0], center[1])
        return abs(c - self.center_z) + radius <= self.radius + tol


@dataclass(frozen=True)
class Annulus(Region):
    """r_in <= |z - c| <= r_out, optionally only the closed half with arg(z - c) in [half, half + pi]."""

    center_z: complex
    r_in: float
    r_out: float
    half: Optional[float] = None
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise InputError("annulus needs 0 < r_in < r_out")

    def _local(self, z):
        """Coordinates in which the half annulus is the upper one."""
        w = np.asarray(z) - self.center_z
        return w if self.half is None else w * np.exp(-1j * self.half)

    @property
    def _ref(self) -> complex:
        rm = 0.5 * (self.r_in + self.r_out)
        if self.half is None:
            return self.center_z + rm
        return self.center_z + rm * np.exp(1j * (self.half + 0.5 * math.pi))

    @property
    def center(self) -> np.ndarray:
        return np.array([self._ref.real, self._ref.imag])

    @property
    def diameter(self) -> float:
        return 2.0 * self.r_out

    @property
    def reach(self) -> float:
        # radial leg, then an arc of angle at most pi (pi/2 for a half annulus)
        arc = math.pi if self.half is None else 0.5 * math.pi
        return 0.5 * (self.r_out - self.r_in) + arc * self.r_out

    def grid(self, h: float) -> np.ndarray:
        c, r = self.center_z, self.r_out
        g = _square_grid(np.array([c.real - r, c.imag - r]), np.array([c.real + r, c.imag + r]), h)
        rad = np.abs(g - c)
        keep = (rad >= self.r_in - h) & (rad <= self.r_out + h)
        if self.half is not None:
            keep &= self._local(g).imag >= -h
        return g[keep]

    def distance_to(self, z: complex) -> float:
        w = complex(self._local(z))
        if self.half is None or w.imag >= 0:
            return max(self.r_in - abs(w), abs(w) - self.r_out, 0.0)
        # below the cut line: nearest point is on one of the two straight edges
        x = abs(w.real)
        dx = max(self.r_in - x, x - self.r_out, 0.0)
        return math.hypot(dx, w.imag)

    def contains_ball(self, center, radius: float, tol: float = 1e-12) -> bool:
        w = complex(self._local(complex(center[0], center[1])))
        ok = abs(w) - radius >= self.r_in - tol and abs(w) + radius <= self.r_out + tol
        if self.half is not None:
            ok = ok and w.imag - radius >= -tol
        return ok


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True, eq=False)
class SimilarityMap:
    """x -> ratio * orthogonal @ x + translation.

    ``exact`` optionally carries the same map with rational coefficients
    (linear part, translation) for computations that zoom past float precision.
    """

    ratio: float
    orthogonal: np.ndarray
    translation: np.ndarray
    exact: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        o = np.atleast_2d(np.asarray(self.orthogonal, dtype=float))
        t = np.atleast_1d(np.asarray(self.translation, dtype=float))
        if o.shape != (t.shape[0], t.shape[0]):
            raise InputError("orthogonal part and translation disagree on dimension")
        if not np.allclose(o @ o.T, np.eye(t.shape[0]), atol=1e-12):
            raise InputError("orthogonal part is not orthogonal")
        if not 0 < self.ratio < 1:
            raise InputError(f"similarity ratio {self.ratio} outside (0, 1)")
        object.__setattr__(self, "orthogonal", o)
        object.__setattr__(self, "translation", t)

    @classmethod
    def line(cls, ratio: float, shift: float, flip: bool = False) -> "SimilarityMap":
        sign = -1 if flip else 1
        exact = None
        if _rational(ratio, shift):
            exact = (((Fraction(ratio) * sign,),), (Fraction(shift),))
        return cls(float(ratio), [[float(sign)]], [float(shift)], exact)

    @classmethod
    def homothety(cls, ratio, translation) -> "SimilarityMap":
        """x -> ratio x + translation; exact when every coefficient is rational."""
        d = len(translation)
        exact = None
        if _rational(ratio, *translation):
            r = Fraction(ratio)
            exact = (tuple(tuple(r if i == j else Fraction(0) for j in range(d)) for i in range(d)),
                     tuple(Fraction(x) for x in translation))
        return cls(float(ratio), np.eye(d), [float(x) for x in translation], exact)

    @classmethod
    def planar(cls, ratio: float, angle: float, translation, reflect: bool = False) -> "SimilarityMap":
        c, s = math.cos(angle), math.sin(angle)
        o = np.array([[c, -s], [s, c]])
        if reflect:
            o = o @ np.diag([1.0, -1.0])
        return cls(ratio, o, translation)

    @classmethod
    def about(cls, ratio: float, angle: float, center, pivot=(0.5, 0.5)) -> "SimilarityMap":
        """Rotate-and-shrink around ``pivot``, then move ``pivot`` to ``center``."""
        m = cls.planar(ratio, angle, [0.0, 0.0])
        t = np.asarray(center, dtype=float) - m.linear @ np.asarray(pivot, dtype=float)
        return cls(ratio, m.orthogonal, t)

    @property
    def dim(self) -> int:
        return self.translation.shape[0]

    @property
    def linear(self) -> np.ndarray:
        return self.ratio * self.orthogonal

    @property
    def reflects(self) -> bool:
        return bool(np.linalg.det(self.orthogonal) < 0)

    @property
    def angle(self) -> float:
        """Rotation angle in [0, 2pi) of the orthogonal part (planar only)."""
        if self.dim != 2:
            raise InputError("rotation angle is defined for planar maps")
        return float(np.arctan2(self.orthogonal[1, 0], self.orthogonal[0, 0]) % (2 * np.pi))

    def exact_parts(self) -> tuple:
        """(linear, translation) as Fraction arrays; floats convert exactly when no rational form is set."""
        if self.exact is not None:
            lin, tr = self.exact
        else:
            lin, tr = self.linear.tolist(), self.translation.tolist()
        L = np.empty((self.dim, self.dim), dtype=object)
        L[:, :] = [[Fraction(x) for x in row] for row in lin]
        t = np.empty(self.dim, dtype=object)
        t[:] = [Fraction(x) for x in tr]
        return L, t

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.linear.T + self.translation

    def then(self, inner: "SimilarityMap") -> "SimilarityMap":
        """self o inner."""
        exact = None
        if self.exact is not None and inner.exact is not None:
            (L1, t1), (L2, t2) = self.exact_parts(), inner.exact_parts()
            exact = (tuple(map(tuple, L1 @ L2)), tuple(L1 @ t2 + t1))
        return SimilarityMap(
            self.ratio * inner.ratio,
            self.orthogonal @ inner.orthogonal,
            self.linear @ inner.translation + self.translation,
            exact,
        )


def _rational(*xs) -> bool:
    return all(isinstance(x, (int, Fraction)) and not isinstance(x, bool) for x in xs)


class ConformalMap:
    """Holomorphic contraction with a single singular point (pole or branch point).

    ``kappa`` bounds |S''/S'| by kappa / |z - singularity|.
    """

    kind: str
    kappa: float

    @property
    def singularity(self) -> Optional[complex]:
        raise NotImplementedError

    def __call__(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def log_deriv_bound(self, region: Region, h: float) -> float:
        """Bound on |(log S')'| over ``region`` enlarged by ``h``; inf if too close to the singularity."""
        sing = self.singularity
        if sing is None:
            return 0.0
        gap = region.distance_to(sing) - h
        return self.kappa / gap if gap > 0 else math.inf


@dataclass(frozen=True)
class MoebiusMap(ConformalMap):
    a: complex
    b: complex
    c: complex
    d: complex
    kind: str = field(default="moebius", init=False)
    kappa: float = field(default=2.0, init=False)

    def __post_init__(self):
        if abs(self.a * self.d - self.b * self.c) == 0:
            raise InputError("Moebius map needs ad - bc != 0")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=complex)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "MoebiusMap":
        m = np.asarray(m, dtype=complex)
        return cls(complex(m[0, 0]), complex(m[0, 1]), complex(m[1, 0]), complex(m[1, 1]))

    @property
    def singularity(self) -> Optional[complex]:
        return None if self.c == 0 else -self.d / self.c

    def __call__(self, z):
        return (self.a * z + self.b) / (self.c * z + self.d)

    def deriv(self, z):
        return (self.a * self.d - self.b * self.c) / (self.c * z + self.d) ** 2

    def then(self, inner: "MoebiusMap") -> "MoebiusMap":
        return MoebiusMap.from_matrix(self.matrix @ inner.matrix)


@dataclass(frozen=True)
class SqrtBranchMap(ConformalMap):
    """z -> delta + alpha * sqrt(beta z + gamma), principal square root."""

    alpha: complex
    beta: complex
    gamma: complex
    delta: complex
    kind: str = field(default="quad_inverse_branch", init=False)
    kappa: float = field(default=0.5, init=False)

    @property
    def singularity(self) -> complex:
        return -self.gamma / self.beta

    def __call__(self, z):
        return self.delta + self.alpha * np.sqrt(self.beta * z + self.gamma)

    def deriv(self, z):
        return self.alpha * self.beta / (2 * np.sqrt(self.beta * z + self.gamma))


class _ConformalKernel:
    """Vectorized evaluation of a homogeneous conformal family by symbol index."""

    def __init__(self, maps: Sequence[ConformalMap]):
        kinds = {m.kind for m in maps}
        if len(kinds) != 1:
            raise InputError(f"mixed conformal kinds {sorted(kinds)} are not supported")
        self.kind = kinds.pop()
        if self.kind == "moebius":
            self.p = np.array([[m.a, m.b, m.c, m.d] for m in maps], dtype=complex)
        else:
            self.p = np.array([[m.alpha, m.beta, m.gamma, m.delta] for m in maps], dtype=complex)

    def apply(self, sym: np.ndarray, z: np.ndarray) -> np.ndarray:
        p = self.p[sym]
        p = p.reshape(p.shape[:1] + (1,) * (z.ndim - 1) + (4,))
        if self.kind == "moebius":
            return (p[..., 0] * z + p[..., 1]) / (p[..., 2] * z + p[..., 3])
        return p[..., 3] + p[..., 0] * np.sqrt(p[..., 1] * z + p[..., 2])

    def log_abs_deriv(self, sym: np.ndarray, z: np.ndarray) -> np.ndarray:
        p = self.p[sym]
        p = p.reshape(p.shape[:1] + (1,) * (z.ndim - 1) + (4,))
        if self.kind == "moebius":
            det = p[..., 0] * p[..., 3] - p[..., 1] * p[..., 2]
            return np.log(np.abs(det)) - 2 * np.log(np.abs(p[..., 2] * z + p[..., 3]))
        return (np.log(np.abs(p[..., 0] * p[..., 1] / 2))
                - 0.5 * np.log(np.abs(p[..., 1] * z + p[..., 2])))


@dataclass(frozen=True, eq=False)
class ComposedConformal:
    """S_{w_0} o ... o S_{w_{k-1}} for a conformal family."""

    maps: tuple

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        for m in reversed(self.maps):
            z = m(z)
        return z

    def deriv(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.ones_like(z)
        for m in reversed(self.maps):
            out = out * m.deriv(z)
            z = m(z)
        return out

    @property
    def moebius(self) -> MoebiusMap:
        if not all(isinstance(m, MoebiusMap) for m in self.maps):
            raise InputError("composition is not a Moebius map")
        out = self.maps[0]
        for m in self.maps[1:]:
            out = out.then(m)
        return out


# ---------------------------------------------------------------------------
# the system


@dataclass(frozen=True)
class LipData:
    lip_minus: float
    lip_plus: float
    certified: bool


@dataclass(frozen=True, eq=False)
class IfsSystem:
    """One contraction per symbol of ``symbolic``, acting on ``domain``.

    ``pieces[i]`` is a region known to contain F_A^i. By default every
    piece is the whole domain; conformal presets pass disjoint pieces so
    that maps are only evaluated where they are analytic and contracting.
    """

    symbolic: SymbolicSystem
    maps: tuple
    domain: Region
    pieces: Optional[tuple] = None
    name: str = "custom"
    oracle_dimension: Optional[float] = None
    chart: Optional[Callable] = field(default=None, repr=False)  # native coords -> domain

    def __post_init__(self):
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if len(maps) != self.symbolic.alphabet_size:
            raise InputError(f"{len(maps)} maps for an alphabet of size {self.symbolic.alphabet_size}")
        if all(isinstance(m, SimilarityMap) for m in maps):
            kind = "similarity"
            if any(m.dim != self.domain.dim for m in maps):
                raise InputError("map dimension differs from domain dimension")
        elif all(isinstance(m, ConformalMap) for m in maps):
            kind = "conformal"
            if self.domain.dim != 2:
                raise InputError("conformal maps act on a planar domain")
        else:
            raise InputError("maps must be all similarities or all conformal")
        object.__setattr__(self, "kind", kind)
        pieces = self.pieces if self.pieces is not None else (self.domain,) * len(maps)
        if len(pieces) != len(maps):
            raise InputError("one piece per symbol required")
        object.__setattr__(self, "pieces", tuple(pieces))
        if kind == "similarity":
            corners = self.domain.corners()
            for i, m in enumerate(maps):
                img = m(corners)
                if np.any(img < self.domain.lo - 1e-12) or np.any(img > self.domain.hi + 1e-12):
                    raise InputError(f"map {i} does not send the domain into itself")
            object.__setattr__(self, "_kernel", None)
        else:
            object.__setattr__(self, "_kernel", _ConformalKernel(maps))
            side = GRID_SIDE
            for attempt in range(GRID_REFINE + 1):
                object.__setattr__(self, "_grid_side", side)
                try:
                    object.__setattr__(self, "_single", self._single_map_data())
                    break
                except _NotContracting:
                    if attempt == GRID_REFINE:
                        raise
                    side *= 2

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def alphabet_size(self) -> int:
        return self.symbolic.alphabet_size

    @property
    def ratios(self) -> np.ndarray:
        if self.kind != "similarity":
            raise InputError("contraction ratios exist only for similarities")
        return np.array([m.ratio for m in self.maps])

    def follower_pieces(self, i: int) -> list:
        return [self.pieces[j] for j in self.symbolic.followers(i)]

    def grid_step(self) -> float:
        return min(p.diameter for p in self.pieces) / getattr(self, "_grid_side", GRID_SIDE)

    def _single_map_data(self):
        """Per-symbol certified sup |S_i'|, inf |S_i'| and derivative-log bound K_i."""
        h = self.grid_step()
        hi, lo, kb = [], [], []
        for i, m in enumerate(self.maps):
            pieces = self.follower_pieces(i)
            k = max(m.log_deriv_bound(p, h) for p in pieces)
            if not math.isfinite(k):
                raise InputError(f"map {i}: singularity inside the enlarged domain")
            g = np.concatenate([p.grid(h) for p in pieces])
            a = np.abs(m.deriv(g))
            margin = math.exp(k * h / math.sqrt(2))
            hi.append(a.max() * margin)
            lo.append(a.min() / margin)
            kb.append(k)
            if hi[-1] >= 1:
                raise _NotContracting(f"map {i} is not a contraction on its follower pieces "
                                 f"(sup |S'| <= {hi[-1]:.4g})")
        return np.array(lo), np.array(hi), np.array(kb)


class _NotContracting(InputError):
    pass


def _word_array(sys: IfsSystem, words) -> np.ndarray:
    w = np.asarray(words, dtype=np.int64)
    if w.ndim == 1:
        w = w[None, :]
    if w.size == 0 or w.shape[1] == 0:
        raise InputError("words must be nonempty")
    if w.min() < 0 or w.max() >= sys.alphabet_size:
        raise InputError("symbol outside alphabet")
    a = sys.symbolic.transition
    if w.shape[1] > 1 and not np.all(a[w[:, :-1], w[:, 1:]]):
        raise InputError("inadmissible word")
    return w


def compose(sys: IfsSystem, w: Sequence[int]):
    w = check_word(w, sys.symbolic)
    if not is_admissible(w, sys.symbolic):
        raise InputError(f"word {w} is not admissible")
    if sys.kind == "similarity":
        out = sys.maps[w[0]]
        for i in w[1:]:
            out = out.then(sys.maps[i])
        return out
    return ComposedConformal(tuple(sys.maps[i] for i in w))


def similarity_arrays(sys: IfsSystem, words) -> tuple:
    """Linear parts (n, d, d) and translations (n, d) of S_w for each row."""
    w = _word_array(sys, words)
    lin = np.stack([m.linear for m in sys.maps])
    tr = np.stack([m.translation for m in sys.maps])
    n, d = w.shape[0], sys.dim
    L = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    t = np.zeros((n, d))
    for j in range(w.shape[1]):
        t += np.einsum("nij,nj->ni", L, tr[w[:, j]])
        L = L @ lin[w[:, j]]
    return L, t


def apply_words(sys: IfsSystem, words, start) -> np.ndarray:
    """S_w(start) for every row; ``start`` is one point or one point per word."""
    w = _word_array(sys, words)
    n = w.shape[0]
    if sys.kind == "similarity":
        x = np.broadcast_to(np.asarray(start, dtype=float), (n, sys.dim)).copy()
        lin = np.stack([m.linear for m in sys.maps])
        tr = np.stack([m.translation for m in sys.maps])
        for j in range(w.shape[1] - 1, -1, -1):
            x = np.einsum("nij,nj->ni", lin[w[:, j]], x) + tr[w[:, j]]
        return x
    z = np.broadcast_to(_r2c(np.asarray(start, dtype=float)), (n,)).astype(complex)
    for j in range(w.shape[1] - 1, -1, -1):
        z = sys._kernel.apply(w[:, j], z)
    return _c2r(z)


def lip_bounds_array(sys: IfsSystem, words) -> tuple:
    """(lip_minus, lip_plus, certified) arrays, one entry per word."""
    w = _word_array(sys, words)
    n, k = w.shape
    if sys.kind == "similarity":
        r = np.prod(sys.ratios[w], axis=1)
        return r, r.copy(), np.ones(n, dtype=bool)
    s_lo, s_hi, s_k = sys._single
    h = sys.grid_step()
    lo = np.empty(n)
    hi = np.empty(n)
    # chained bound on the Lipschitz constant of log|S_w'|
    kw = np.zeros(n)
    tail = np.ones(n)
    for j in range(k - 1, -1, -1):
        kw += s_k[w[:, j]] * tail
        tail *= s_hi[w[:, j]]
    margin = np.exp(kw * h / math.sqrt(2))
    last = w[:, -1]
    for s in np.unique(last):
        rows = np.flatnonzero(last == s)
        g = np.concatenate([p.grid(h) for p in sys.follower_pieces(int(s))])
        z = np.broadcast_to(g, (rows.size, g.size)).copy()
        logd = np.zeros_like(z, dtype=float)
        for j in range(k - 1, -1, -1):
            sym = w[rows, j]
            logd += sys._kernel.log_abs_deriv(sym, z)
            z = sys._kernel.apply(sym, z)
        hi[rows] = np.exp(logd.max(axis=1)) * margin[rows]
        lo[rows] = np.exp(logd.min(axis=1)) / margin[rows]
    certified = np.isfinite(margin)
    return lo, hi, certified


def lip_bounds(sys: IfsSystem, w: Sequence[int]) -> LipData:
    lo, hi, ok = lip_bounds_array(sys, [check_word(w, sys.symbolic)])
    if not ok[0]:
        warnings.warn(f"Lipschitz bounds for {tuple(w)} are not certified", RuntimeWarning)
    return LipData(float(lo[0]), float(hi[0]), bool(ok[0]))


def code_balls(sys: IfsSystem, words, lip_plus: Optional[np.ndarray] = None) -> tuple:
    """Centers (n, d) and radii (n,) of balls containing S_w of the relevant region.

    Similarities: center S_w(center of X), radius lip * diam(X).
    Conformal: one ball per follower piece of the last symbol, merged.
    """
    w = _word_array(sys, words)
    if lip_plus is None:
        lip_plus = lip_bounds_array(sys, w)[1]
    if sys.kind == "similarity":
        centers = apply_words(sys, w, sys.domain.center)
        return centers, lip_plus * sys.domain.diameter
    n = w.shape[0]
    centers = np.empty((n, 2))
    radii = np.empty(n)
    last = w[:, -1]
    for s in np.unique(last):
        rows = np.flatnonzero(last == s)
        pcs = sys.follower_pieces(int(s))
        cs = np.stack([apply_words(sys, w[rows], p.center) for p in pcs])  # (P, r, 2)
        rs = np.stack([lip_plus[rows] * (p.diameter if isinstance(p, (Disk, Box)) else p.reach)
                       for p in pcs])
        mid = cs.mean(axis=0)
        centers[rows] = mid
        radii[rows] = (np.linalg.norm(cs - mid, axis=2) + rs).max(axis=0)
    return centers, radii


def code_point(sys: IfsSystem, w: Sequence[int]) -> tuple:
    """(center, radius) of a ball containing Pi([w])."""
    c, r = code_balls(sys, [check_word(w, sys.symbolic)])
    return c[0], float(r[0])


def distortion_constant(sys: IfsSystem, depth: int, cap: int = 10**5) -> float:
    """max over admissible words of length <= depth of lip_plus / lip_minus (finite-depth estimate)."""
    best = 1.0
    for k in range(1, depth + 1):
        words = admissible_word_array(sys.symbolic, k, cap=cap)
        lo, hi, _ = lip_bounds_array(sys, words)
        best = max(best, float((hi / lo).max()))
    return best


def sample_measure(sys: IfsSystem, g: GibbsModel, n: int, depth: int, seed: int,
                   cap: int = SAMPLE_CAP) -> WeightedCloud:
    """n code points of words drawn from the Gibbs measure; equal weights."""
    if g.system != sys.symbolic:
        raise InputError("Gibbs model lives on a different subshift")
    if n < 1 or depth < 1:
        raise InputError("n and depth must be positive")
    if n > cap:
        raise CapError("sample points", n, cap)
    if depth > DEPTH_CAP:
        raise CapError("sample depth", depth, DEPTH_CAP)
    rng = np.random.default_rng(seed)
    words = g.sample_words(n, depth, rng)
    return cloud_from_words(sys, words)


def cloud_from_words(sys: IfsSystem, words: np.ndarray) -> WeightedCloud:
    n = words.shape[0]
    if sys.kind == "similarity":
        pts = apply_words(sys, words, sys.domain.center)
        res = float(np.prod(sys.ratios[words], axis=1).max()) * sys.domain.diameter
    else:
        # start inside the first follower piece of each word's last symbol
        starts = np.stack([sys.follower_pieces(i)[0].center for i in range(sys.alphabet_size)])
        pts = apply_words(sys, words, starts[words[:, -1]])
        s_hi = sys._single[1]
        reach = max(p.reach for p in sys.pieces)
        res = float(np.prod(s_hi[words], axis=1).max()) * reach
    return WeightedCloud(pts, np.full(n, 1.0 / n), res)


# ---------------------------------------------------------------------------
# strong separation


@dataclass(frozen=True)
class SeparationReport:
    passed: bool
    depth: int
    gap: float  # smallest distance between first-level regions (<= 0 on overlap)
    all_depths: bool  # certified at every depth by nesting
    pair: Optional[tuple] = None  # offending pair of words on failure
    mode: str = "hull"

    def __str__(self):
        if self.passed:
            scope = "all depths" if self.all_depths else f"depth {self.depth}"
            return f"PASS ({scope}, gap {self.gap:.6g}, {self.mode})"
        return f"FAIL (pair {self.pair[0]} / {self.pair[1]}, {self.mode})"


def _hull_depth(s: SymbolicSystem, budget: int = 4096) -> int:
    n = 1
    while n < 10 and count_words(s, n + 1) <= budget:
        n += 1
    return n


def piece_hulls(sys: IfsSystem, depth: Optional[int] = None) -> list:
    """Convex regions R_j containing F_A^j: hull of S_u(X) over admissible u of length n from j.

    1-d: (lo, hi) tuples. 2-d: shapely polygons.
    """
    s = sys.symbolic
    n = depth or _hull_depth(s)
    corners = sys.domain.corners()
    out = []
    for j in range(s.alphabet_size):
        words = admissible_word_array(s, n, first=j)
        L, t = similarity_arrays(sys, words)
        pts = (np.einsum("nij,cj->nci", L, corners) + t[:, None, :]).reshape(-1, sys.dim)
        if sys.dim == 1:
            out.append((float(pts.min()), float(pts.max())))
        else:
            out.append(MultiPoint(pts).convex_hull)
    return out


def _region_gap(a, b) -> float:
    if isinstance(a, tuple):
        return max(b[0] - a[1], a[0] - b[1])
    if a.intersects(b):
        return -1.0
    return a.distance(b)


def check_strong_separation(sys: IfsSystem, depth: int = 4, mode: str = "hull") -> SeparationReport:
    """Disjointness of images of incomparable words.

    Any incomparable pair nests inside the two children of its first
    divergence node, and S_u is injective, so everything reduces to the
    first-level regions. ``mode`` selects those regions for similarities:
    ``"domain"`` uses S_i(X) literally; ``"hull"`` uses the tighter convex
    regions from :func:`piece_hulls`, which still contain every S_u(F).
    Conformal systems use code balls; the all-depth certificate then also
    needs each first-level ball to lie inside its own piece.
    """
    if depth < 1:
        raise InputError("depth must be >= 1")
    s = sys.symbolic
    m = s.alphabet_size
    if sys.kind == "similarity":
        if mode == "hull":
            regions = piece_hulls(sys)
        elif mode == "domain":
            regions = []
            for i in range(m):
                img = sys.maps[i](sys.domain.corners())
                regions.append((float(img.min()), float(img.max())) if sys.dim == 1
                               else MultiPoint(img).convex_hull)
        else:
            raise InputError(f"unknown separation mode {mode!r}")
        gap = math.inf
        for i in range(m):
            for j in range(i + 1, m):
                gij = _region_gap(regions[i], regions[j])
                if gij <= SEPARATION_TOL:
                    return SeparationReport(False, depth, gij, False, ((i,), (j,)), mode)
                gap = min(gap, gij)
        return SeparationReport(True, depth, gap if m > 1 else math.inf, True, None, mode)

    mode = "balls"
    words = np.arange(m)[:, None]
    centers, radii = code_balls(sys, words)
    gap = math.inf
    for i in range(m):
        for j in range(i + 1, m):
            gij = float(np.linalg.norm(centers[i] - centers[j]) - radii[i] - radii[j])
            if gij <= SEPARATION_TOL:
                return SeparationReport(False, depth, gij, False, ((i,), (j,)), mode)
            gap = min(gap, gij)
    nested = all(sys.pieces[i].contains_ball(centers[i], radii[i]) for i in range(m))
    if nested:
        return SeparationReport(True, depth, gap, True, None, mode)
    # without nesting, check sibling balls node by node up to ``depth``
    for k in range(1, depth):
        parents = admissible_word_array(s, k)
        for u in parents:
            fol = s.followers(int(u[-1]))
            kids = np.concatenate([np.repeat(u[None, :], fol.size, axis=0), fol[:, None]], axis=1)
            c, r = code_balls(sys, kids)
            for a in range(fol.size):
                for b in range(a + 1, fol.size):
                    if np.linalg.norm(c[a] - c[b]) - r[a] - r[b] <= SEPARATION_TOL:
                        pair = (tuple(kids[a].tolist()), tuple(kids[b].tolist()))
                        return SeparationReport(False, depth, gap, False, pair, mode)
    return SeparationReport(True, depth, gap, False, None, mode)


# ---------------------------------------------------------------------------
# dimension oracles


def similarity_dimension(sys: IfsSystem, tol: float = 1e-12) -> float:
    """Zero of t -> P(t log r): the dimension of F_A under strong separation."""
    if sys.kind != "similarity":
        raise InputError("similarity dimension needs a system of similarities")
    if not is_transitive(sys.symbolic):
        raise InputError("similarity dimension needs an irreducible transition matrix")
    r = sys.ratios
    lo, hi = 0.0, 2.0 * sys.dim
    f = lambda t: pressure(sys.symbolic, geometric_potential(r, t))
    if f(hi) > 0:
        raise InputError("pressure still positive at t = 2d")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def natural_measure(sys: IfsSystem) -> GibbsModel:
    """Default Gibbs measure: t log r at the similarity dimension, or Parry for conformal systems."""
    if sys.kind == "similarity":
        t = similarity_dimension(sys)
        return build_gibbs(sys.symbolic, geometric_potential(sys.ratios, t))
    return parry_measure(sys.symbolic)


# ---------------------------------------------------------------------------
# presets

GOLDEN = (1 + math.sqrt(5)) / 2
JULIA_C_MAX = 0.2
_CHART_SCALE = 3.0  # conformal presets live in the annulus 1/2 <= |z| <= 3/2 before rescaling


def _to_square(z):
    return (np.asarray(z) + 1.5 + 1.5j) / _CHART_SCALE


def cantor3() -> IfsSystem:
    maps = (SimilarityMap.line(Fraction(1, 3), 0), SimilarityMap.line(Fraction(1, 3), Fraction(2, 3)))
    return IfsSystem(full_shift(2), maps, Box.unit(1), name="cantor3",
                     oracle_dimension=math.log(2) / math.log(3))


def fourcorner4() -> IfsSystem:
    q = Fraction(3, 4)
    corners = [(0, 0), (q, 0), (0, q), (q, q)]
    maps = tuple(SimilarityMap.homothety(Fraction(1, 4), c) for c in corners)
    return IfsSystem(full_shift(4), maps, Box.unit(2), name="fourcorner4", oracle_dimension=1.0)


def rot5() -> IfsSystem:
    centers = [(0.24, 0.24), (0.76, 0.24), (0.24, 0.76), (0.76, 0.76), (0.5, 0.5)]
    maps = tuple(SimilarityMap.about(1 / 3, 1.0, c) for c in centers)
    return IfsSystem(full_shift(5), maps, Box.unit(2), name="rot5",
                     oracle_dimension=math.log(5) / math.log(3))


def goldenmean2() -> IfsSystem:
    half = Fraction(1, 2)
    maps = (SimilarityMap.line(half, 0), SimilarityMap.line(half, half))
    s = SymbolicSystem(np.array([[1, 1], [1, 0]]))
    return IfsSystem(s, maps, Box.unit(1), name="goldenmean2",
                     oracle_dimension=math.log(GOLDEN) / math.log(2))


COUNTER_MATRIX = np.array([[0, 1, 0], [1, 0, 1], [1, 0, 1]])


def counter3(alpha: float = 1.0) -> IfsSystem:
    """Rotation by +alpha, rotation by -alpha, plain homothety; 0 is always followed by 1."""
    centers = [(0.25, 0.25), (0.75, 0.25), (0.5, 0.75)]
    maps = (SimilarityMap.about(0.25, alpha, centers[0]),
            SimilarityMap.about(0.25, -alpha, centers[1]),
            SimilarityMap.about(0.25, 0.0, centers[2]))
    s = SymbolicSystem(COUNTER_MATRIX)
    sys = IfsSystem(s, maps, Box.unit(2), name="counter3")
    return IfsSystem(s, maps, Box.unit(2), name="counter3", oracle_dimension=similarity_dimension(sys))


SCHOTTKY_RADIUS = 0.15


def schottky_disks() -> list:
    side = 0.5
    base = 0.3
    c = [complex(0.25, base), complex(0.75, base), complex(0.5, base + side * math.sqrt(3) / 2)]
    return [Disk(ci, SCHOTTKY_RADIUS) for ci in c]


def schottky3() -> IfsSystem:
    """S_i = inversion in circle i after reflection in the symmetry axis through its centre.

    The reflection swaps the other two disks, the inversion pulls them
    into disk i, and the composite is the holomorphic Moebius map
    z -> c_i + R^2 / (e^{-2i theta}(z - g) + conj(g - c_i)).
    """
    disks = schottky_disks()
    g = sum(d.center_z for d in disks) / 3
    r2 = SCHOTTKY_RADIUS**2
    maps = []
    for d in disks:
        ci = d.center_z
        e = np.exp(-2j * np.angle(ci - g))
        q = np.conj(g - ci)
        # c_i + r2 / (e z - e g + q) = (c_i e z + c_i (q - e g) + r2) / (e z + q - e g)
        maps.append(MoebiusMap(ci * e, ci * (q - e * g) + r2, e, q - e * g))
    a = 1 - np.eye(3, dtype=np.int64)
    return IfsSystem(SymbolicSystem(a), tuple(maps), Box.unit(2), pieces=tuple(disks),
                     name="schottky3")


def _sqrt_branch(sign: complex, cut: float, c: complex = 0.0) -> SqrtBranchMap:
    """Chart form of z -> sign * sqrt(z - c), the root taken with arg(z - c) in (cut - 2 pi, cut]."""
    shift = 1.5 + 1.5j
    rot = np.exp(-1j * (cut - math.pi))  # moves the cut onto the negative real axis
    return SqrtBranchMap(sign / (_CHART_SCALE * np.sqrt(rot)), _CHART_SCALE * rot, (-shift - c) * rot,
                         shift / _CHART_SCALE)


def _half_annuli() -> tuple:
    centre = complex(0.5, 0.5)
    r_in, r_out = 0.5 / _CHART_SCALE, 1.5 / _CHART_SCALE
    return Annulus(centre, r_in, r_out, half=0.0), Annulus(centre, r_in, r_out, half=math.pi)


JULIA_MATRIX = np.array([[1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 1, 0]])


def julia_quad(c: float = 0.0) -> IfsSystem:
    """Inverse branches of z^2 + c as a graph-directed system on the two half annuli.

    Native coordinates: 1/2 <= |z| <= 3/2, split by the real axis into
    U (upper) and L (lower); chart z -> (z + 3/2 + 3i/2) / 3. The root is
    single valued near U with its cut pointing down and near L with its
    cut pointing up, so each of +-sqrt(z - c) becomes two maps:

        0: +sqrt on U, image in U      1: -sqrt on U, image in L
        2: +sqrt on L, image in L      3: -sqrt on L, image in U

    Symbol i may be followed by j when S_i acts on the half holding S_j's
    image. For c = 0 the attractor is the unit circle.
    """
    c = complex(c)
    if c.imag != 0:
        raise InputError("julia_quad takes a real parameter c (the half-annulus split needs it)")
    c = c.real
    if abs(c) > JULIA_C_MAX:
        raise InputError(f"julia_quad is validated for |c| <= {JULIA_C_MAX}, got {c}")
    up, down = _half_annuli()
    cut_up, cut_down = 1.5 * math.pi, 0.5 * math.pi
    maps = (_sqrt_branch(1, cut_up, c), _sqrt_branch(-1, cut_up, c),
            _sqrt_branch(1, cut_down, c), _sqrt_branch(-1, cut_down, c))
    return IfsSystem(SymbolicSystem(JULIA_MATRIX), maps, Box.unit(2), pieces=(up, down, down, up),
                     name=f"julia_quad({c:g})", chart=_to_square)


def halfcircle() -> IfsSystem:
    """sqrt(z) and i sqrt(z) on the upper half annulus: arc-length measure on the upper half circle."""
    up, _ = _half_annuli()
    cut = 1.5 * math.pi  # keeps the root analytic near the closed upper half
    maps = (_sqrt_branch(1, cut), _sqrt_branch(1j, cut))
    return IfsSystem(full_shift(2), maps, Box.unit(2), pieces=(up, up), name="halfcircle",
                     oracle_dimension=1.0, chart=_to_square)


PRESETS = {
    "cantor3": cantor3,
    "fourcorner4": fourcorner4,
    "rot5": rot5,
    "goldenmean2": goldenmean2,
    "counter3": counter3,
    "schottky3": schottky3,
    "julia_quad": julia_quad,
    "halfcircle": halfcircle,
}


def preset(name: str, **params) -> IfsSystem:
    """Build a named system. ``julia_quad(0.1)`` style names are accepted too."""
    base, arg = name, None
    if "(" in name and name.endswith(")"):
        base, arg = name[:-1].split("(", 1)
    if base not in PRESETS:
        raise InputError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    if arg is not None:
        if base != "julia_quad":
            raise InputError(f"preset {base} takes no parameter")
        try:
            params["c"] = complex(arg.replace(" ", ""))
        except ValueError:
            raise InputError(f"cannot parse julia parameter {arg!r}") from None
    return PRESETS[base](**params)
