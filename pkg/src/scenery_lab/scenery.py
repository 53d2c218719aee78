"""b-adic boxes, minimeasures and scenery walks.

A frame at level n is the measure restricted to one box of side b^-n,
renormalized to mass 1 and blown up onto the unit cube by T_B(x) = b^n x - i.

For similarity systems frames are computed from cylinders, not from a point
cloud: each cylinder is carried as its affine map in frame coordinates
together with its log-mass, so zooming never loses precision and walks can
go hundreds of levels deep. Micromeasures (weak limits of frames) are only
ever approximated by the deepest frame computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from shapely.geometry import MultiPoint

from .cloud import WeightedCloud, as_points
from .exceptions import CapError, EmptyFrameError, InputError
from .gibbs import (
    GibbsModel,
    gibbs_ratio_bounds,
    lemma_bracket,
    quasi_bernoulli_ratio,
    variation_sum,
)
from .ifs import IfsSystem, code_balls, piece_hulls, sample_measure
from .symbolic import admissible_word_array

FRONTIER_CAP = 2 * 10**6
FRAME_RESOLUTION = 4  # frame clouds resolve b^-4 in frame coordinates
WALK_RESOLUTION = 5  # cylinders kept at most b^-5 across during a walk
STRADDLE_EXTRA = 8  # cylinders crossing a sub-box face are split b^8 times finer


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class BoxIndex:
    """The box prod_j [i_j b^-n, (i_j + 1) b^-n)."""

    base: int
    level: int
    index: tuple

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def scale(self) -> int:
        return self.base**self.level

    @property
    def side(self) -> float:
        return float(Fraction(1, self.scale))

    @property
    def lo(self) -> np.ndarray:
        return np.array([float(Fraction(i, self.scale)) for i in self.index])

    @property
    def hi(self) -> np.ndarray:
        return np.array([float(Fraction(i + 1, self.scale)) for i in self.index])

    def renorm(self, x) -> np.ndarray:
        """T_B(x) = b^n x - i."""
        return as_points(x, self.dim) * float(self.scale) - np.asarray(self.index, dtype=float)

    def inverse(self, y) -> np.ndarray:
        return (as_points(y, self.dim) + np.asarray(self.index, dtype=float)) / float(self.scale)

    def child(self, j: Sequence[int]) -> "BoxIndex":
        j = tuple(int(x) for x in j)
        if len(j) != self.dim or any(not 0 <= x < self.base for x in j):
            raise InputError(f"child digit {j} invalid for base {self.base}")
        return BoxIndex(self.base, self.level + 1,
                        tuple(i * self.base + x for i, x in zip(self.index, j)))

    def contains(self, x) -> np.ndarray:
        """Half-open membership, decided by the same floor rule as :func:`dyadic_box`."""
        pts = as_points(x, self.dim)
        idx = np.floor(pts * float(self.scale))
        return np.all(idx == np.asarray(self.index, dtype=float), axis=1)


def dyadic_box(x, b: int, n: int) -> BoxIndex:
    """The level-n b-adic box containing x in [0,1)^d: i_j = floor(x_j b^n)."""
    if b < 2 or n < 0:
        raise InputError("need b >= 2 and n >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise InputError("dyadic_box takes a single point")
    if np.any(x < 0) or np.any(x >= 1):
        raise InputError(f"point {x.tolist()} outside the half-open unit cube")
    scale = b**n
    if scale < 2**52:
        idx = tuple(int(math.floor(v * scale)) for v in x)
    else:
        idx = tuple(int(math.floor(Fraction(float(v)) * scale)) for v in x)
    return BoxIndex(b, n, idx)


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True, eq=False)
class ZoomFrame:
    box: BoxIndex
    measure: WeightedCloud = field(repr=False)  # renormalized, inside [0,1]^d
    parent_mass: float  # mu(B)
    log_parent_mass: float
    child_masses: Optional[np.ndarray] = field(default=None, repr=False)  # masses of the b^d sub-boxes
    exact: bool = False  # built from cylinder masses rather than a sample

    @property
    def base(self) -> int:
        return self.box.base

    @property
    def level(self) -> int:
        return self.box.level

    def entropy(self) -> float:
        """Shannon entropy (nats) of the frame's split into its b^d sub-boxes."""
        p = self.child_masses if self.child_masses is not None else _child_masses_from_cloud(self)
        p = p[p > 0]
        p = p / p.sum()
        return float(-(p * np.log(p)).sum())


def _child_digits(points: np.ndarray, b: int) -> np.ndarray:
    d = np.clip(np.floor(points * b).astype(np.int64), 0, b - 1)
    code = np.zeros(points.shape[0], dtype=np.int64)
    for j in range(points.shape[1]):
        code = code * b + d[:, j]
    return code


def _child_masses_from_cloud(frame: ZoomFrame) -> np.ndarray:
    b, d = frame.base, frame.measure.dim
    code = _child_digits(frame.measure.points, b)
    return np.bincount(code, weights=frame.measure.weights, minlength=b**d)


def minimeasure(cloud: WeightedCloud, box: BoxIndex) -> ZoomFrame:
    """Restrict to the box, renormalize to mass 1 and push forward by T_B."""
    if cloud.dim != box.dim:
        raise InputError("cloud and box dimensions differ")
    inside = box.contains(cloud.points)
    total = cloud.weights.sum()
    mass = cloud.weights[inside].sum()
    if mass <= 0:
        raise EmptyFrameError(f"no mass in box {box.index} at level {box.level}")
    pts = np.clip(box.renorm(cloud.points[inside]), 0.0, 1.0)
    parent = float(mass / total)
    res = cloud.resolution * box.scale
    return ZoomFrame(box, WeightedCloud(pts, cloud.weights[inside] / mass, res),
                     parent, math.log(parent))


# ---------------------------------------------------------------------------
# cylinder frontier (similarity systems)


def _exact(a) -> np.ndarray:
    """Object array of Fractions; floats convert exactly (they are dyadic rationals)."""
    a = np.asarray(a)
    out = np.empty(a.shape, dtype=object)
    out.flat[:] = [Fraction(x) for x in a.flat]
    return out


def _objmv(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (A @ v[..., None])[..., 0]


@dataclass(eq=False)
class _Frontier:
    """Cylinders S_w in frame coordinates: y = A x + t, with log-mass and Markov state.

    ``Ax``/``tx`` hold the maps exactly as Fractions. Zooming multiplies
    translations by b at every level, so any rounding would be amplified
    like b^level; the float copies ``A``/``t`` are only read, never evolved.
    """

    Ax: Optional[np.ndarray]  # (n, d, d) object
    tx: Optional[np.ndarray]  # (n, d) object
    scale: np.ndarray  # (n,) similarity ratio of A
    logm: np.ndarray  # (n,) log mu[w] (unnormalized)
    block: np.ndarray  # (n,) index of the last ell symbols in the Gibbs chain
    last: np.ndarray  # (n,) last symbol
    words: Optional[list] = None  # tracked words (tuples), only for verification
    A: np.ndarray = field(default=None, repr=False)
    t: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.A is None:
            self.A = self.Ax.astype(float)
            self.t = self.tx.astype(float)

    @property
    def n(self) -> int:
        return self.logm.size

    def take(self, idx) -> "_Frontier":
        idx = np.asarray(idx, dtype=np.int64)
        words = None if self.words is None else [self.words[i] for i in idx.tolist()]
        ex = self.Ax is not None
        return _Frontier(self.Ax[idx] if ex else None, self.tx[idx] if ex else None,
                         self.scale[idx], self.logm[idx], self.block[idx], self.last[idx], words,
                         self.A[idx], self.t[idx])

    def zoom(self, b: int, j: Sequence[int]) -> "_Frontier":
        j = [int(x) for x in j]
        return _Frontier(self.Ax * b, self.tx * b - np.array(j, dtype=object), b * self.scale,
                         self.logm, self.block, self.last, self.words)


class _CylinderGeometry:
    """Per-system data shared by every frontier operation."""

    def __init__(self, sys: IfsSystem, g: GibbsModel):
        if sys.kind != "similarity":
            raise InputError("cylinder frames need a system of similarities")
        if g.system != sys.symbolic:
            raise InputError("Gibbs model lives on a different subshift")
        self.sys, self.g = sys, g
        s = sys.symbolic
        m = s.alphabet_size
        self.lin = np.stack([mp.linear for mp in sys.maps])
        self.tr = np.stack([mp.translation for mp in sys.maps])
        parts = [mp.exact_parts() for mp in sys.maps]
        self.lin_x = np.stack([L for L, _ in parts])
        self.tr_x = np.stack([t for _, t in parts])
        self.ratio = sys.ratios
        # follower hulls: S_w(H[last w]) contains every point coded by [w]
        hulls = piece_hulls(sys)
        verts, diam = [], []
        for i in range(m):
            fol = s.followers(i)
            if sys.dim == 1:
                lo = min(hulls[j][0] for j in fol)
                hi = max(hulls[j][1] for j in fol)
                v = np.array([[lo], [hi]])
            else:
                pts = np.concatenate([np.asarray(hulls[j].exterior.coords)[:-1]
                                      if hulls[j].geom_type == "Polygon"
                                      else np.asarray(hulls[j].coords) for j in fol])
                hull = MultiPoint(pts).convex_hull
                v = (np.asarray(hull.exterior.coords)[:-1] if hull.geom_type == "Polygon"
                     else np.asarray(hull.coords))
            verts.append(v)
            diam.append(float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2))))
        width = max(v.shape[0] for v in verts)
        self.verts = np.stack([np.concatenate([v, np.repeat(v[-1:], width - v.shape[0], axis=0)])
                               for v in verts])
        self.diam = np.array(diam)
        self.centers = np.stack([v.mean(axis=0) for v in verts])
        # Markov data on blocks
        chain = g.chain
        self.ell = chain.ell
        with np.errstate(divide="ignore"):
            self.logp = np.log(g.block_transition)
        nb = chain.blocks.shape[0]
        self.next_block = np.full((nb, m), -1, dtype=np.int64)
        for bi in range(nb):
            blk = tuple(int(x) for x in chain.blocks[bi])
            for j in s.followers(blk[-1]):
                nxt = (blk[1:] + (int(j),)) if self.ell > 1 else (int(j),)
                code = 0
                for x in nxt:
                    code = code * m + x
                self.next_block[bi, j] = chain.index[code]

    def root(self, track: bool = False) -> _Frontier:
        """All admissible blocks of length ell, in absolute coordinates."""
        blocks = self.g.chain.blocks
        d = self.sys.dim
        n = blocks.shape[0]
        A = _exact(np.broadcast_to(np.eye(d), (n, d, d)))
        t = _exact(np.zeros((n, d)))
        for j in range(blocks.shape[1]):
            t = t + _objmv(A, self.tr_x[blocks[:, j]])
            A = A @ self.lin_x[blocks[:, j]]
        scale = np.prod(self.ratio[blocks], axis=1)
        with np.errstate(divide="ignore"):
            logm = np.log(self.g.block_stationary)
        words = [tuple(int(x) for x in row) for row in blocks] if track else None
        keep = np.isfinite(logm)
        fr = _Frontier(A, t, scale, logm, np.arange(n), blocks[:, -1].copy(), words)
        return fr.take(np.flatnonzero(keep))

    def refine(self, fr: _Frontier, which: np.ndarray) -> _Frontier:
        """Replace the cylinders flagged in ``which`` by their admissible children."""
        which = np.asarray(which, dtype=bool)
        stay = fr.take(np.flatnonzero(~which))
        par = fr.take(np.flatnonzero(which))
        if par.n == 0:
            return fr
        nxt = self.next_block[par.block]  # (p, m)
        pi, sym = np.nonzero(nxt >= 0)
        nb = nxt[pi, sym]
        A = par.Ax[pi] @ self.lin_x[sym]
        t = _objmv(par.Ax[pi], self.tr_x[sym]) + par.tx[pi]
        child = _Frontier(A, t, par.scale[pi] * self.ratio[sym],
                          par.logm[pi] + self.logp[par.block[pi], nb], nb, sym,
                          None if par.words is None else
                          [par.words[p] + (int(s),) for p, s in zip(pi.tolist(), sym.tolist())])
        child = child.take(np.flatnonzero(np.isfinite(child.logm)))
        return _concat(stay, child)

    def size(self, fr: _Frontier) -> np.ndarray:
        return fr.scale * self.diam[fr.last]

    def bbox(self, fr: _Frontier) -> tuple:
        v = np.einsum("nij,nvj->nvi", fr.A, self.verts[fr.last]) + fr.t[:, None, :]
        return v.min(axis=1), v.max(axis=1)

    def center(self, fr: _Frontier) -> np.ndarray:
        return np.einsum("nij,nj->ni", fr.A, self.centers[fr.last]) + fr.t


def _concat(a: _Frontier, b: _Frontier) -> _Frontier:
    words = None if a.words is None else a.words + b.words
    ex = a.Ax is not None and b.Ax is not None
    return _Frontier(np.concatenate([a.Ax, b.Ax]) if ex else None,
                     np.concatenate([a.tx, b.tx]) if ex else None,
                     np.concatenate([a.scale, b.scale]), np.concatenate([a.logm, b.logm]),
                     np.concatenate([a.block, b.block]), np.concatenate([a.last, b.last]), words,
                     np.concatenate([a.A, b.A]), np.concatenate([a.t, b.t]))


def _to_frame(fr: _Frontier, box: BoxIndex) -> _Frontier:
    s = box.scale
    return _Frontier(fr.Ax * s, fr.tx * s - np.array(box.index, dtype=object), float(s) * fr.scale,
                     fr.logm, fr.block, fr.last, fr.words)


def _classify(geo: _CylinderGeometry, fr: _Frontier) -> tuple:
    """Masks (inside [0,1)^d, outside, straddling) from bounding boxes in frame coordinates."""
    lo, hi = geo.bbox(fr)
    inside = np.all((lo >= 0) & (hi < 1), axis=1)
    outside = np.any((hi < 0) | (lo >= 1), axis=1)
    return inside, outside, ~(inside | outside)


def _resolve_box(geo: _CylinderGeometry, box: BoxIndex, straddle_size: float,
                 track: bool = False, inside_size: Optional[float] = None) -> tuple:
    """Cylinders inside the box (frame coordinates) plus the unresolved straddlers.

    Straddlers are refined until smaller than ``straddle_size`` (frame units);
    inside cylinders are refined until smaller than ``inside_size`` when given,
    otherwise they are kept whole (minimal words).
    """
    fr = _to_frame(geo.root(track), box)
    inside_parts = []
    while True:
        if fr.n > FRONTIER_CAP:
            raise CapError("cylinders in a frame", fr.n, FRONTIER_CAP)
        ins, out, strad = _classify(geo, fr)
        size = geo.size(fr)
        grow_in = ins & (size > inside_size) if inside_size is not None else np.zeros_like(ins)
        done_in = ins & ~grow_in
        grow_st = strad & (size > straddle_size)
        if done_in.any():
            inside_parts.append(fr.take(np.flatnonzero(done_in)))
        if not (grow_in.any() or grow_st.any()):
            leftover = fr.take(np.flatnonzero(strad))
            break
        keep = grow_in | grow_st
        fr = geo.refine(fr.take(np.flatnonzero(keep)), np.ones(int(keep.sum()), dtype=bool))
    inside = inside_parts[0] if inside_parts else leftover.take(np.array([], dtype=np.int64))
    for part in inside_parts[1:]:
        inside = _concat(inside, part)
    return inside, leftover


def _logsumexp(x: np.ndarray) -> float:
    if x.size == 0:
        return -math.inf
    top = x.max()
    return float(top + math.log(np.exp(x - top).sum()))


def cylinder_frame(sys: IfsSystem, g: GibbsModel, box: BoxIndex,
                   resolution: int = FRAME_RESOLUTION) -> ZoomFrame:
    """Exact-mass frame: cylinder masses at frame resolution b^-resolution, centers as points.

    Cylinders crossing the box boundary, or the faces of its b^d sub-boxes,
    are split a further STRADDLE_EXTRA levels and then counted by their
    centers; the mass left ambiguous is below b^-(resolution + STRADDLE_EXTRA).
    """
    geo = _CylinderGeometry(sys, g)
    b = box.base
    fine = float(b) ** -(resolution + STRADDLE_EXTRA)
    inside, strad = _resolve_box(geo, box, straddle_size=fine, inside_size=float(b) ** -resolution)
    if strad.n:
        c = geo.center(strad)
        keep = np.all((c >= 0) & (c < 1), axis=1)
        inside = _concat(inside, strad.take(np.flatnonzero(keep)))
    if inside.n:
        inside = _refine_straddlers(geo, inside, b, fine)
    return _frontier_frame(geo, inside, box)


def _frontier_frame(geo: _CylinderGeometry, fr: _Frontier, box: BoxIndex,
                    log_parent: Optional[float] = None) -> ZoomFrame:
    if fr.n == 0:
        raise EmptyFrameError(f"no mass in box {box.index} at level {box.level}")
    lm = _logsumexp(fr.logm)
    if log_parent is None:
        log_parent = lm
    w = np.exp(fr.logm - lm)
    pts = np.clip(geo.center(fr), 0.0, 1.0)
    code = _child_digits(pts, box.base)
    child = np.bincount(code, weights=w, minlength=box.base ** box.dim)
    res = float(geo.size(fr).max())
    return ZoomFrame(box, WeightedCloud(pts, w, res), math.exp(log_parent), log_parent,
                     child, exact=True)


# ---------------------------------------------------------------------------
# scenery walks


@dataclass(frozen=True, eq=False)
class SceneryWalk:
    frames: list
    boxes: list  # BoxIndex per level, level 0 first
    stop_level: int
    truncated: bool
    exact: bool

    def mean_entropy(self) -> float:
        return float(np.mean([f.entropy() for f in self.frames]))

    def entropy_dimension(self) -> float:
        """Mean per-level entropy divided by log b: a dimension estimate for the measure."""
        return self.mean_entropy() / math.log(self.boxes[0].base)

    @property
    def point(self) -> np.ndarray:
        """Lower corner of the deepest box (approximates the walk's base point)."""
        return self.boxes[-1].lo


def scenery_walk(sys: IfsSystem, g: GibbsModel, x_seed: int, b: int, steps: int,
                 points_per_frame: int, cloud_points: int = 200_000) -> SceneryWalk:
    """Frames at levels 1..steps along the boxes of a mu-typical point."""
    if b < 2 or steps < 1 or points_per_frame < 1:
        raise InputError("need b >= 2, steps >= 1 and points_per_frame >= 1")
    if sys.dim > 2:
        raise InputError("walks support d <= 2")
    rng = np.random.default_rng(x_seed)
    if sys.kind == "similarity":
        return _cylinder_walk(sys, g, rng, b, steps, points_per_frame)
    return _cloud_walk(sys, g, rng, b, steps, points_per_frame, cloud_points)


def _cylinder_walk(sys, g, rng, b, steps, points_per_frame) -> SceneryWalk:
    geo = _CylinderGeometry(sys, g)
    d = sys.dim
    delta = float(b) ** -WALK_RESOLUTION
    box = BoxIndex(b, 0, (0,) * d)
    fr = geo.root()
    log_parent = 0.0
    frames, boxes = [], [box]
    stop, truncated = steps, False
    for level in range(1, steps + 1):
        fr = _refine_until(geo, fr, delta)
        fr = _refine_straddlers(geo, fr, b, delta * float(b) ** -STRADDLE_EXTRA)
        # masses of the b^d sub-boxes, each cylinder counted at its centre
        c = geo.center(fr)
        code = _child_digits(np.clip(c, 0.0, 1.0 - 1e-16), b)
        outside = np.any((c < 0) | (c >= 1), axis=1)
        lm = _logsumexp(fr.logm[~outside])
        w = np.where(outside, 0.0, np.exp(fr.logm - lm))
        masses = np.bincount(code, weights=w, minlength=b**d)
        pick = int(rng.choice(b**d, p=masses / masses.sum()))
        digits = np.array([(pick // b ** (d - 1 - j)) % b for j in range(d)])
        sel = np.flatnonzero((code == pick) & ~outside)
        log_parent += math.log(masses[pick])
        fr = fr.take(sel).zoom(b, digits)
        fr.logm = fr.logm - _logsumexp(fr.logm)
        box = box.child(digits)
        boxes.append(box)
        if math.exp(log_parent) == 0.0:
            stop, truncated = level - 1, True
            boxes.pop()
            break
        fine = _refine_until(geo, fr, delta)
        frame_fr = _sample_frontier(geo, fine, points_per_frame, rng, float(b) ** -FRAME_RESOLUTION)
        frame = _frontier_frame(geo, frame_fr, box, log_parent)
        # child masses from the full frontier, not the sample
        cc = np.clip(geo.center(fine), 0.0, 1.0 - 1e-16)
        wf = np.exp(fine.logm - _logsumexp(fine.logm))
        child = np.bincount(_child_digits(cc, b), weights=wf, minlength=b**d)
        frames.append(ZoomFrame(box, frame.measure, frame.parent_mass, log_parent, child, True))
    return SceneryWalk(frames, boxes, stop, truncated, True)


def _refine_until(geo: _CylinderGeometry, fr: _Frontier, size: float) -> _Frontier:
    while True:
        big = geo.size(fr) > size
        if not big.any():
            return fr
        if fr.n > FRONTIER_CAP:
            raise CapError("cylinders in a frame", fr.n, FRONTIER_CAP)
        fr = geo.refine(fr, big)


def _refine_straddlers(geo: _CylinderGeometry, fr: _Frontier, b: int, size: float) -> _Frontier:
    """Split cylinders crossing the sub-box grid until they are smaller than ``size``."""
    while True:
        lo, hi = geo.bbox(fr)
        cross = np.any(np.floor(lo * b) != np.floor(hi * b), axis=1) & (geo.size(fr) > size)
        if not cross.any():
            return fr
        if fr.n > FRONTIER_CAP:
            raise CapError("cylinders in a frame", fr.n, FRONTIER_CAP)
        fr = geo.refine(fr, cross)


def _sample_frontier(geo: _CylinderGeometry, fr: _Frontier, k: int, rng: np.random.Generator,
                     size: float) -> _Frontier:
    """k cylinders drawn by mass, each pushed down randomly until smaller than ``size``."""
    p = np.exp(fr.logm - _logsumexp(fr.logm))
    idx = rng.choice(fr.n, size=k, p=p / p.sum())
    cur = fr.take(np.sort(idx))
    cur = _Frontier(None, None, cur.scale, cur.logm, cur.block, cur.last, None,
                    cur.A.copy(), cur.t.copy())
    cum = np.cumsum(geo.g.block_transition, axis=1)
    while True:
        big = geo.size(cur) > size
        if not big.any():
            break
        rows = np.flatnonzero(big)
        u = rng.random(rows.size)
        cb = cum[cur.block[rows]]
        nb = np.minimum((cb < u[:, None] * cb[:, -1:]).sum(axis=1), cb.shape[1] - 1)
        sym = geo.g.chain.blocks[nb, -1]
        cur.t[rows] = np.einsum("nij,nj->ni", cur.A[rows], geo.tr[sym]) + cur.t[rows]
        cur.A[rows] = cur.A[rows] @ geo.lin[sym]
        cur.scale[rows] = cur.scale[rows] * geo.ratio[sym]
        cur.block[rows] = nb
        cur.last[rows] = sym
    cur.logm = np.zeros(cur.n)  # equal weights: the draw already followed the masses
    return cur


def _cloud_walk(sys, g, rng, b, steps, points_per_frame, cloud_points) -> SceneryWalk:
    depth = 24
    cloud = sample_measure(sys, g, cloud_points, depth, int(rng.integers(2**63)))
    x = cloud.points[int(rng.integers(cloud.n))]
    x = np.clip(x, 0.0, np.nextafter(1.0, 0.0))
    frames, boxes = [], [BoxIndex(b, 0, (0,) * sys.dim)]
    stop, truncated = steps, False
    for level in range(1, steps + 1):
        box = dyadic_box(x, b, level)
        try:
            frame = minimeasure(cloud, box)
        except EmptyFrameError:
            stop, truncated = level - 1, True
            break
        if frame.measure.n < max(10, points_per_frame // 100):
            stop, truncated = level - 1, True
            break
        if frame.measure.n > points_per_frame:
            frame = ZoomFrame(box, frame.measure.subsample(points_per_frame, rng),
                              frame.parent_mass, frame.log_parent_mass)
        frames.append(frame)
        boxes.append(box)
    return SceneryWalk(frames, boxes, stop, truncated, False)


# ---------------------------------------------------------------------------
# structure verification


@dataclass(frozen=True)
class StructureReport:
    level: int
    index: tuple
    atoms: int  # minimal words whose image lies inside the box
    pairs: int  # (atom, continuation) pairs compared
    ratio_lo: float
    ratio_hi: float
    bracket: tuple  # closed-form quasi-Bernoulli bracket
    inside: bool
    boundary_mass: float  # mass of cylinders still straddling the box boundary
    excluded: bool  # boundary-supported frames are not verified
    certifying: bool  # False for conformal systems (tolerance mode)
    depth: int

    def __str__(self):
        status = "excluded (boundary)" if self.excluded else ("inside" if self.inside else "OUTSIDE")
        mode = "" if self.certifying else ", tolerance mode"
        return (f"level {self.level} box {self.index}: {self.atoms} atoms, ratios "
                f"[{self.ratio_lo:.6g}, {self.ratio_hi:.6g}] vs bracket "
                f"[{self.bracket[0]:.6g}, {self.bracket[1]:.6g}] -> {status}{mode}; "
                f"verified to depth {self.depth}")


def structure_bracket(g: GibbsModel, depth: int) -> tuple:
    c1, c2 = gibbs_ratio_bounds(g, depth)
    return lemma_bracket(c1, c2, variation_sum(g.potential))


def verify_minimeasure_structure(sys: IfsSystem, g: GibbsModel, frame: ZoomFrame, depth: int,
                                 bracket: Optional[tuple] = None, atom_cap: int = 20_000) -> StructureReport:
    """Compare the frame, piece by piece, with scaled copies of the measure.

    Each minimal word w whose image lies in the box carries, inside the
    frame, the measure with cylinder masses mu[wv] / mu(B); the copy of the
    symbolic measure predicts mu[w] mu[v] / mu(B). The ratio of the two is
    mu[wv] / (mu[w] mu[v]) and must stay inside the quasi-Bernoulli bracket.
    Everything is checked for continuations v of length <= depth only.
    """
    if depth < 1:
        raise InputError("depth must be >= 1")
    if bracket is None:
        bracket = structure_bracket(g, max(depth, 2))
    box = frame.box
    eps = float(box.base) ** -box.level / 100  # boundary margin
    if sys.kind == "similarity":
        geo = _CylinderGeometry(sys, g)
        atoms_fr, strad = _resolve_box(geo, box, straddle_size=eps * box.scale, track=True)
        atoms = atoms_fr.words
        boundary = float(np.exp(_logsumexp(strad.logm))) if strad.n else 0.0
        certifying = True
    else:
        atoms, boundary = _conformal_atoms(sys, box, eps)
        certifying = False
    if not atoms:
        raise EmptyFrameError(f"no cylinder fits inside box {box.index} at level {box.level}")
    if len(atoms) > atom_cap:
        raise CapError("atoms in frame", len(atoms), atom_cap)
    excluded = boundary > 0
    lo, hi, pairs = _ratio_range(g, atoms, depth)
    inside = bool(bracket[0] * (1 - 1e-9) <= lo and hi <= bracket[1] * (1 + 1e-9))
    return StructureReport(box.level, box.index, len(atoms), pairs, lo, hi, tuple(bracket),
                           inside, boundary, excluded, certifying, depth)


def _ratio_range(g: GibbsModel, atoms: list, depth: int) -> tuple:
    s = g.system
    conts = [admissible_word_array(s, n) for n in range(1, depth + 1)]
    logv = [g.log_cylinder_mass_array(v) for v in conts]
    lo, hi, pairs = math.inf, -math.inf, 0
    by_len = {}
    for w in atoms:
        by_len.setdefault(len(w), []).append(w)
    for n, ws in by_len.items():
        W = np.asarray(ws, dtype=np.int64)
        lw = g.log_cylinder_mass_array(W)
        for v, lv in zip(conts, logv):
            ok = s.transition[W[:, -1][:, None], v[:, 0][None, :]].astype(bool)
            iw, iv = np.nonzero(ok)
            if iw.size == 0:
                continue
            cat = np.concatenate([W[iw], v[iv]], axis=1)
            r = g.log_cylinder_mass_array(cat) - lw[iw] - lv[iv]
            lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
            pairs += iw.size
    return math.exp(lo), math.exp(hi), pairs


def _conformal_atoms(sys: IfsSystem, box: BoxIndex, eps: float, max_len: int = 14) -> tuple:
    """Minimal words whose code ball fits in the box (tolerance mode, no masses for straddlers)."""
    lo, hi = box.lo, box.hi
    s = sys.symbolic
    atoms = []
    frontier = np.arange(s.alphabet_size)[:, None]
    boundary = 0.0
    for _ in range(max_len):
        if frontier.shape[0] == 0:
            break
        c, r = code_balls(sys, frontier)
        ins = np.all((c - r[:, None] >= lo) & (c + r[:, None] < hi), axis=1)
        out = np.any((c + r[:, None] < lo) | (c - r[:, None] >= hi), axis=1)
        atoms.extend(tuple(int(x) for x in w) for w in frontier[ins])
        strad = frontier[~(ins | out)]
        small = r[~(ins | out)] < eps
        if small.any():
            boundary = 1.0  # unresolved mass near the boundary; flagged, not measured
        strad = strad[~small]
        if strad.shape[0] == 0:
            break
        rows, nxt = np.nonzero(s.transition[strad[:, -1]])
        frontier = np.concatenate([strad[rows], nxt[:, None]], axis=1)
    return atoms, boundary
