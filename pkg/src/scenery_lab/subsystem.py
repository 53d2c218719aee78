"""Strongly separated full-shift subsystems and their Moran exponents.

Pipeline for a given word length k:

1. admissible k-words starting with 0, each with a ball containing its image;
2. greedy Vitali selection of disjoint balls, largest first;
3. each survivor is extended by the shortest connector ending in tau,
   where tau 0 is admissible, so any concatenation of survivors is admissible;
4. the extended words are re-checked for disjointness;
5. t_k solves sum lip_minus(S_w)^t = 1 over the extended words.

t_k is a lower bound for the dimension of the attractor of the induced
full shift, hence of F_A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint

from .exceptions import CapError, DegenerateResultError, InputError, NotTransitiveError
from .ifs import (
    SEPARATION_TOL,
    IfsSystem,
    code_balls,
    lip_bounds_array,
    piece_hulls,
    similarity_arrays,
)
from .symbolic import (
    WORD_CAP,
    SymbolicSystem,
    admissible_word_array,
    full_shift,
    is_transitive,
    shortest_connector,
)

MORAN_TOL = 1e-10


@dataclass(frozen=True)
class BoundingBall:
    word: tuple
    center: np.ndarray
    radius: float


# ---------------------------------------------------------------------------
# Vitali selection


@dataclass(frozen=True, eq=False)
class VitaliSelection:
    accepted: np.ndarray  # indices into the input, in selection order
    blocker: np.ndarray  # for each input ball, the accepted ball that blocked it (self if accepted)

    def inflation(self, centers: np.ndarray, radii: np.ndarray) -> float:
        """Smallest c with every rejected ball inside c times its blocker (1 if none rejected)."""
        rej = np.flatnonzero(self.blocker != np.arange(self.blocker.size))
        if rej.size == 0:
            return 1.0
        b = self.blocker[rej]
        d = np.linalg.norm(centers[rej] - centers[b], axis=1)
        return float(((d + radii[rej]) / radii[b]).max())


def _balls_disjoint(d: np.ndarray, r1, r2) -> np.ndarray:
    """Closed balls are disjoint iff the centre distance beats the radius sum (relative slack 1e-12)."""
    return d > (r1 + r2) * (1 + 1e-12)


def vitali_order(radii: np.ndarray, keys: Optional[np.ndarray] = None) -> np.ndarray:
    """Nonincreasing radius; ties by ``keys`` rows (lexicographic), else by input index."""
    if keys is None:
        return np.argsort(-radii, kind="stable")
    keys = np.asarray(keys)
    cols = [keys[:, j] for j in range(keys.shape[1] - 1, -1, -1)]
    return np.lexsort(cols + [-radii])


def conflict_graph(centers: np.ndarray, radii: np.ndarray) -> tuple:
    """CSR adjacency (indptr, indices) of the pairs of intersecting closed balls."""
    n = radii.size
    tree = cKDTree(centers)
    pairs = tree.query_pairs(2 * radii.max() * (1 + 1e-9), output_type="ndarray")
    if pairs.size:
        d = np.sqrt(((centers[pairs[:, 0]] - centers[pairs[:, 1]]) ** 2).sum(axis=1))
        pairs = pairs[~_balls_disjoint(d, radii[pairs[:, 0]], radii[pairs[:, 1]])]
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(n, n)).tocsr()
    return adj.indptr.astype(np.int64), adj.indices.astype(np.int64)


def vitali_select(centers, radii, keys=None) -> VitaliSelection:
    """Greedy selection: accept a ball iff it misses every ball accepted before it."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 1:
        centers = centers[:, None]
    radii = np.asarray(radii, dtype=float)
    n = radii.size
    if n == 0:
        raise InputError("no balls to select from")
    if np.any(radii < 0):
        raise InputError("negative radius")
    order = vitali_order(radii, keys)
    indptr, nbrs = conflict_graph(centers, radii)
    blocker = np.full(n, -1, dtype=np.int64)
    isolated = (indptr[1:] == indptr[:-1]).tolist()
    bounds = indptr.tolist()
    taken = bytearray(n)  # fast scalar reads; numpy view for vector writes
    taken_np = np.frombuffer(taken, dtype=np.uint8)
    accepted = []
    for i in order.tolist():
        if taken[i]:
            continue
        accepted.append(i)
        taken[i] = 1
        blocker[i] = i
        if isolated[i]:
            continue
        nb = nbrs[bounds[i] : bounds[i + 1]]
        nb = nb[taken_np[nb] == 0]
        blocker[nb] = i
        taken_np[nb] = 1
    return VitaliSelection(np.asarray(accepted, dtype=np.int64), blocker)


def select_balls(balls: Sequence[BoundingBall]) -> list:
    """Vitali selection on BoundingBall objects; returns the accepted ones in selection order."""
    if not balls:
        raise InputError("no balls to select from")
    centers = np.stack([np.atleast_1d(b.center) for b in balls])
    radii = np.array([b.radius for b in balls])
    width = max(len(b.word) for b in balls)
    keys = np.full((len(balls), width), -1, dtype=np.int64)
    for i, b in enumerate(balls):
        keys[i, : len(b.word)] = b.word
    sel = vitali_select(centers, radii, keys)
    return [balls[i] for i in sel.accepted]


def check_3b(centers, radii, accepted) -> bool:
    """Exhaustive check: every rejected ball lies inside 3x some accepted ball it meets."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 1:
        centers = centers[:, None]
    radii = np.asarray(radii, dtype=float)
    acc = np.asarray(accepted, dtype=np.int64)
    rej = np.setdiff1d(np.arange(radii.size), acc)
    if rej.size == 0:
        return True
    d = np.linalg.norm(centers[rej][:, None, :] - centers[acc][None, :, :], axis=2)
    inside = d + radii[rej][:, None] <= 3 * radii[acc][None, :] * (1 + 1e-12)
    return bool(inside.any(axis=1).all())


# ---------------------------------------------------------------------------
# tau extension and Moran exponent


def default_tau(s: SymbolicSystem) -> int:
    col = np.flatnonzero(s.transition[:, 0])
    if col.size == 0:
        raise NotTransitiveError("no symbol may precede 0")
    return int(col[0])


def connectors(s: SymbolicSystem, tau: int) -> list:
    return [shortest_connector(s, i, tau) for i in range(s.alphabet_size)]


def extend_to_tau(s: SymbolicSystem, words, tau: int) -> tuple:
    """Append to each word the shortest connector from its last symbol to tau.

    Returns the extended words (list of tuples) and K, the longest connector used.
    """
    if not 0 <= tau < s.alphabet_size:
        raise InputError(f"tau {tau} outside alphabet")
    con = connectors(s, tau)
    out = []
    k_max = 0
    for w in words:
        w = tuple(int(x) for x in w)
        j = con[w[-1]]
        k_max = max(k_max, len(j))
        out.append(w + j)
    return out, k_max


def moran_exponent(lips, dim: int = 2) -> float:
    """Unique t >= 0 with sum lips^t = 1, by bisection on [0, 2 dim]."""
    lips = np.asarray(lips, dtype=float).ravel()
    if lips.size == 0:
        raise InputError("need at least one contraction")
    if np.any(lips <= 0) or np.any(lips >= 1):
        raise InputError("contraction values must lie in (0, 1)")
    logs = np.log(lips)

    def excess(t):  # log sum lips^t, decreasing in t
        a = t * logs
        top = a.max()
        return top + math.log(np.exp(a - top).sum())

    lo, hi = 0.0, 2.0 * dim
    if excess(hi) > 0:
        raise InputError(f"sum of lips^t still exceeds 1 at t = {hi}")
    if lips.size == 1:
        return 0.0
    # bisect well past MORAN_TOL so that the sum itself is within 1e-10 of 1
    while hi - lo > 1e-15 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# extraction


@dataclass(frozen=True)
class DisjointnessCertificate:
    passed: bool
    n_words: int
    candidate_pairs: int  # pairs whose coarse balls met and needed an exact test
    method: str
    pair: Optional[tuple] = None

    def __str__(self):
        if self.passed:
            return f"PASS ({self.n_words} words, {self.candidate_pairs} exact pair tests, {self.method})"
        return f"FAIL (pair {self.pair})"


@dataclass(frozen=True, eq=False)
class SubsystemResult:
    k: int
    tau: int
    words: list = field(repr=False)
    lip_minus: np.ndarray = field(repr=False)
    lip_plus: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    t_k: float
    separation: DisjointnessCertificate
    cover_constant: float
    cover_inflation: float
    connector_bound: int
    n_candidates: int
    dropped_uncertified: int = 0

    @property
    def n_words(self) -> int:
        return len(self.words)

    def moran_sum(self) -> float:
        return float(np.sum(self.lip_minus**self.t_k))


def _extend_array(s: SymbolicSystem, base: np.ndarray, tau: int) -> tuple:
    """Array form of :func:`extend_to_tau`: groups (rows, words) of equal extended length, and K."""
    con = connectors(s, tau)
    lens = np.array([len(c) for c in con])
    need = lens[base[:, -1]]
    groups = []
    for n in np.unique(need):
        rows = np.flatnonzero(need == n)
        table = np.zeros((s.alphabet_size, n), dtype=np.int64)
        for i, c in enumerate(con):
            if len(c) == n:
                table[i] = c
        groups.append((rows, np.concatenate([base[rows], table[base[rows, -1]]], axis=1)))
    return groups, int(need.max())


def _gather(groups: list, n: int, fn) -> list:
    """Run a vectorized per-word function group by group and reassemble in row order."""
    parts = None
    for rows, arr in groups:
        res = fn(arr)
        if parts is None:
            parts = [np.empty((n,) + np.shape(r)[1:], dtype=np.asarray(r).dtype) for r in res]
        for p, r in zip(parts, res):
            p[rows] = r
    return parts


def _as_tuples(groups: list, n: int) -> list:
    out = [None] * n
    for rows, arr in groups:
        for r, w in zip(rows.tolist(), arr.tolist()):
            out[r] = tuple(w)
    return out


def _certify(sys: IfsSystem, groups: list, words: list, centers, radii) -> DisjointnessCertificate:
    """Pairwise disjointness of the final word images.

    Coarse balls shortlist candidate pairs; for similarities each candidate
    is then tested on the exact images of the convex region containing
    F_A^0 (every word starts with 0), for conformal systems the certified
    balls themselves are the test.
    """
    n = len(words)
    tree = cKDTree(centers)
    pairs = tree.query_pairs(2 * float(radii.max()) * (1 + 1e-9), output_type="ndarray")
    if pairs.size:
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        d = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
        pairs = pairs[~_balls_disjoint(d, radii[pairs[:, 0]], radii[pairs[:, 1]])]
    if pairs.size == 0:
        return DisjointnessCertificate(True, n, 0, "balls")
    if sys.kind != "similarity":
        a, b = pairs[0]
        return DisjointnessCertificate(False, n, len(pairs), "balls", (words[a], words[b]))
    hull0 = piece_hulls(sys)[0]
    if sys.dim == 1:
        verts = np.array([[hull0[0]], [hull0[1]]])
    else:
        verts = np.asarray(hull0.exterior.coords)[:-1]
    L, t = _gather(groups, n, lambda arr: similarity_arrays(sys, arr))
    for a, b in pairs.tolist():
        pa = verts @ L[a].T + t[a]
        pb = verts @ L[b].T + t[b]
        if sys.dim == 1:
            gap = max(pb.min() - pa.max(), pa.min() - pb.max())
        else:
            ha, hb = MultiPoint(pa).convex_hull, MultiPoint(pb).convex_hull
            gap = -1.0 if ha.intersects(hb) else ha.distance(hb)
        if gap <= SEPARATION_TOL:
            return DisjointnessCertificate(False, n, len(pairs), "exact images", (words[a], words[b]))
    return DisjointnessCertificate(True, n, len(pairs), "exact images")


def extract(sys: IfsSystem, k: int, tau: Optional[int] = None, cap: int = WORD_CAP) -> SubsystemResult:
    s = sys.symbolic
    if k < 1:
        raise InputError("k must be >= 1")
    if not is_transitive(s):
        raise NotTransitiveError("extraction needs an irreducible transition matrix")
    tau = default_tau(s) if tau is None else int(tau)
    if not 0 <= tau < s.alphabet_size or not s.transition[tau, 0]:
        raise InputError(f"tau={tau} is not a symbol followed by 0")
    words = admissible_word_array(s, k, first=0, cap=cap)
    lo, hi, ok = lip_bounds_array(sys, words)
    dropped = int((~ok).sum())
    words, lo, hi = words[ok], lo[ok], hi[ok]
    if words.shape[0] == 0:
        raise DegenerateResultError("no word has certified Lipschitz bounds")
    centers, radii = code_balls(sys, words, hi)
    # rows are already lexicographic, so index order breaks radius ties
    sel = vitali_select(centers, radii)
    inflation = sel.inflation(centers, radii)
    chosen = np.sort(sel.accepted)
    groups, kbound = _extend_array(s, words[chosen], tau)
    n = chosen.size
    e_lo, e_hi, e_ok = _gather(groups, n, lambda arr: lip_bounds_array(sys, arr))
    if not e_ok.all():
        keep = np.flatnonzero(e_ok)
        dropped += n - keep.size
        remap = np.full(n, -1)
        remap[keep] = np.arange(keep.size)
        groups = [(remap[r[e_ok[r]]], a[e_ok[r]]) for r, a in groups]
        groups = [(r, a) for r, a in groups if r.size]
        chosen, e_lo, e_hi, n = chosen[keep], e_lo[keep], e_hi[keep], keep.size
    if n == 0:
        raise DegenerateResultError("selection is empty after certification")
    e_c, e_r = _gather(groups, n, lambda arr: code_balls(sys, arr, lip_bounds_array(sys, arr)[1]))
    ext = _as_tuples(groups, n)
    cert = _certify(sys, groups, ext, e_c, e_r)
    t_k = moran_exponent(e_lo, sys.dim)
    connector_factor = float((hi[chosen] / e_lo).max())
    return SubsystemResult(
        k=k, tau=tau, words=ext, lip_minus=e_lo, lip_plus=e_hi, centers=e_c, radii=e_r,
        t_k=t_k, separation=cert, cover_constant=max(inflation, 1.0) * connector_factor,
        cover_inflation=inflation, connector_bound=kbound, n_candidates=int(words.shape[0]),
        dropped_uncertified=dropped,
    )


def induced_system(sys: IfsSystem, result: SubsystemResult) -> IfsSystem:
    """The full-shift similarity system {S_w : w in the extracted alphabet}."""
    if sys.kind != "similarity":
        raise InputError("induced systems are built for similarities only")
    maps = []
    for w in result.words:
        m = sys.maps[w[0]]
        for i in w[1:]:
            m = m.then(sys.maps[i])
        maps.append(m)
    return IfsSystem(full_shift(len(maps)), tuple(maps), sys.domain, name=f"{sys.name}[k={result.k}]")


@dataclass(frozen=True, eq=False)
class DimensionApproximation:
    t_best: float
    k_best: int
    result: SubsystemResult
    t_by_k: dict  # k -> t_k
    running_best: dict  # k -> max t_j over j <= k
    oracle: Optional[float]
    met: Optional[bool]  # t_best >= oracle - eps, when an oracle exists
    exhausted: bool  # a cap stopped the search before k_max


def approximate_dimension(sys: IfsSystem, eps: float, k_max: int, k_min: int = 2,
                          cap: int = WORD_CAP) -> DimensionApproximation:
    if eps <= 0:
        raise InputError("eps must be positive")
    if k_max < k_min:
        raise InputError("k_max must be >= k_min")
    t_by_k, running, best = {}, {}, None
    exhausted = False
    for k in range(k_min, k_max + 1):
        try:
            res = extract(sys, k, cap=cap)
        except CapError:
            exhausted = True
            break
        t_by_k[k] = res.t_k
        if best is None or res.t_k > best.t_k:
            best = res
        running[k] = best.t_k
    if best is None:
        raise DegenerateResultError("no extraction fit inside the caps")
    oracle = sys.oracle_dimension
    met = None if oracle is None else bool(best.t_k >= oracle - eps)
    return DimensionApproximation(best.t_k, best.k, best, t_by_k, running, oracle, met, exhausted)
