"""Locally constant potentials, pressure and Markov-Gibbs measures on a subshift.

A potential of depth ``m`` is a table on admissible ``m``-words. Everything
is recoded onto the chain of admissible blocks of length ``max(m - 1, 1)``,
where the potential becomes a weight on block transitions. The pressure is
the log of the Perron root of that weighted matrix, and the invariant Gibbs
measure is the stationary Markov chain built from its Perron vectors.

Finite-depth checks (Gibbs constants, quasi-Bernoulli ratios) are empirical:
they hold for the enumerated depth and nothing is claimed beyond it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import CapError, InputError, NotMixingError, NotTransitiveError
from .symbolic import (
    WORD_CAP,
    SymbolicSystem,
    admissible_word_array,
    admissible_words,
    count_words,
    is_admissible,
    is_mixing,
    is_transitive,
    period,
)

POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000
BLOCK_CAP = 10**6
PAIR_CAP = 5 * 10**6


@dataclass(frozen=True)
class Potential:
    """phi(alpha) = table[alpha[:depth]]."""

    depth: int
    table: Mapping[tuple, float] = field(repr=False)

    def __post_init__(self):
        if self.depth < 1:
            raise InputError("potential depth must be >= 1")
        clean = {}
        for k, v in dict(self.table).items():
            k = tuple(int(x) for x in k)
            if len(k) != self.depth:
                raise InputError(f"table key {k} has length {len(k)}, expected {self.depth}")
            v = float(v)
            if not math.isfinite(v):
                raise InputError(f"table value for {k} is not finite")
            clean[k] = v
        object.__setattr__(self, "table", clean)

    def check(self, s: SymbolicSystem) -> None:
        expected = set(admissible_words(s, self.depth))
        got = set(self.table)
        missing, extra = expected - got, got - expected
        if missing or extra:
            raise InputError(
                f"potential table must cover exactly the admissible {self.depth}-words; "
                f"missing {sorted(missing)[:5]}, inadmissible {sorted(extra)[:5]}"
            )

    def __call__(self, w: Sequence[int]) -> float:
        return self.table[tuple(w[: self.depth])]

    def shifted(self, c: float) -> "Potential":
        return Potential(self.depth, {k: v + c for k, v in self.table.items()})

    def scaled(self, t: float) -> "Potential":
        return Potential(self.depth, {k: t * v for k, v in self.table.items()})

    def lookup(self, alphabet_size: int) -> np.ndarray:
        """Dense array indexed by the base-M code of an m-word; NaN off the table."""
        size = alphabet_size**self.depth
        if size > BLOCK_CAP:
            raise CapError("potential lookup table", size, BLOCK_CAP)
        out = np.full(size, np.nan)
        for k, v in self.table.items():
            out[_encode(k, alphabet_size)] = v
        return out


def _encode(w: Sequence[int], m: int) -> int:
    code = 0
    for x in w:
        code = code * m + int(x)
    return code


def _encode_rows(words: np.ndarray, m: int) -> np.ndarray:
    code = np.zeros(words.shape[0], dtype=np.int64)
    for j in range(words.shape[1]):
        code = code * m + words[:, j]
    return code


def symbol_potential(values: Sequence[float]) -> Potential:
    return Potential(1, {(i,): v for i, v in enumerate(values)})


def bernoulli_potential(probs: Sequence[float]) -> Potential:
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or abs(probs.sum() - 1) > 1e-12:
        raise InputError("Bernoulli weights must be positive and sum to 1")
    return symbol_potential(np.log(probs))


def constant_potential(s: SymbolicSystem, c: float = 0.0) -> Potential:
    return Potential(1, {(i,): c for i in range(s.alphabet_size)})


def geometric_potential(ratios: Sequence[float], t: float) -> Potential:
    """phi(i) = t log r_i, whose zero-pressure t is the similarity dimension."""
    return symbol_potential(t * np.log(np.asarray(ratios, dtype=float)))


def markov_potential(s: SymbolicSystem, probs: np.ndarray) -> Potential:
    probs = np.asarray(probs, dtype=float)
    table = {}
    for i, j in zip(*np.nonzero(s.transition)):
        if probs[i, j] <= 0:
            raise InputError(f"transition probability ({i},{j}) must be positive on allowed edges")
        table[(int(i), int(j))] = math.log(probs[i, j])
    return Potential(2, table)


def variation(p: Potential, n: int) -> float:
    """Largest oscillation of phi over cylinders of length ``n``."""
    if n < 0:
        raise InputError("variation index must be >= 0")
    if n >= p.depth:
        return 0.0
    groups = {}
    for k, v in p.table.items():
        lo, hi = groups.get(k[:n], (v, v))
        groups[k[:n]] = (min(lo, v), max(hi, v))
    return max(hi - lo for lo, hi in groups.values())


def variation_sum(p: Potential) -> float:
    """sum_{l >= 0} var_l(phi); finite because var_l = 0 from l = depth on."""
    return sum(variation(p, n) for n in range(p.depth))


def birkhoff_sum(p: Potential, w: Sequence[int]) -> float:
    """sum_{l=0}^{n-1} phi(sigma^l alpha) with n = |w| - depth + 1 (all windows inside w)."""
    w = tuple(int(x) for x in w)
    m = p.depth
    if len(w) < m:
        raise InputError(f"word of length {len(w)} shorter than potential depth {m}")
    total = 0.0
    for l in range(len(w) - m + 1):
        try:
            total += p.table[w[l : l + m]]
        except KeyError:
            raise InputError(f"window {w[l:l + m]} is not an admissible {m}-word") from None
    return total


# ---------------------------------------------------------------------------
# block recoding and Perron data


@dataclass(frozen=True, eq=False)
class BlockChain:
    """Admissible blocks of length ``ell`` and the weighted block-transition matrix."""

    ell: int
    blocks: np.ndarray  # (nb, ell)
    index: np.ndarray  # base-M code -> block index or -1
    weights: np.ndarray  # (nb, nb) nonnegative
    allowed: np.ndarray  # (nb, nb) 0/1


def block_chain(s: SymbolicSystem, p: Potential) -> BlockChain:
    p.check(s)
    m_sym = s.alphabet_size
    ell = max(p.depth - 1, 1)
    blocks = admissible_word_array(s, ell, cap=BLOCK_CAP)
    nb = blocks.shape[0]
    if m_sym**ell > BLOCK_CAP:
        raise CapError("block index", m_sym**ell, BLOCK_CAP)
    index = np.full(m_sym**ell, -1, dtype=np.int64)
    index[_encode_rows(blocks, m_sym)] = np.arange(nb)
    allowed = np.zeros((nb, nb), dtype=np.int64)
    weights = np.zeros((nb, nb))
    for b in range(nb):
        blk = tuple(int(x) for x in blocks[b])
        for j in s.followers(blk[-1]):
            nxt = blk[1:] + (int(j),) if ell > 1 else (int(j),)
            c = index[_encode(nxt, m_sym)]
            if c < 0:
                continue
            if p.depth == 1:
                val = p.table[blk]
            else:
                val = p.table[blk + (int(j),)]
            allowed[b, c] = 1
            weights[b, c] = math.exp(val)
    return BlockChain(ell, blocks, index, weights, allowed)


def perron(weights: np.ndarray, shift: float = 0.0, tol: float = POWER_TOL,
           max_iter: int = POWER_MAX_ITER) -> tuple:
    """Power iteration for the Perron root and right vector of a nonnegative matrix.

    Iterates on ``W/scale + shift*I``; stops when the Collatz-Wielandt bracket
    ``min (Bx)_i/x_i <= rho(B) <= max (Bx)_i/x_i`` is relatively tighter than
    ``tol``. A positive shift makes an irreducible periodic matrix primitive.
    """
    n = weights.shape[0]
    scale = weights.sum(axis=1).max()
    b = weights / scale + shift * np.eye(n)
    x = np.ones(n) / n
    lo = hi = float("nan")
    for _ in range(max_iter):
        y = b @ x
        ratio = y / x
        lo, hi = ratio.min(), ratio.max()
        x = y / y.sum()
        if hi - lo <= tol * lo:
            break
    else:
        raise RuntimeError(f"power iteration did not reach {tol} in {max_iter} steps "
                           f"(bracket [{lo}, {hi}])")
    rho = 0.5 * (lo + hi) - shift
    return rho * scale, x


def _needs_shift(chain: BlockChain) -> float:
    return 0.0 if is_mixing(SymbolicSystem(chain.allowed)) else 1.0


def pressure(s: SymbolicSystem, p: Potential) -> float:
    """log of the spectral radius of the weighted (block) transition matrix."""
    if not is_transitive(s):
        raise NotTransitiveError("pressure needs an irreducible transition matrix")
    chain = block_chain(s, p)
    rho, _ = perron(chain.weights, shift=_needs_shift(chain))
    return math.log(rho)


def sup_birkhoff_array(s: SymbolicSystem, p: Potential, words: np.ndarray) -> np.ndarray:
    """sup of phi^n over each cylinder [w] (n = |w|), maximizing over the unseen tail."""
    m_sym = s.alphabet_size
    m = p.depth
    n = words.shape[1]
    look = p.lookup(m_sym)
    total = np.zeros(words.shape[0])
    for l in range(0, n - m + 1):
        total += look[_encode_rows(words[:, l : l + m], m_sym)]
    if m == 1:
        return total
    j = min(n, m - 1)
    tail = _tail_sup(s, p, j)
    suffix = words[:, n - j :]
    return total + tail[_encode_rows(suffix, m_sym)]


def _tail_sup(s: SymbolicSystem, p: Potential, j: int) -> np.ndarray:
    """G(u) for |u| = j: max over admissible e (|e| = m-1) of the windows starting in u."""
    m_sym, m = s.alphabet_size, p.depth
    out = np.full(m_sym**j, np.nan)
    exts = admissible_words(s, m - 1, cap=BLOCK_CAP)
    for u in admissible_words(s, j, cap=BLOCK_CAP):
        best = -np.inf
        for e in exts:
            if not s.transition[u[-1], e[0]]:
                continue
            ue = u + e
            val = sum(p.table[ue[l : l + m]] for l in range(j))
            best = max(best, val)
        out[_encode(u, m_sym)] = best
    return out


def partition_pressure(s: SymbolicSystem, p: Potential, n: int, cap: int = WORD_CAP) -> float:
    """(1/n) log sum over admissible n-words of exp(sup phi^n); converges to the pressure."""
    words = admissible_word_array(s, n, cap=cap)
    sup = sup_birkhoff_array(s, p, words)
    top = sup.max()
    return (top + math.log(np.exp(sup - top).sum())) / n


# ---------------------------------------------------------------------------
# Gibbs model


@dataclass(frozen=True, eq=False)
class GibbsModel:
    """Invariant Markov-Gibbs measure for a locally constant potential."""

    system: SymbolicSystem
    potential: Potential
    pressure: float
    chain: BlockChain = field(repr=False)
    block_stationary: np.ndarray = field(repr=False)
    block_transition: np.ndarray = field(repr=False)
    stationary: np.ndarray = field(repr=False)

    @property
    def block_length(self) -> int:
        return self.chain.ell

    def block_ids(self, words: np.ndarray) -> np.ndarray:
        """Block index of every length-ell window: shape (n, k - ell + 1); -1 if inadmissible."""
        m_sym = self.system.alphabet_size
        ell = self.chain.ell
        k = words.shape[1]
        out = np.empty((words.shape[0], k - ell + 1), dtype=np.int64)
        for l in range(k - ell + 1):
            out[:, l] = self.chain.index[_encode_rows(words[:, l : l + ell], m_sym)]
        return out

    def log_cylinder_mass_array(self, words: np.ndarray) -> np.ndarray:
        words = np.asarray(words, dtype=np.int64)
        if words.ndim != 2 or words.shape[1] == 0:
            raise InputError("words must be a nonempty 2-d array")
        if words.min() < 0 or words.max() >= self.system.alphabet_size:
            raise InputError("symbol outside alphabet")
        ell = self.chain.ell
        if words.shape[1] < ell:
            return np.array([math.log(m) if m > 0 else -np.inf
                             for m in (self._short_mass(tuple(w)) for w in words.tolist())])
        ids = self.block_ids(words)
        bad = (ids < 0).any(axis=1)
        ids = np.where(ids < 0, 0, ids)
        with np.errstate(divide="ignore"):
            logp = np.log(self.block_transition)
            out = np.log(self.block_stationary[ids[:, 0]])
        for l in range(ids.shape[1] - 1):
            out = out + logp[ids[:, l], ids[:, l + 1]]
        out[bad] = -np.inf
        return out

    def _short_mass(self, w: tuple) -> float:
        ell = self.chain.ell
        blocks = self.chain.blocks
        hit = np.all(blocks[:, : len(w)] == np.asarray(w), axis=1)
        return float(self.block_stationary[hit].sum())

    def cylinder_mass(self, w: Sequence[int]) -> float:
        w = tuple(int(x) for x in w)
        if not w:
            return 1.0
        if not is_admissible(w, self.system):
            return 0.0
        return float(math.exp(self.log_cylinder_mass_array(np.asarray([w]))[0]))

    def sample_words(self, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
        """n independent length-k words distributed by the cylinder masses."""
        ell = self.chain.ell
        cdf0 = np.cumsum(self.block_stationary)
        b = np.minimum(np.searchsorted(cdf0, rng.random(n) * cdf0[-1], side="right"),
                       len(cdf0) - 1)
        first = self.chain.blocks[b]
        if k <= ell:
            return first[:, :k].copy()
        tail = self._walk(b, k - ell, rng)
        return np.concatenate([first, tail], axis=1)

    def extend_words(self, words: np.ndarray, extra: int, rng: np.random.Generator) -> np.ndarray:
        """Continue each word (length >= ell) by ``extra`` symbols of the chain."""
        ids = self.block_ids(words[:, -self.chain.ell :])[:, 0]
        if np.any(ids < 0):
            raise InputError("cannot extend an inadmissible word")
        if extra == 0:
            return words
        return np.concatenate([words, self._walk(ids, extra, rng)], axis=1)

    def _walk(self, b: np.ndarray, steps: int, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.block_transition, axis=1)
        out = np.empty((b.shape[0], steps), dtype=np.int64)
        nb = cdf.shape[0]
        for j in range(steps):
            u = rng.random(b.shape[0])
            rows = cdf[b]
            b = np.minimum((rows < u[:, None] * rows[:, -1:]).sum(axis=1), nb - 1)
            out[:, j] = self.chain.blocks[b, -1]
        return out

    def entropy_rate(self) -> float:
        p = self.block_transition
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(p), 0.0)
        return float(-(self.block_stationary * terms.sum(axis=1)).sum())


def build_gibbs(s: SymbolicSystem, p: Potential) -> GibbsModel:
    """Stationary Markov measure from the left/right Perron vectors of the weighted chain."""
    if not is_transitive(s):
        raise NotTransitiveError("Gibbs construction needs an irreducible matrix")
    if not is_mixing(s):
        raise NotMixingError(f"transition matrix is periodic with period {period(s)}; "
                             "the invariant Gibbs measure is not constructed for non-mixing shifts")
    chain = block_chain(s, p)
    rho, right = perron(chain.weights)
    _, left = perron(chain.weights.T)
    trans = chain.weights * right[None, :] / (rho * right[:, None])
    trans /= trans.sum(axis=1, keepdims=True)
    pi = left * right
    pi /= pi.sum()
    m_sym = s.alphabet_size
    stationary = np.zeros(m_sym)
    np.add.at(stationary, chain.blocks[:, 0], pi)
    return GibbsModel(s, p, math.log(rho), chain, pi, trans, stationary)


def parry_measure(s: SymbolicSystem) -> GibbsModel:
    return build_gibbs(s, constant_potential(s, 0.0))


# ---------------------------------------------------------------------------
# finite-depth verification of the Gibbs and quasi-Bernoulli inequalities


def _words_upto(s: SymbolicSystem, depth: int, cap: int) -> list:
    total = sum(count_words(s, n) for n in range(1, depth + 1))
    if total > cap:
        raise CapError(f"admissible words up to length {depth}", total, cap)
    return [admissible_word_array(s, n, cap=cap) for n in range(1, depth + 1)]


@dataclass(frozen=True)
class GibbsBounds:
    c1: float
    c2: float
    depth: int

    def __iter__(self):
        return iter((self.c1, self.c2))


def gibbs_ratio_bounds(g: GibbsModel, depth: int, cap: int = WORD_CAP) -> GibbsBounds:
    """min/max of mu[w] / exp(sup phi^n - n P) over admissible words, 1 <= |w| <= depth.

    Verified to ``depth`` only.
    """
    lo, hi = np.inf, -np.inf
    for n, words in enumerate(_words_upto(g.system, depth, cap), start=1):
        logr = g.log_cylinder_mass_array(words) - (
            sup_birkhoff_array(g.system, g.potential, words) - n * g.pressure
        )
        lo, hi = min(lo, logr.min()), max(hi, logr.max())
    return GibbsBounds(math.exp(lo), math.exp(hi), depth)


def quasi_bernoulli_ratio(g: GibbsModel, depth: int, cap: int = PAIR_CAP) -> tuple:
    """min/max of mu[uv] / (mu[u] mu[v]) over |u|, |v| <= depth with uv admissible."""
    levels = _words_upto(g.system, depth, WORD_CAP)
    logm = [g.log_cylinder_mass_array(w) for w in levels]
    a = g.system.transition
    pairs = 0
    for u in levels:
        first_counts = np.bincount(np.concatenate([v[:, 0] for v in levels]),
                                   minlength=g.system.alphabet_size)
        pairs += int((a[u[:, -1]] @ first_counts).sum())
    if pairs > cap:
        raise CapError(f"quasi-Bernoulli pairs up to depth {depth}", pairs, cap)
    lo, hi = np.inf, -np.inf
    for u, lu in zip(levels, logm):
        for v, lv in zip(levels, logm):
            ok = a[u[:, -1][:, None], v[:, 0][None, :]].astype(bool)
            iu, iv = np.nonzero(ok)
            if iu.size == 0:
                continue
            for start in range(0, iu.size, 200_000):
                su, sv = iu[start : start + 200_000], iv[start : start + 200_000]
                cat = np.concatenate([u[su], v[sv]], axis=1)
                r = g.log_cylinder_mass_array(cat) - lu[su] - lv[sv]
                lo, hi = min(lo, r.min()), max(hi, r.max())
    return math.exp(lo), math.exp(hi)


def lemma_bracket(c1: float, c2: float, var_sum: float) -> tuple:
    """((C1/C2^2) e^{-V}, (C2/C1^2) e^{V}) with V = sum of variations."""
    return (c1 / c2**2) * math.exp(-var_sum), (c2 / c1**2) * math.exp(var_sum)
