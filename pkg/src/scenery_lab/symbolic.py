"""Finite words and one-sided subshifts of finite type.

Words are plain tuples of ints. Bulk enumeration returns 2-d integer arrays
(one word per row) because every downstream kernel is vectorized over words.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import CapError, InputError, NoPathError

Word = tuple

#: default refusal threshold for word enumeration
WORD_CAP = 10**7


@dataclass(frozen=True, eq=False)
class SymbolicSystem:
    """Alphabet ``{0, ..., M-1}`` with a 0/1 transition matrix.

    The all-ones matrix is the full shift. Zero rows or columns are
    rejected: pruning them silently would change the shift space.
    """

    transition: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.transition)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise InputError(f"transition matrix must be square and nonempty, got shape {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise InputError("transition matrix entries must be 0 or 1")
        a = a.astype(np.int64)
        dead_rows = np.flatnonzero(a.sum(axis=1) == 0)
        dead_cols = np.flatnonzero(a.sum(axis=0) == 0)
        if dead_rows.size or dead_cols.size:
            raise InputError(
                f"dead symbols: rows {dead_rows.tolist()} / columns {dead_cols.tolist()} are all zero"
            )
        a.setflags(write=False)
        object.__setattr__(self, "transition", a)

    @property
    def alphabet_size(self) -> int:
        return self.transition.shape[0]

    @property
    def is_full_shift(self) -> bool:
        return bool(np.all(self.transition == 1))

    def followers(self, symbol: int) -> np.ndarray:
        return np.flatnonzero(self.transition[symbol])

    def __eq__(self, other):
        return isinstance(other, SymbolicSystem) and np.array_equal(self.transition, other.transition)

    def __hash__(self):
        return hash(self.transition.tobytes())

    def __repr__(self):
        return f"SymbolicSystem({self.transition.tolist()})"


def full_shift(m: int) -> SymbolicSystem:
    return SymbolicSystem(np.ones((m, m), dtype=np.int64))


def check_word(w: Sequence[int], s: SymbolicSystem) -> Word:
    w = tuple(int(x) for x in w)
    if len(w) == 0:
        raise InputError("words must be nonempty")
    bad = [x for x in w if x < 0 or x >= s.alphabet_size]
    if bad:
        raise InputError(f"symbols {bad} outside alphabet of size {s.alphabet_size}")
    return w


def is_admissible(w: Sequence[int], s: SymbolicSystem) -> bool:
    w = check_word(w, s)
    a = s.transition
    return all(a[x, y] == 1 for x, y in zip(w[:-1], w[1:]))


def _reachability(a: np.ndarray) -> np.ndarray:
    """reach[i, j] true iff a path of length >= 1 leads from i to j."""
    m = a.shape[0]
    reach = a.astype(bool)
    for _ in range(m):
        nxt = reach | ((reach.astype(np.int64) @ a) > 0)
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return reach


def is_transitive(s: SymbolicSystem) -> bool:
    return bool(np.all(_reachability(s.transition)))


def is_mixing(s: SymbolicSystem) -> bool:
    """Aperiodicity: some power n <= M^2 of the matrix is entrywise positive."""
    a = s.transition
    m = a.shape[0]
    p = a.astype(bool)
    for _ in range(m * m):
        if p.all():
            return True
        p = (p.astype(np.int64) @ a) > 0
    return bool(p.all())


def period(s: SymbolicSystem) -> int:
    """Period of an irreducible matrix (gcd of cycle lengths); 1 means mixing."""
    from math import gcd

    a = s.transition
    m = a.shape[0]
    # BFS levels from symbol 0; period = gcd of level[i] + 1 - level[j] over edges i->j
    level = [-1] * m
    level[0] = 0
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(a[i]):
            if level[j] < 0:
                level[j] = level[i] + 1
                queue.append(j)
    g = 0
    for i in range(m):
        for j in np.flatnonzero(a[i]):
            if level[i] >= 0 and level[j] >= 0:
                g = gcd(g, level[i] + 1 - level[j])
    return abs(g)


def count_words(s: SymbolicSystem, k: int, first: Optional[int] = None) -> int:
    """Number of admissible k-words, via ``1^T A^(k-1) 1`` (exact integers)."""
    if k < 1:
        raise InputError("word length must be >= 1")
    a = s.transition.astype(object)
    m = s.alphabet_size
    v = np.ones(m, dtype=object)
    for _ in range(k - 1):
        v = a.dot(v)
    if first is None:
        return int(sum(v))
    if not 0 <= first < m:
        raise InputError(f"first symbol {first} outside alphabet")
    return int(v[first])


def admissible_word_array(
    s: SymbolicSystem, k: int, first: Optional[int] = None, cap: int = WORD_CAP
) -> np.ndarray:
    """Admissible words of length ``k`` as rows of an int array, lexicographic order."""
    n = count_words(s, k, first)
    if n > cap:
        raise CapError(f"admissible words of length {k}", n, cap)
    a = s.transition
    if first is None:
        words = np.arange(s.alphabet_size, dtype=np.int64)[:, None]
    else:
        words = np.array([[first]], dtype=np.int64)
    for _ in range(k - 1):
        last = words[:, -1]
        rows, nxt = np.nonzero(a[last])  # row-major: preserves lexicographic order
        words = np.concatenate([words[rows], nxt[:, None]], axis=1)
    return words


def admissible_words(
    s: SymbolicSystem, k: int, first: Optional[int] = None, cap: int = WORD_CAP
) -> list:
    return [tuple(int(x) for x in row) for row in admissible_word_array(s, k, first, cap)]


def incomparable(u: Sequence[int], v: Sequence[int]) -> bool:
    """True iff neither word is a prefix of the other."""
    if len(u) == 0 or len(v) == 0:
        raise InputError("words must be nonempty")
    n = min(len(u), len(v))
    return tuple(u[:n]) != tuple(v[:n])


def shortest_connector(s: SymbolicSystem, start: int, target: int) -> Word:
    """Shortest nonempty ``j`` with ``start + j`` admissible and ending in ``target``.

    BFS over symbols; neighbours are expanded in increasing order so the
    first path found is the lexicographically least among the shortest.
    """
    m = s.alphabet_size
    if not (0 <= start < m and 0 <= target < m):
        raise InputError("connector endpoints outside alphabet")
    a = s.transition
    frontier = [start]
    visited = set()
    # BFS layer by layer; within a layer, paths are kept in lexicographic order
    paths = [()]
    for _ in range(m):
        new_paths = []
        new_frontier = []
        for node, path in zip(frontier, paths):
            for j in np.flatnonzero(a[node]):
                j = int(j)
                if j in visited:
                    continue
                visited.add(j)
                new_paths.append(path + (j,))
                new_frontier.append(j)
        for p in new_paths:
            if p[-1] == target:
                return p
        frontier, paths = new_frontier, new_paths
        if not frontier:
            break
    raise NoPathError(f"no admissible path from {start} to {target}")


def random_words(
    s: SymbolicSystem, k: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform-transition random admissible words (a test and demo helper)."""
    a = s.transition
    words = np.empty((n, k), dtype=np.int64)
    words[:, 0] = rng.integers(0, s.alphabet_size, size=n)
    for j in range(1, k):
        allowed = a[words[:, j - 1]].astype(float)
        allowed /= allowed.sum(axis=1, keepdims=True)
        u = rng.random(n)[:, None]
        words[:, j] = (np.cumsum(allowed, axis=1) < u).sum(axis=1)
    return words


def concatenation_admissible(words: Iterable[Sequence[int]], s: SymbolicSystem) -> bool:
    flat = [x for w in words for x in w]
    return is_admissible(flat, s)
