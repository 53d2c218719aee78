import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenery_lab.exceptions import CapError, InputError, NoPathError
from scenery_lab.symbolic import (
    SymbolicSystem,
    admissible_words,
    count_words,
    full_shift,
    incomparable,
    is_admissible,
    is_mixing,
    is_transitive,
    period,
    shortest_connector,
)

from conftest import COUNTER


def brute_words(a, k):
    m = len(a)
    return [w for w in itertools.product(range(m), repeat=k)
            if all(a[x][y] for x, y in zip(w, w[1:]))]


@st.composite
def live_matrices(draw, max_m=5):
    """0/1 matrices without dead rows or columns."""
    m = draw(st.integers(1, max_m))
    flat = draw(st.lists(st.integers(0, 1), min_size=m * m, max_size=m * m))
    a = np.array(flat).reshape(m, m)
    for i in range(m):  # a permutation keeps every row and column alive
        a[i, (i + 1) % m] = 1
    return a


# construction


def test_dead_row_rejected():
    with pytest.raises(InputError, match="dead symbols"):
        SymbolicSystem(np.array([[1, 1], [0, 0]]))


def test_non_binary_rejected():
    with pytest.raises(InputError):
        SymbolicSystem(np.array([[1, 2], [1, 1]]))


def test_non_square_rejected():
    with pytest.raises(InputError):
        SymbolicSystem(np.ones((2, 3), dtype=int))


def test_matrix_frozen(golden_shift):
    with pytest.raises(ValueError):
        golden_shift.transition[0, 0] = 0


# admissibility


def test_counter_word_010_admissible(counter_shift):
    assert is_admissible((0, 1, 0), counter_shift)


def test_full_shift_admits_everything():
    s = full_shift(3)
    assert all(is_admissible(w, s) for w in itertools.product(range(3), repeat=4))


def test_counter_word_00_rejected(counter_shift):
    assert not is_admissible((0, 0), counter_shift)


def test_symbol_out_of_range(counter_shift):
    with pytest.raises(InputError):
        is_admissible((0, 3), counter_shift)


# transitivity and mixing


def test_counter_matrix_transitive_and_mixing(counter_shift):
    assert is_transitive(counter_shift)
    assert is_mixing(counter_shift)


def test_identity_not_transitive():
    assert not is_transitive(SymbolicSystem(np.eye(2, dtype=int)))


def test_schottky_pattern_transitive():
    assert is_transitive(SymbolicSystem(1 - np.eye(3, dtype=int)))


def test_two_cycle_not_mixing():
    s = SymbolicSystem(np.array([[0, 1], [1, 0]]))
    assert is_transitive(s) and not is_mixing(s)
    assert period(s) == 2


def test_full_shift_mixing():
    assert is_mixing(full_shift(4))


# enumeration


def test_full_shift_word_count():
    assert len(admissible_words(full_shift(2), 3)) == 8


def test_counter_words_from_zero(counter_shift):
    assert admissible_words(counter_shift, 2, first=0) == [(0, 1)]


def test_golden_mean_fibonacci_count(golden_shift):
    words = admissible_words(golden_shift, 5)
    assert len(words) == 13
    assert words == brute_words([[1, 1], [1, 0]], 5)


def test_words_lexicographic(counter_shift):
    words = admissible_words(counter_shift, 4)
    assert words == sorted(words)


def test_word_cap_reports_count():
    with pytest.raises(CapError) as info:
        admissible_words(full_shift(4), 12, cap=1000)
    assert info.value.requested == 4**12


# incomparable


@pytest.mark.parametrize("u, v, expected", [
    ((0, 1), (0, 1, 1), False),
    ((0, 1), (0, 2), True),
    ((0,), (0,), False),
])
def test_incomparable_examples(u, v, expected):
    assert incomparable(u, v) is expected


def test_incomparable_rejects_empty():
    with pytest.raises(InputError):
        incomparable((), (1,))


@given(st.lists(st.integers(0, 2), min_size=1, max_size=6),
       st.lists(st.integers(0, 2), min_size=1, max_size=6))
def test_incomparable_symmetric(u, v):
    assert incomparable(u, v) == incomparable(v, u)
    assert not incomparable(u, u)


# connectors


def test_connector_full_shift():
    assert shortest_connector(full_shift(2), 0, 1) == (1,)


def test_connector_counter(counter_shift):
    assert shortest_connector(counter_shift, 0, 2) == (1, 2)


def test_connector_golden_detour(golden_shift):
    assert shortest_connector(golden_shift, 1, 1) == (0, 1)


def test_connector_unreachable():
    with pytest.raises(NoPathError):
        shortest_connector(SymbolicSystem(np.eye(2, dtype=int)), 0, 1)


# properties


@settings(max_examples=150, deadline=None)
@given(live_matrices(), st.integers(1, 6))
def test_count_matches_brute_force(a, k):
    s = SymbolicSystem(a)
    brute = brute_words(a.tolist(), k)
    assert count_words(s, k) == len(brute)
    assert admissible_words(s, k) == brute


def test_mixing_implies_transitive_on_random_matrices():
    rng = np.random.default_rng(20)
    checked = 0
    while checked < 1000:
        m = int(rng.integers(1, 7))
        a = (rng.random((m, m)) < 0.45).astype(int)
        if (a.sum(0) == 0).any() or (a.sum(1) == 0).any():
            continue
        s = SymbolicSystem(a)
        if is_mixing(s):
            assert is_transitive(s)
        checked += 1


@settings(max_examples=150, deadline=None)
@given(live_matrices(), st.data())
def test_connector_is_shortest_and_least(a, data):
    s = SymbolicSystem(a)
    m = a.shape[0]
    start = data.draw(st.integers(0, m - 1))
    target = data.draw(st.integers(0, m - 1))
    found = []
    for n in range(1, m + 1):
        found = [j for j in itertools.product(range(m), repeat=n)
                 if j[-1] == target and is_admissible((start,) + j, s)]
        if found:
            break
    if not found:
        with pytest.raises(NoPathError):
            shortest_connector(s, start, target)
        return
    got = shortest_connector(s, start, target)
    assert got == min(found)
    assert len(got) <= m
