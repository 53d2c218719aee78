import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenery_lab.exceptions import CapError, InputError
from scenery_lab.ifs import (
    Box,
    IfsSystem,
    MoebiusMap,
    SimilarityMap,
    check_strong_separation,
    code_point,
    compose,
    distortion_constant,
    lip_bounds,
    natural_measure,
    preset,
    sample_measure,
    similarity_dimension,
)
from scenery_lab.symbolic import admissible_words, full_shift

RNG = np.random.default_rng(11)

# frozen finite-depth distortion estimates (words of length <= 8)
DISTORTION = {"schottky3": 5.246678121533372, "julia_quad(0)": 8.101604668069964,
              "julia_quad(0.1)": 33.79980099636063}


def line_system(*maps):
    return IfsSystem(full_shift(len(maps)), maps, Box.unit(1))


# similarity maps


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(-7, 7), st.booleans())
def test_similarity_scales_distances(ratio, angle, reflect):
    m = SimilarityMap.planar(ratio, angle, [0.1, 0.2], reflect)
    x, y = RNG.random((2, 20, 2))
    d0 = np.linalg.norm(x - y, axis=1)
    d1 = np.linalg.norm(m(x) - m(y), axis=1)
    assert np.allclose(d1, ratio * d0, rtol=1e-12, atol=1e-15)


def test_similarity_ratio_outside_unit_interval():
    with pytest.raises(InputError):
        SimilarityMap.line(1.0, 0.0)


def test_map_leaving_domain_rejected():
    with pytest.raises(InputError, match="into itself"):
        line_system(SimilarityMap.line(0.5, 0.75))


def test_map_count_must_match_alphabet():
    with pytest.raises(InputError):
        IfsSystem(full_shift(3), (SimilarityMap.line(0.5, 0),), Box.unit(1))


# composition


def test_compose_ratio_product():
    s = line_system(SimilarityMap.line(0.5, 0), SimilarityMap.line(1 / 3, 0.5))
    assert compose(s, (0, 1)).ratio == pytest.approx(1 / 6, abs=1e-15)


def test_compose_rotation_angles_add():
    maps = (SimilarityMap.about(0.3, 0.4, (0.3, 0.3)), SimilarityMap.about(0.3, 2.5, (0.7, 0.7)))
    s = IfsSystem(full_shift(2), maps, Box.unit(2))
    got = compose(s, (0, 1, 1)).angle
    assert math.cos(got - 5.4) == pytest.approx(1.0, abs=1e-12)


def test_compose_moebius_matrix_product():
    rng = np.random.default_rng(3)
    a = MoebiusMap(1 + 0.5j, 0.3, 0.2j, 2.0)
    b = MoebiusMap(0.7, -0.1 + 0.4j, 0.3, 1.5 - 0.2j)
    prod = MoebiusMap.from_matrix(a.matrix @ b.matrix)
    z = rng.random(10) + 1j * rng.random(10)
    assert np.allclose(a(b(z)), prod(z), rtol=1e-10, atol=1e-10)
    assert np.allclose(a.then(b)(z), prod(z), rtol=1e-10, atol=1e-10)


def test_compose_rejects_inadmissible(golden_sys):
    with pytest.raises(InputError):
        compose(golden_sys, (1, 1))


def test_exact_coefficients_follow_composition(cantor):
    m = compose(cantor, (1, 0, 1))
    ((lin,),), (shift,) = m.exact
    assert lin == Fraction(1, 27)
    # 2/3 + (1/3)(0 + (1/3)(2/3))
    assert shift == Fraction(2, 3) + Fraction(2, 27)


# Lipschitz data


def test_lip_bounds_similarity_exact():
    s = line_system(SimilarityMap.line(0.5, 0), SimilarityMap.line(1 / 3, 0.5))
    lip = lip_bounds(s, (0, 0, 1))
    assert lip.lip_minus == lip.lip_plus == pytest.approx(1 / 12, abs=1e-15)
    assert lip.certified


def test_lip_bounds_moebius_reciprocal():
    s = IfsSystem(full_shift(1), (MoebiusMap(0, 1, 1, 2),), Box.unit(2))
    lip = lip_bounds(s, (0,))
    assert lip.certified
    # true extremes: 1/4 at z = 0 and 1/|3+i|^2 = 1/10 at z = 1+i
    assert 0.25 <= lip.lip_plus <= 0.25 * 1.2
    assert 0.1 / 1.2 <= lip.lip_minus <= 0.1


@pytest.mark.parametrize("name", sorted(DISTORTION))
def test_distortion_regression(name):
    s = preset(name)
    assert distortion_constant(s, 8) == pytest.approx(DISTORTION[name], rel=1e-9)
    for k in range(1, 6):
        for w in admissible_words(s.symbolic, k)[:50]:
            lip = lip_bounds(s, w)
            assert 0 < lip.lip_minus <= lip.lip_plus <= DISTORTION[name] * lip.lip_minus * (1 + 1e-12)


@pytest.mark.parametrize("name", ["rot5", "schottky3", "julia_quad(0.1)"])
def test_lip_submultiplicative(name):
    s = preset(name)
    rng = np.random.default_rng(2)
    words = admissible_words(s.symbolic, 6)
    for idx in rng.choice(len(words), 20):
        w = words[idx]
        u, v = w[:2], w[2:]
        assert lip_bounds(s, w).lip_plus <= lip_bounds(s, u).lip_plus * lip_bounds(s, v).lip_plus * (1 + 1e-12)


# code points


def test_code_point_cantor_111(cantor):
    c, r = code_point(cantor, (1, 1, 1))
    assert c[0] == pytest.approx((26 / 27 + 1) / 2, abs=1e-15)
    assert r == pytest.approx(1 / 27, abs=1e-15)


def test_code_point_single_symbol(rot5):
    c, r = code_point(rot5, (2,))
    m = rot5.maps[2]
    assert np.allclose(c, m(np.array([0.5, 0.5])))
    assert r == pytest.approx(m.ratio * math.sqrt(2))


@pytest.mark.parametrize("name", ["cantor3", "rot5", "goldenmean2", "schottky3", "julia_quad(0)"])
def test_code_point_nesting(name):
    s = preset(name)
    for u in admissible_words(s.symbolic, 3):
        cu, ru = code_point(s, u)
        for j in s.symbolic.followers(u[-1]):
            cv, rv = code_point(s, u + (int(j),))
            assert rv <= ru * (1 + 1e-12)
            assert np.linalg.norm(cv - cu) <= ru * (1 + 1e-9)


# sampling


def test_cantor_samples_near_cantor_set(cantor, cantor_half):
    cloud = sample_measure(cantor, cantor_half, 4, 20, seed=0)
    for x in cloud.points[:, 0]:
        y = x
        for _ in range(20):  # ternary digits avoid 1
            y *= 3
            digit = math.floor(y)
            assert digit in (0, 2, 3) or abs(y - round(y)) < 1e-6
            y -= digit
    assert cloud.total_mass == pytest.approx(1.0)


def test_first_level_frequencies(cantor, cantor_skew):
    cloud = sample_measure(cantor, cantor_skew, 100_000, 12, seed=7)
    freq = np.mean(cloud.points[:, 0] < 0.5)
    sigma = math.sqrt(0.3 * 0.7 / 100_000)
    assert abs(freq - 0.3) < 3 * sigma


def test_sampling_deterministic(rot5, rot5_natural):
    a = sample_measure(rot5, rot5_natural, 500, 8, seed=3)
    b = sample_measure(rot5, rot5_natural, 500, 8, seed=3)
    assert np.array_equal(a.points, b.points)


def test_refinement_preserves_cell_frequencies(golden_sys, golden_parry):
    a = sample_measure(golden_sys, golden_parry, 100_000, 8, seed=1)
    b = sample_measure(golden_sys, golden_parry, 100_000, 9, seed=2)
    ca = np.bincount(np.floor(a.points[:, 0] * 16).astype(int), minlength=16) / 1e5
    cb = np.bincount(np.floor(b.points[:, 0] * 16).astype(int), minlength=16) / 1e5
    sigma = np.sqrt(np.maximum(ca, 1e-5) / 1e5)
    assert np.all(np.abs(ca - cb) < 5 * np.sqrt(2) * sigma)


def test_sampling_caps(cantor, cantor_half):
    with pytest.raises(CapError):
        sample_measure(cantor, cantor_half, 10, 8, seed=0, cap=5)


def test_sampling_needs_matching_shift(cantor, golden_parry):
    with pytest.raises(InputError):
        sample_measure(cantor, golden_parry, 10, 5, seed=0)


# strong separation


def test_cantor_separated(cantor):
    rep = check_strong_separation(cantor)
    assert rep.passed and rep.all_depths
    assert rep.gap == pytest.approx(1 / 3, abs=1e-12)


def test_overlap_fails_on_first_level():
    s = line_system(SimilarityMap.line(0.5, 0), SimilarityMap.line(0.5, 0.25))
    rep = check_strong_separation(s)
    assert not rep.passed
    assert rep.pair == ((0,), (1,))


def test_schottky_separated():
    s = preset("schottky3")
    rep = check_strong_separation(s)
    assert rep.passed
    disks = s.pieces
    for i in range(3):
        for j in range(i + 1, 3):
            d = abs(disks[i].center_z - disks[j].center_z)
            assert d > disks[i].radius + disks[j].radius


@pytest.mark.parametrize("name", ["rot5", "fourcorner4", "goldenmean2"])
def test_similarity_presets_separated(name):
    assert check_strong_separation(preset(name)).passed


# presets


def test_schottky_matrix_off_diagonal():
    assert np.array_equal(preset("schottky3").symbolic.transition, 1 - np.eye(3, dtype=int))


def test_julia_zero_attractor_is_unit_circle():
    s = preset("julia_quad(0)")
    cloud = sample_measure(s, natural_measure(s), 2000, 30, seed=0)
    z = cloud.points[:, 0] * 3 - 1.5 + 1j * (cloud.points[:, 1] * 3 - 1.5)
    assert np.allclose(np.abs(z), 1.0, atol=1e-6)


def test_julia_parameter_validated():
    with pytest.raises(InputError):
        preset("julia_quad(0.3)")
    with pytest.raises(InputError):
        preset("julia_quad(0.1+0.1j)")


def test_julia_branches_stay_on_their_halves():
    s = preset("julia_quad(0.1)")
    up, down = s.pieces[0], s.pieces[1]
    for i, m in enumerate(s.maps):
        source = up if i < 2 else down
        target = s.pieces[i]
        img = m(source.grid(0.01))
        local = (img - target.center_z) * np.exp(-1j * target.half)
        assert np.all(local.imag >= -1e-12)


def test_julia_not_separated():
    # adjacent quarter arcs of the circle touch
    assert not check_strong_separation(preset("julia_quad(0)")).passed


def test_unknown_preset():
    with pytest.raises(InputError, match="unknown preset"):
        preset("cantor9")


@pytest.mark.parametrize("name, oracle", [
    ("cantor3", math.log(2) / math.log(3)),
    ("fourcorner4", 1.0),
    ("rot5", math.log(5) / math.log(3)),
    ("goldenmean2", math.log((1 + 5**0.5) / 2) / math.log(2)),
])
def test_similarity_dimension_oracles(name, oracle):
    assert similarity_dimension(preset(name)) == pytest.approx(oracle, abs=1e-10)
