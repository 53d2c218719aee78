import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenery_lab.cloud import WeightedCloud
from scenery_lab.exceptions import InputError
from scenery_lab.geometry import (
    Arc,
    BoxCountingDimension,
    LocalDimension,
    OrthogonalProjection,
    ProjectionSpec,
    box_dimension,
    direction_set,
    distance_set,
    exact_measure_dimension,
    is_dense,
    largest_gap,
    local_dimension,
    minimality_density,
    project,
    projection_sweep,
    restricted_distance_set,
)
from scenery_lab.gibbs import parry_measure
from scenery_lab.ifs import lip_bounds, natural_measure, preset, sample_measure, similarity_dimension
from scenery_lab.symbolic import is_mixing

from conftest import GOLDEN

LOG23 = math.log(2) / math.log(3)


def binary_entropy(p):
    return -p * math.log(p) - (1 - p) * math.log(1 - p)


@pytest.fixture(scope="module")
def rot5_cloud(rot5, rot5_natural):
    return sample_measure(rot5, rot5_natural, 100_000, 8, seed=1)


@pytest.fixture(scope="module")
def cantor_cloud(cantor, cantor_half):
    return sample_measure(cantor, cantor_half, 100_000, 20, seed=1)


@pytest.fixture(scope="module")
def fourcorner_cloud(fourcorner):
    return sample_measure(fourcorner, natural_measure(fourcorner), 50_000, 8, seed=2)


# projections


def test_projection_zero_angle_is_x():
    pts = np.random.default_rng(0).random((50, 2))
    out = project(WeightedCloud.uniform(pts), ProjectionSpec.from_angle(0.0))
    assert np.array_equal(out.points[:, 0], pts[:, 0])


@settings(max_examples=40, deadline=None)
@given(st.floats(0, math.pi, exclude_max=True))
def test_projection_is_one_lipschitz(theta):
    pts = np.random.default_rng(1).random((200, 2))
    out = project(WeightedCloud.uniform(pts), ProjectionSpec.from_angle(theta))
    d0 = distance_set(pts)
    d1 = distance_set(out.points)
    assert d1.max() <= d0.max() + 1e-12
    assert np.all(d1 <= d0 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, math.pi), st.floats(-math.pi, math.pi))
def test_projection_rotation_shift(theta, rho):
    pts = np.random.default_rng(2).random((100, 2))
    c, s = math.cos(rho), math.sin(rho)
    rotated = pts @ np.array([[c, -s], [s, c]]).T
    a = OrthogonalProjection(theta).fit_transform(rotated)
    b = OrthogonalProjection(theta - rho).fit_transform(pts)
    # theta - rho is folded into [0, pi), which may flip the line's orientation
    assert np.allclose(a, b, atol=1e-12) or np.allclose(a, -b, atol=1e-12)


def test_frame_rows_orthonormal():
    with pytest.raises(InputError):
        ProjectionSpec(np.array([[1.0, 1.0]]))


def test_projection_dimension_mismatch():
    with pytest.raises(InputError):
        project(WeightedCloud.uniform(np.zeros((3, 1))), ProjectionSpec.from_angle(0.3))


def test_fourcorner_projection_on_quarter_cantor_set(fourcorner_cloud):
    x = project(fourcorner_cloud, ProjectionSpec.from_angle(0.0)).points[:, 0]
    for _ in range(7):  # undo x -> x/4 or x/4 + 3/4
        assert np.all((x < 0.25) | (x >= 0.75))
        x = np.where(x < 0.25, 4 * x, 4 * (x - 0.75))


def test_projection_weights_preserved(fourcorner_cloud):
    out = project(fourcorner_cloud, ProjectionSpec.from_angle(1.0))
    assert np.array_equal(out.weights, fourcorner_cloud.weights)


# box counting


def test_grid_dimension_two():
    g = (np.arange(300) + 0.5) / 300
    pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    assert box_dimension(pts).value == pytest.approx(2.0, abs=0.05)


def test_cantor_box_dimension(cantor_cloud):
    assert box_dimension(cantor_cloud).value == pytest.approx(LOG23, abs=0.05)


def test_rot5_box_dimension(rot5_cloud):
    est = box_dimension(rot5_cloud)
    assert est.value == pytest.approx(math.log(5) / math.log(3), abs=0.07)
    assert len(est.scales) >= 5 and est.method == "box_count"


def test_box_needs_thousand_points():
    with pytest.raises(InputError):
        box_dimension(np.random.default_rng(0).random((999, 2)))


def test_degenerate_cloud_warns():
    with pytest.warns(RuntimeWarning, match="degenerate"):
        est = box_dimension(np.full((2000, 2), 0.3))
    assert est.value == 0.0


def test_resolution_warning(cantor_cloud):
    with pytest.warns(RuntimeWarning, match="resolution"):
        box_dimension(cantor_cloud, r_min=cantor_cloud.resolution, r_max=0.1)


def test_box_subset_monotone(rot5_cloud):
    full = box_dimension(rot5_cloud)
    rng = np.random.default_rng(3)
    for n in (5000, 20000):
        sub = box_dimension(rot5_cloud.subsample(n, rng))
        assert sub.value <= full.value + 2 * max(full.slope_stderr, sub.slope_stderr) + 1e-12


def test_box_estimator_is_sklearn_compatible():
    from sklearn.base import clone

    est = BoxCountingDimension(levels=10)
    assert clone(est).get_params()["levels"] == 10


# exact measure dimension


def test_exact_fair_cantor(cantor, cantor_half):
    assert exact_measure_dimension(cantor, cantor_half) == pytest.approx(LOG23, abs=1e-12)


def test_exact_skew_cantor(cantor, cantor_skew):
    value = exact_measure_dimension(cantor, cantor_skew)
    assert value == pytest.approx(binary_entropy(0.3) / math.log(3), abs=1e-12)
    assert value < LOG23


def test_exact_parry_attains_set_dimension(golden_sys, golden_parry):
    value = exact_measure_dimension(golden_sys, golden_parry)
    assert value == pytest.approx(math.log(GOLDEN) / math.log(2), abs=1e-12)
    assert value == pytest.approx(similarity_dimension(golden_sys), abs=1e-10)


def test_exact_below_moran(golden_sys):
    from scenery_lab.gibbs import build_gibbs, markov_potential

    for p in (0.3, 0.5, 0.8):
        g = build_gibbs(golden_sys.symbolic, markov_potential(golden_sys.symbolic,
                                                              np.array([[p, 1 - p], [1.0, 0.0]])))
        assert exact_measure_dimension(golden_sys, g) <= similarity_dimension(golden_sys) + 1e-10


def test_exact_refuses_conformal():
    s = preset("schottky3")
    with pytest.raises(InputError):
        exact_measure_dimension(s, natural_measure(s))


# local dimension


def test_local_lebesgue():
    pts = np.random.default_rng(0).random((100_000, 1))
    assert local_dimension(WeightedCloud.uniform(pts)).value == pytest.approx(1.0, abs=0.05)


def test_local_fair_cantor(cantor, cantor_half, cantor_cloud):
    est = local_dimension(cantor_cloud)
    assert est.value == pytest.approx(exact_measure_dimension(cantor, cantor_half), abs=0.05)


def test_local_point_mass():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = local_dimension(WeightedCloud.uniform(np.full((500, 1), 0.4)))
    assert est.value == 0.0


def test_local_with_exact_masses(cantor, cantor_half, cantor_cloud):
    # mass of [x - r, x + r] from the Cantor function
    def cantor_cdf(x, depth=40):
        x = np.clip(x, 0, 1)
        out = np.zeros_like(x)
        scale = 0.5
        for _ in range(depth):
            x = 3 * x
            d = np.floor(x).clip(0, 2)
            out += np.where(d >= 1, scale, 0.0)
            x = np.where(d == 1, 0.0, x - d)
            x = np.where(d == 1, 0.0, x)
            scale /= 2
        return out

    def mass(c, r):
        return cantor_cdf(c[:, 0] + r) - cantor_cdf(c[:, 0] - r)

    est = local_dimension(cantor_cloud, mass_fn=mass)
    assert est.value == pytest.approx(LOG23, abs=0.05)


def test_local_widening_warning():
    pts = np.random.default_rng(0).random((200, 2))
    with pytest.warns(RuntimeWarning, match="widened"):
        LocalDimension(n_centers=50).fit(pts)


# distances and directions


def test_distance_two_points():
    assert distance_set(np.array([[0.0], [1.0]])).tolist() == [1.0]


def test_distance_collinear():
    d = distance_set(np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]))
    assert sorted(set(d.tolist())) == [0.5, 1.0]


def test_distance_subsampling_deterministic(rot5_cloud):
    a = distance_set(rot5_cloud.points[:5000], pair_cap=10_000, seed=4)
    b = distance_set(rot5_cloud.points[:5000], pair_cap=10_000, seed=4)
    assert a.size == 10_000 and np.array_equal(a, b)


def test_distance_scaling_exact_under_similarity(rot5_cloud):
    pts = rot5_cloud.points[:2000]
    image = np.stack([-pts[:, 1] / 2, pts[:, 0] / 2], axis=1)  # half a quarter turn
    assert np.array_equal(distance_set(image) * 2, distance_set(pts))


def test_distance_distortion_under_conformal_map():
    s = preset("schottky3")
    cloud = sample_measure(s, natural_measure(s), 3000, 12, seed=0)
    i = 0
    z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
    piece = s.pieces[1]  # a follower piece of symbol 0
    pts = z[np.abs(z - piece.center_z) <= piece.radius][:300]
    lip = lip_bounds(s, (i,))
    img = s.maps[i](pts)
    d0 = distance_set(np.stack([pts.real, pts.imag], axis=1))
    d1 = distance_set(np.stack([img.real, img.imag], axis=1))
    keep = d0 > 0
    ratio = d1[keep] / d0[keep]
    assert ratio.size > 1000
    assert np.all(ratio <= lip.lip_plus * (1 + 1e-9))
    assert np.all(ratio >= lip.lip_minus * (1 - 1e-9))


def test_horizontal_directions():
    pts = np.stack([np.linspace(0, 1, 50), np.zeros(50)], axis=1)
    assert np.all(direction_set(pts) == 0.0)


def test_circle_directions_dense():
    t = np.random.default_rng(0).random(400) * 2 * math.pi
    pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    assert is_dense(direction_set(pts), 0.01)


def test_coincident_points_have_no_direction():
    with pytest.raises(InputError):
        direction_set(np.zeros((5, 2)))


def test_fourcorner_directions_dense(fourcorner):
    cloud = sample_measure(fourcorner, natural_measure(fourcorner), 4096, 6, seed=0)
    pts = np.unique(cloud.points, axis=0)
    assert is_dense(direction_set(pts), 0.05)


def test_unfolded_directions_cover_circle():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert direction_set(pts, folded=False).tolist() == [0.0]
    assert direction_set(pts[::-1], folded=False).tolist() == [math.pi]


def test_largest_gap_wraps():
    assert largest_gap(np.array([0.1, 3.0])) == pytest.approx(2.9)


def test_full_arc_matches_distance_set(rot5_cloud):
    pts = rot5_cloud.points[:1500]
    full = restricted_distance_set(pts, [Arc(0.0, 2 * math.pi)])
    assert np.array_equal(full, distance_set(pts))


def test_vertical_arc_on_horizontal_segment_is_empty():
    pts = np.stack([np.linspace(0, 1, 50), np.zeros(50)], axis=1)
    with pytest.warns(RuntimeWarning, match="empty"):
        out = restricted_distance_set(pts, [Arc(math.pi / 2, 0.3)])
    assert out.size == 0


def test_arc_needs_width():
    with pytest.raises(InputError):
        Arc(0.0, 0.0)


# minimality


def test_rot5_minimality_depth_12():
    rep = minimality_density(preset("rot5"), 12, 0.1)
    assert rep.n_angles <= 13
    assert rep.passed


def test_fourcorner_single_direction():
    rep = minimality_density(preset("fourcorner4"), 6, 0.1)
    assert rep.n_angles == 1 and not rep.passed


def test_counter_system_fails_despite_mixing():
    s = preset("counter3")
    rep = minimality_density(s, 12, 0.1)
    assert is_mixing(s.symbolic)
    assert not rep.passed
    assert rep.n_angles == 3


def test_minimality_refuses_conformal():
    with pytest.raises(InputError):
        minimality_density(preset("schottky3"), 4, 0.1)


# projection sweeps


def test_fourcorner_exceptional_direction(fourcorner):
    sweep = projection_sweep(fourcorner, natural_measure(fourcorner), 4, 8, 50_000, seed=0)
    assert sweep.thetas[0] == 0.0
    assert sweep.values[0] == pytest.approx(0.5, abs=0.1)


@pytest.mark.parametrize("name", ["fourcorner4", "counter3", "rot5"])
def test_projections_do_not_raise_dimension(name):
    s = preset(name)
    sweep = projection_sweep(s, natural_measure(s), 6, 12, 50_000, seed=1)
    assert np.all(sweep.values <= min(1.0, sweep.full.value) + 0.1)
