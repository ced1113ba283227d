import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from lumenpose.airway import (
    AirwayTree,
    Branch,
    ConfigError,
    LobeLabel,
    NavigationPath,
    PathRangeError,
    PatientSpec,
    camera_frame_at,
    camera_pose_at,
    centerline_path,
    generate_patient,
    rounded_cone_sdf,
    signed_distance,
)
from lumenpose.pose import Position, axis_rotation, euler_to_rotation


def single_branch(a, b, r1, r2):
    branch = Branch(0, None, Position(*a), Position(*b), r1, r2, 0, None)
    return AirwayTree((branch,), 60.0)


def sphere_sweep_distance(p, a, b, r1, r2):
    """Exterior distance to the union of spheres swept along the segment."""
    a, b, p = map(np.asarray, (a, b, p))

    def f(t):
        return np.linalg.norm(p - (a + t * (b - a))) - (r1 + t * (r2 - r1))

    res = minimize_scalar(f, bounds=(0, 1), method="bounded", options={"xatol": 1e-12})
    return min(res.fun, f(0.0), f(1.0))


# -- anatomy ------------------------------------------------------------------------
def test_same_seed_same_json():
    spec = PatientSpec(seed=11)
    assert generate_patient(spec).to_json() == generate_patient(spec).to_json()
    assert generate_patient(spec).to_json() != generate_patient(PatientSpec(seed=12)).to_json()


@pytest.mark.parametrize("levels", [4, 5, 6])
def test_max_level_matches_config(levels):
    tree = generate_patient(PatientSpec(seed=3, branching_levels=levels))
    assert tree.max_level == levels
    leaves = [b for b in tree.branches if not tree.children(b.id)]
    assert all(b.level == levels for b in leaves)


def check_tree(tree: AirwayTree):
    roots = [b for b in tree.branches if b.parent_id is None]
    assert len(roots) == 1 and roots[0].id == 0
    by_id = {b.id: b for b in tree.branches}
    for b in tree.branches:
        assert b.start_radius > 0 and b.end_radius > 0
        assert b.end_radius <= b.start_radius
        if b.parent_id is not None:
            parent = by_id[b.parent_id]
            assert parent.id < b.id  # acyclic by construction order
            assert np.allclose(b.start.as_array(), parent.end.as_array(), atol=0)
            assert b.level == parent.level + 1
            assert b.start_radius <= parent.end_radius
    assert tree.lobes() == set(LobeLabel)
    for lobe in LobeLabel:
        heads = [b for b in tree.branches if b.lobe is lobe and by_id[b.parent_id].lobe is not lobe]
        assert len(heads) == 1


def test_invariant_sweep_over_seeds():
    for seed in range(20):
        check_tree(generate_patient(PatientSpec(seed=seed, branching_levels=4 + seed % 3)))


def test_json_round_trip():
    tree = generate_patient(PatientSpec(seed=5))
    again = AirwayTree.from_json(tree.to_json())
    assert again.to_json() == tree.to_json()
    assert json.loads(tree.to_json())["spec"]["seed"] == 5


@pytest.mark.parametrize("kwargs", [{"scale": 0.0}, {"branching_levels": 3}, {"branching_levels": 7},
                                    {"radius_taper": 1.0}, {"angle_jitter": -0.1}])
def test_degenerate_spec_rejected(kwargs):
    with pytest.raises(ConfigError):
        generate_patient(PatientSpec(seed=0, **kwargs))


# -- signed distance ---------------------------------------------------------------
def test_axis_point_of_straight_capsule():
    tree = single_branch((0, 0, 0), (0, 0, -20), 3.0, 3.0)
    for z in (-2.0, -10.0, -17.5):
        assert signed_distance(tree, [0, 0, z]) == pytest.approx(-3.0, abs=1e-6)


def test_point_two_radii_from_axis():
    tree = single_branch((0, 0, 0), (0, 0, -20), 3.0, 3.0)
    assert signed_distance(tree, [6.0, 0, -10]) == pytest.approx(3.0, abs=1e-9)


def test_tapered_cone_exterior_matches_sphere_sweep():
    rng = np.random.default_rng(0)
    a, b, r1, r2 = np.array([1.0, -2, 0.5]), np.array([4.0, 7, -6]), 3.0, 1.5
    for _ in range(200):
        p = rng.uniform(-15, 15, size=3)
        d = rounded_cone_sdf(p[None], a[None], b[None], np.array([r1]), np.array([r2]))[0, 0]
        if d > 0:
            assert d == pytest.approx(sphere_sweep_distance(p, a, b, r1, r2), abs=1e-6)


def test_sdf_is_one_lipschitz():
    tree = generate_patient(PatientSpec(seed=2))
    rng = np.random.default_rng(1)
    p = rng.uniform(-60, 60, size=(2000, 3)) + [0, 0, -60]
    q = p + rng.normal(scale=3.0, size=p.shape)
    dp, dq = signed_distance(tree, p), signed_distance(tree, q)
    assert np.all(np.abs(dp - dq) <= np.linalg.norm(p - q, axis=1) + 1e-9)


# -- navigation paths ---------------------------------------------------------------
@pytest.fixture(scope="module")
def tree():
    return generate_patient(PatientSpec(seed=7, branching_levels=5))


@pytest.mark.parametrize("lobe", list(LobeLabel))
def test_path_endpoints_and_containment(tree, lobe):
    path = centerline_path(tree, lobe, rng_seed=4)
    assert np.allclose(path.point_at(0.0), tree.root.start.as_array())
    end = path.point_at(path.total_length)
    leaves = [b for b in tree.branches if b.lobe is lobe and not tree.children(b.id)]
    assert min(abs(signed_distance(single_branch(b.start.as_array(), b.end.as_array(),
                                                 b.start_radius, b.end_radius), end) + b.end_radius)
               for b in leaves) < 1e-6
    s = np.linspace(0, path.total_length, 400)
    assert np.all(signed_distance(tree, path.point_at(s)) < 0)


def test_arclength_table_against_dense_polyline(tree):
    path = centerline_path(tree, LobeLabel.UPPER_LEFT, rng_seed=1)
    assert np.all(np.diff(path.s_table) > 0)
    u = np.linspace(path.u_table[0], path.u_table[-1], 200_001)
    dense = np.sum(np.linalg.norm(np.diff(path.spline(u), axis=0), axis=1))
    assert abs(path.total_length - dense) / dense < 1e-3
    assert np.allclose(np.linalg.norm(path.tangents_table, axis=1), 1.0)


def test_missing_lobe_raises():
    t = generate_patient(PatientSpec(seed=1))
    trimmed = AirwayTree(tuple(b for b in t.branches if b.lobe is not LobeLabel.LOWER_LEFT), t.scale)
    with pytest.raises(KeyError):
        centerline_path(trimmed, LobeLabel.LOWER_LEFT)


def test_straight_path_look_at():
    path = NavigationPath([[0, 0, 0], [0, 0, -10], [0, 0, -20], [0, 0, -30]])
    pos, r = camera_frame_at(path, 5.0, 4.0, 0.0)
    assert np.allclose(r[:, 0], [0, 0, -1], atol=1e-9)
    assert np.allclose(pos, [0, 0, -5], atol=1e-9)


def test_roll_periodicity_and_composition(tree):
    path = centerline_path(tree, LobeLabel.LOWER_RIGHT)
    s = 0.37 * path.total_length
    p0 = camera_pose_at(path, s, 4.0, 0.0)
    p2pi = camera_pose_at(path, s, 4.0, 2 * math.pi)
    assert np.allclose(p0.as_array(), p2pi.as_array(), atol=1e-9)
    pq = camera_pose_at(path, s, 4.0, math.pi / 4)
    assert np.allclose(p0.position.as_array(), pq.position.as_array(), atol=0)
    r0, rq = euler_to_rotation(p0.orientation), euler_to_rotation(pq.orientation)
    look = r0[:, 0]
    # rolling the camera rotates its frame about the look-at axis
    assert np.allclose(axis_rotation(look, math.pi / 4) @ r0, rq, atol=1e-9)


def test_out_of_range_arc_length(tree):
    path = centerline_path(tree, LobeLabel.LOWER_RIGHT)
    with pytest.raises(PathRangeError):
        camera_pose_at(path, -1.0)
    with pytest.raises(PathRangeError):
        camera_pose_at(path, path.total_length - 1.0, delta_d=4.0)


@pytest.mark.parametrize("lobe", list(LobeLabel))
def test_camera_frames_continuous_and_inside(tree, lobe):
    path = centerline_path(tree, lobe)
    ds = path.total_length / 1000
    s = np.arange(0, path.total_length - 4.0, ds)
    frames = [camera_frame_at(path, v, 4.0)[1] for v in s]
    for r1, r2 in zip(frames, frames[1:]):
        cosang = (np.trace(r1.T @ r2) - 1) / 2
        assert math.degrees(math.acos(min(1.0, cosang))) < 5.0
    pos = np.array([camera_frame_at(path, v, 4.0)[0] for v in s[::10]])
    assert np.all(signed_distance(tree, pos) < 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(list(LobeLabel)))
def test_paths_stay_in_lumen_for_random_patients(seed, lobe):
    t = generate_patient(PatientSpec(seed=seed, branching_levels=4 + seed % 3))
    path = centerline_path(t, lobe, rng_seed=seed)
    s = np.linspace(0, path.total_length, 300)
    assert np.all(signed_distance(t, path.point_at(s)) < 0)
