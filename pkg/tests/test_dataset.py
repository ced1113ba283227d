import itertools
import json
import math

import numpy as np
import pytest
from conftest import TINY
from hypothesis import given, settings
from hypothesis import strategies as st

from lumenpose.airway import ConfigError, LobeLabel, NavigationPath, PatientSpec, camera_pose_at, centerline_path, \
    generate_patient
from lumenpose.dataset import (
    CENTRAL,
    OFFSETS,
    PAPER_TRAJECTORIES_PER_LOBE,
    ROLLS_DEG,
    CrossSubject,
    DatasetConfig,
    DatasetReader,
    Personalized,
    SampleRecord,
    TrajectorySpec,
    VariationSpec,
    are_neighbors,
    build_dataset,
    chunk_sequences,
    combine_variations,
    enumerate_variations,
    leave_one_out,
    load_manifest,
    make_splits,
    recompute_deltas,
    split_stats,
    standardize_frame,
    synthesize_trajectory,
    unstandardize_frame,
)
from lumenpose.pose import DeltaPose, accumulate_raw, axis_rotation, euler_to_rotation, wrap_angle
from lumenpose.render import read_ppm


# -- variation grid ----------------------------------------------------------------------
def test_variation_count_and_grid():
    specs = enumerate_variations()
    assert len(specs) == 876 == PAPER_TRAJECTORIES_PER_LOBE
    grid = {(v.offset, v.roll) for v in specs if not v.is_central}
    brute = set(itertools.product(itertools.product(range(-2, 3), repeat=3), range(-45, 46, 15)))
    assert grid == brute and len(brute) == 125 * 7 == 875
    assert len(set(specs)) == 876
    assert [v for v in specs if v.is_central] == [CENTRAL]
    assert CENTRAL.offset == (0, 0, 0) and CENTRAL.roll == 0


def test_central_flag_requires_zero_variation():
    with pytest.raises(ValueError):
        VariationSpec((1, 0, 0), 0, True)
    with pytest.raises(ValueError):
        VariationSpec((0, 0, 0), 15, True)


def test_variation_dict_round_trip():
    for v in enumerate_variations()[::37]:
        assert VariationSpec.from_dict(json.loads(json.dumps(v.to_dict()))) == v


# -- schedules ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def patient():
    tree = generate_patient(PatientSpec(seed=21))
    return tree, centerline_path(tree, LobeLabel.LOWER_RIGHT, rng_seed=0)


def test_single_variation_gives_constant_schedule(patient):
    _, path = patient
    v = VariationSpec((1, 0, -1), 30)
    spec = combine_variations(3, path, [v])
    assert {x for _, x in spec.variation_schedule} == {v}


def test_schedules_cover_path_and_step_between_neighbors(patient):
    _, path = patient
    grid = enumerate_variations()
    for seed in range(1000):
        spec = combine_variations(seed, path, grid, n_frames=12)
        sched = spec.variation_schedule
        assert 4 <= len(sched) <= 8
        assert sched[0][0][0] == 0.0 and sched[-1][0][1] == path.total_length
        for ((_, e), a), ((s, _), b) in zip(sched, sched[1:]):
            assert e == s
            assert are_neighbors(a, b) and a != b
        assert all(d > 0 for d in spec.velocity_profile)
        assert sum(spec.velocity_profile) <= path.total_length - 4.0 + 1e-9


def test_schedule_is_seed_pure(patient):
    _, path = patient
    grid = enumerate_variations()
    a, b = combine_variations(77, path, grid), combine_variations(77, path, grid)
    assert a == b
    assert a != combine_variations(78, path, grid)


def test_neighbor_relation():
    assert are_neighbors(VariationSpec((0, 0, 0), 0), VariationSpec((1, -1, 1), 15))
    assert not are_neighbors(VariationSpec((0, 0, 0), 0), VariationSpec((2, 0, 0), 0))
    assert not are_neighbors(VariationSpec((0, 0, 0), 0), VariationSpec((0, 0, 0), 30))


# -- trajectory synthesis --------------------------------------------------------------
def constant_spec(path, variation, step=1.5, n=30):
    return TrajectorySpec(0, LobeLabel.LOWER_RIGHT, [((0.0, path.total_length), variation)], [step] * n)


def test_central_spec_matches_camera_poses(patient):
    tree, path = patient
    spec = constant_spec(path, CENTRAL)
    res = synthesize_trajectory(tree, path, spec, cam=None)
    for s, pose in zip(res.arc, res.poses):
        assert np.array_equal(pose.as_array(), camera_pose_at(path, s).as_array())
    assert res.clamp_events == []


def test_pure_roll_only_rolls_about_look_at(patient):
    tree, path = patient
    central = synthesize_trajectory(tree, path, constant_spec(path, CENTRAL), cam=None)
    rolled = synthesize_trajectory(tree, path, constant_spec(path, VariationSpec((0, 0, 0), -30)), cam=None)
    for a, b in zip(central.poses, rolled.poses):
        assert np.array_equal(a.position.as_array(), b.position.as_array())
        ra, rb = euler_to_rotation(a.orientation), euler_to_rotation(b.orientation)
        assert np.allclose(axis_rotation(ra[:, 0], math.radians(-30)) @ ra, rb, atol=1e-9)


def test_constant_speed_gives_constant_steps(patient):
    tree, path = patient
    res = synthesize_trajectory(tree, path, constant_spec(path, CENTRAL, step=2.0), cam=None)
    pos = np.array([p.position.as_array() for p in res.poses])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    assert np.all(np.abs(steps - 2.0) <= 0.05 * 2.0)


def test_offset_keeps_camera_inside(patient):
    tree, path = patient
    from lumenpose.airway import signed_distance
    res = synthesize_trajectory(tree, path, constant_spec(path, VariationSpec((2, -2, 2), 45)), cam=None)
    pos = np.array([p.position.as_array() for p in res.poses])
    assert np.all(signed_distance(tree, pos) <= -0.5 + 1e-9)


# -- chunking and standardization -----------------------------------------------------
def fake_records(n, tid="t"):
    return [SampleRecord("a", "b", None, None, DeltaPose.from_array(np.zeros(6)), tid, k) for k in range(n)]


@pytest.mark.parametrize("n, length, chunks", [(45, 10, 4), (10, 10, 1), (7, 1, 7), (9, 10, 0)])
def test_chunk_counts(n, length, chunks):
    out = chunk_sequences(fake_records(n), length)
    assert len(out) == chunks
    for i, ch in enumerate(out):
        assert len(ch) == length and ch.start == i * length
        assert [r.step_index for r in ch.records] == list(range(i * length, (i + 1) * length))


def test_chunk_length_must_be_positive():
    with pytest.raises(ValueError):
        chunk_sequences(fake_records(3), 0)


STATS = {"mean": [0.2, 0.4, 0.6], "std": [0.1, 0.2, 0.05]}


def test_standardize_mean_and_one_std_images():
    mean = np.asarray(STATS["mean"])
    std = np.asarray(STATS["std"])
    img_mean = np.broadcast_to(mean * 255, (4, 5, 3))
    img_plus = np.broadcast_to((mean + std) * 255, (4, 5, 3))
    assert np.allclose(standardize_frame(img_mean, STATS), 0.0, atol=1e-6)
    assert np.allclose(standardize_frame(img_plus, STATS), 1.0, atol=1e-6)
    assert standardize_frame(img_mean, STATS).shape == (3, 4, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_standardize_round_trip(seed):
    px = np.random.default_rng(seed).integers(0, 256, size=(2, 6, 7, 3)).astype(np.uint8)
    back = unstandardize_frame(standardize_frame(px, STATS), STATS)
    assert np.max(np.abs(back - px / 255.0)) < 1e-6


def test_zero_std_rejected():
    with pytest.raises(ValueError):
        standardize_frame(np.zeros((2, 2, 3)), {"mean": [0, 0, 0], "std": [0.1, 0.0, 0.1]})


# -- splits -------------------------------------------------------------------------------
def fake_manifest(patients=3, per_lobe=18, lobes=("LowerRight", "UpperLeft")):
    trajs = [{"id": f"p{p}_{lobe}_t{k:03d}", "patient": f"p{p}", "lobe": lobe}
             for p in range(patients) for lobe in lobes for k in range(per_lobe)]
    return {"trajectories": trajs, "patients": [{"name": f"p{p}"} for p in range(patients)]}


def test_personalized_split_counts():
    m = fake_manifest()
    split = make_splits(m, Personalized())
    assert len(split["train"]) == 15 * 6 and len(split["val"]) == 3 * 6
    assert not set(split["train"]) & set(split["val"])
    for p, lobe in itertools.product(range(3), ("LowerRight", "UpperLeft")):
        tag = f"p{p}_{lobe}_"
        assert sum(t.startswith(tag) for t in split["train"]) == 15
        assert sum(t.startswith(tag) for t in split["val"]) == 3


def test_cross_subject_split_and_leave_one_out():
    m = fake_manifest()
    schemes = leave_one_out(m)
    assert sorted(s.holdout_patient for s in schemes) == ["p0", "p1", "p2"]
    all_ids = {t["id"] for t in m["trajectories"]}
    for s in schemes:
        split = make_splits(m, s)
        assert not any(t.startswith(s.holdout_patient + "_") for t in split["train"])
        assert all(t.startswith(s.holdout_patient + "_") for t in split["val"])
        assert set(split["train"]) | set(split["val"]) == all_ids
    assert len({s.name for s in schemes}) == 3


def test_insufficient_trajectories_names_group():
    with pytest.raises(ConfigError, match="p1/LowerRight"):
        m = fake_manifest(per_lobe=18)
        m["trajectories"] = [t for t in m["trajectories"] if not t["id"].startswith("p1_LowerRight_t01")]
        make_splits(m, Personalized())


def test_unknown_holdout_rejected():
    with pytest.raises(ConfigError):
        make_splits(fake_manifest(), CrossSubject("p9"))


# -- built dataset ------------------------------------------------------------------------
def test_frame_count_bookkeeping(tmp_path):
    cfg = DatasetConfig(n_patients=2, trajectories_per_lobe=18, frames_per_trajectory=40, width=8, height=8)
    m = build_dataset(cfg, tmp_path / "d")
    assert m["frame_count"] == 2 * 1 * 18 * 40
    assert len(list((tmp_path / "d").rglob("*.ppm"))) == 2 * 18 * 40
    for t in m["trajectories"]:
        assert t["n_chunks"] == 39 // 10 and t["dropped_pairs"] == 39 % 10


def test_paper_scale_flag():
    cfg = DatasetConfig(paper_scale=True)
    assert cfg.effective_trajectories == 876


def test_bad_dataset_config():
    with pytest.raises(ConfigError):
        DatasetConfig(n_patients=0).validate()
    with pytest.raises(ConfigError):
        DatasetConfig(branching_levels=9).validate()


def test_rebuild_is_byte_identical(tiny_dataset, tmp_path):
    again = tmp_path / "again"
    build_dataset(DatasetConfig(**TINY), again)
    files = sorted(p.relative_to(tiny_dataset) for p in tiny_dataset.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    for f in files:
        assert (tiny_dataset / f).read_bytes() == (again / f).read_bytes(), f


def test_stats_recomputed_from_files_match_manifest(tiny_dataset):
    m = load_manifest(tiny_dataset)
    reader = DatasetReader(tiny_dataset)
    for name, split in m["splits"].items():
        px = np.concatenate([reader.load(t).frames.reshape(-1, 3) for t in split["train"]]) / 255.0
        assert np.allclose(px.mean(axis=0), m["stats"][name]["mean"], atol=1e-6, rtol=0)
        assert np.allclose(px.std(axis=0), m["stats"][name]["std"], atol=1e-6, rtol=0)
        assert split_stats(m, split) == m["stats"][name]
    val_only = m["splits"]["personalized"]["val"]
    px_val = np.concatenate([reader.load(t).frames.reshape(-1, 3) for t in val_only]) / 255.0
    assert not np.allclose(px_val.mean(axis=0), m["stats"]["personalized"]["mean"], atol=1e-9)


def test_manifest_splits(tiny_dataset):
    m = load_manifest(tiny_dataset)
    assert set(m["splits"]) == {"personalized", "cross-subject:p0", "cross-subject:p1"}
    per = m["splits"]["personalized"]
    assert len(per["train"]) == 2 * 15 and len(per["val"]) == 2 * 3
    assert not set(per["train"]) & set(per["val"])


def test_stored_deltas_recompute_and_telescope(tiny_dataset):
    reader = DatasetReader(tiny_dataset)
    for tid in reader.trajectory_ids:
        t = reader.load(tid)
        assert np.array_equal(t.deltas, recompute_deltas(t.poses))
        end = accumulate_raw(t.poses[0], t.deltas)
        assert np.allclose(end[:3], t.poses[-1, :3], atol=1e-9, rtol=0)
        assert np.allclose(wrap_angle(end[3:] - t.poses[-1, 3:]), 0, atol=1e-9)
        for r in reader.records(tid):
            assert np.array_equal(r.delta.as_array(), t.deltas[r.step_index])


def test_pose_records_layout(tiny_dataset):
    reader = DatasetReader(tiny_dataset)
    tid = reader.trajectory_ids[0]
    recs = reader.pose_records(tid)
    assert recs[0]["delta"] is None
    assert set(recs[1]) == {"frame", "file", "s", "position", "euler", "delta", "variation", "clamped"}
    assert [r["s"] for r in recs] == sorted(r["s"] for r in recs)
    frame = read_ppm(tiny_dataset / reader.info(tid)["dir"] / recs[0]["file"])
    assert (frame.width, frame.height) == (16, 16)
