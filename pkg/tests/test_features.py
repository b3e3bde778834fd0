import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import det, linear_track, simple_scene, upright_pose
from crossintent.features import (
    SAMPLE_RATE,
    SLOT,
    assemble_feature,
    FeatureConfig,
    FeatureError,
    build_windows,
    closest_approaching_vehicle,
    crosswalk_context,
    extract_dataset,
    feature_names,
    group_size,
    load_dataset,
    location_semantics,
    pose_feature,
    save_dataset,
    slot_count,
    v2p_angle,
)
from crossintent.scene_model import (
    CROSSWALK,
    FEATURE_JOINTS,
    ROAD,
    SIDEWALK,
    CrosswalkEntrance,
    Detection,
    EntityTrack,
    Pose3D,
    SemanticGrid,
)


def test_zero_pose_feature():
    pose = Pose3D({j: (0.0, 0.0, 0.0) for j in FEATURE_JOINTS})
    assert np.array_equal(pose_feature(pose), np.zeros(42))


def test_pose_feature_order(pose):
    out = pose_feature(pose)
    for i, j in enumerate(FEATURE_JOINTS):
        assert np.array_equal(out[3 * i:3 * i + 3], pose.joints[j])


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(upright_pose().joints)))
def test_pose_feature_ignores_map_order(order):
    base = upright_pose()
    shuffled = Pose3D({k: base.joints[k] for k in order})
    assert np.array_equal(pose_feature(shuffled), pose_feature(base))


def test_pose_feature_missing_joint(pose):
    joints = dict(pose.joints)
    del joints["knee_l"]
    with pytest.raises(FeatureError, match="knee_l"):
        pose_feature(Pose3D(joints))


def _ped(tid, u, v=200.0, times=(0.0, 0.5, 1.0)):
    return linear_track(tid, "Person", (u, v), (0, 0), times, pose=upright_pose())


@pytest.mark.parametrize("others, expected", [([], 1), ([300.0], 2), ([1100.0], 1)])
def test_group_size_examples(others, expected):
    subject = _ped(1, 100.0)
    scene = simple_scene([subject] + [_ped(i + 2, u) for i, u in enumerate(others)], size=(1500, 400))
    assert group_size(subject, scene, 1.0) == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-600, 600), max_size=6), st.floats(-600, 600))
def test_group_size_monotone(offsets, extra):
    subject = _ped(1, 700.0)
    peds = [_ped(i + 2, 700.0 + o) for i, o in enumerate(offsets)]
    before = group_size(subject, simple_scene([subject] + peds, size=(1500, 400)), 1.0)
    after = group_size(subject, simple_scene([subject] + peds + [_ped(99, 700.0 + extra)], size=(1500, 400)), 1.0)
    inside = abs(extra) * 0.01 <= 2.5
    assert after == before + int(inside)
    assert before == 1 + sum(abs(o) * 0.01 <= 2.5 for o in offsets)


def _car(tid, u_then, u_now, v=200.0, t=1.0, lookback=0.5):
    box = lambda s, u: Detection(s, (u - 40, v - 150, u + 40, v), (u, v))
    return EntityTrack(tid, "Car", (box(t - lookback, u_then), box(t, u_now)))


def test_closest_vehicle_examples():
    subject = _ped(1, 0.0)
    approacher = _car(10, 2000.0, 1500.0)
    receder = _car(11, 1500.0, 2000.0)
    near, far = _car(12, 1300.0, 800.0), _car(13, 1700.0, 1200.0)
    hit = closest_approaching_vehicle(subject, simple_scene([subject, approacher]), 1.0)
    assert hit[0].id == 10 and hit[1] == pytest.approx(15.0)
    assert closest_approaching_vehicle(subject, simple_scene([subject, receder]), 1.0) is None
    assert closest_approaching_vehicle(subject, simple_scene([subject, far, near]), 1.0)[0].id == 12
    with pytest.raises(ValueError):
        closest_approaching_vehicle(subject, simple_scene([subject]), 1.0, lookback=0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(200, 3000), st.floats(200, 3000)), min_size=1, max_size=5))
def test_closest_vehicle_always_approaching(pairs):
    subject = _ped(1, 0.0)
    cars = [_car(10 + i, a, b) for i, (a, b) in enumerate(pairs)]
    hit = closest_approaching_vehicle(subject, simple_scene([subject] + cars), 1.0)
    closing = [b for a, b in pairs if b < a]
    if not closing:
        assert hit is None
    else:
        assert hit is not None
        a, b = pairs[hit[0].id - 10]
        assert b < a and b == min(closing)


def test_receding_vehicle_hands_over():
    subject = linear_track(1, "Person", (0, 200), (0, 0), [0.0, 0.5, 1.0, 1.5], pose=upright_pose())
    box = lambda s, u: Detection(s, (u - 40, 50, u + 40, 200), (u, 200))
    first = EntityTrack(10, "Car", (box(0.5, 600), box(1.0, 100), box(1.5, -400)))
    second = EntityTrack(11, "Car", (box(0.5, 2500), box(1.0, 2000), box(1.5, 1500)))
    scene = simple_scene([subject, first, second])
    assert closest_approaching_vehicle(subject, scene, 1.0)[0].id == 10
    assert closest_approaching_vehicle(subject, scene, 1.5)[0].id == 11


@pytest.mark.parametrize("body, expected", [((1, 0), 0.0), ((0, 1), 1.0), ((-1, 0), 2.0)])
def test_v2p_examples(body, expected):
    assert v2p_angle(body, _car(10, 0.0, 30.0), 0.5, 1.0) == pytest.approx(expected)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-500, 500).filter(lambda d: abs(d) > 1e-3))
def test_v2p_range_and_orthogonality(bx, by, du):
    if np.hypot(bx, by) < 1e-6:
        return
    value = v2p_angle((bx, by), _car(10, 0.0, du), 0.5, 1.0)
    assert 0 <= value <= 2
    assert (abs(value - 1) < 1e-9) == (abs(bx) / np.hypot(bx, by) < 1e-9)


def test_crosswalk_context_examples():
    cw = CrosswalkEntrance((0.0, 200.0), (400.0, 200.0))
    scene = simple_scene([], [cw])
    d, a = crosswalk_context(det(0.0, 200.0, 200.0), scene, (1, 0))
    assert d == 0.0 and a == pytest.approx(0.0)
    d, _ = crosswalk_context(det(0.0, 200.0, 400.0), scene, (0, 1))
    assert d == pytest.approx(2.0)
    with pytest.raises(FeatureError, match="no crosswalks"):
        crosswalk_context(det(0.0, 0, 0), simple_scene([]), (1, 0))


def _toe_det(toes):
    return Detection(0.0, (0, 0, 10, 10), (5, 10), None, toes)


def test_location_unanimous():
    grid = SemanticGrid.filled(50, 50, SIDEWALK)
    assert location_semantics(_toe_det(((10, 10), (30, 30))), grid) == 0.25


def test_location_tie_goes_to_crosswalk():
    labels = np.full((50, 50), ROAD, dtype=np.uint8)
    labels[:, :20] = CROSSWALK
    # left toe samples 8 crosswalk pixels, right toe 8 road pixels
    assert location_semantics(_toe_det(((5, 25), (40, 25))), SemanticGrid(labels)) == 0.5


def test_location_nine_seven():
    labels = np.full((50, 50), ROAD, dtype=np.uint8)
    labels[:, :20] = CROSSWALK
    labels[25, 42] = CROSSWALK        # (u=42, v=25) is the (+2, 0) stencil pixel of the right toe
    grid = SemanticGrid(labels)
    assert location_semantics(_toe_det(((5, 25), (40, 25))), grid) == 0.5
    labels = np.full((50, 50), CROSSWALK, dtype=np.uint8)
    labels[:, 20:] = ROAD
    labels[25, 7] = ROAD              # left toe loses one vote: 7 crosswalk vs 9 road
    assert location_semantics(_toe_det(((5, 25), (40, 25))), SemanticGrid(labels)) == 0.0


def test_location_missing_toes():
    with pytest.raises(FeatureError, match="missing toe points"):
        location_semantics(_toe_det(None), SemanticGrid.filled(10, 10))


def test_assemble_dimensions(wait_cross_scene):
    scene, _ = wait_cross_scene
    ped = scene.pedestrians[0]
    x = assemble_feature(ped, scene, 3.0)
    assert x.shape == (50,) and np.all(np.isfinite(x))
    xs = assemble_feature(ped, scene, 3.0, FeatureConfig(with_state=True))
    assert xs.shape == (51,) and xs[50] in (0.0, 1.0)
    assert np.array_equal(xs[:50], x)
    assert len(feature_names()) == 50 and len(feature_names(True)) == 51


def test_assemble_without_vehicles():
    ped = linear_track(1, "Person", (100, 200), (30, 0), np.arange(0, 2, 1 / 30), pose=upright_pose())
    x = assemble_feature(ped, simple_scene([ped]), 1.0)
    assert np.all(x[[SLOT["veh_distance"], SLOT["v2p_angle"], SLOT["veh_speed"]]] == 0)
    assert x[SLOT["group_size"]] == pytest.approx(0.1)
    assert x[SLOT["ped_speed"]] == pytest.approx(0.3 / 5)


@pytest.mark.parametrize("context, slots", [(0.5, 8), (1.0, 15), (1.5, 23), (3.0, 45)])
def test_slot_count(context, slots):
    assert slot_count(context) == slots


def _flip_track(flip=10.0, duration=14.0):
    times = np.arange(0, round(duration * 30) + 1) / 30
    track = linear_track(1, "Person", (100, 200), (20, 0), times, pose=upright_pose(),
                         states=tuple(bool(t >= flip - 1e-9) for t in times))
    return track, simple_scene([track])


def test_label_shift_example():
    track, scene = _flip_track()
    wins = {round(w.t_end * 15): y for w, y in build_windows(track, scene, 0.5, 1.5)}
    assert wins[round(8.5 * 15)] == 1
    assert wins[round(8.5 * 15) - 1] == 0
    assert all(w.vectors.shape == (8, 50) for w, _ in build_windows(track, scene, 0.5, 1.5)[:3])
    assert build_windows(track, scene, 3.0, 1.5)[0][0].vectors.shape == (45, 50)


def _brute_state(track, t, tol):
    times = np.array([d.timestamp for d in track.detections])
    gaps = np.abs(times - t)
    i = int(np.argmin(gaps))
    return None if gaps[i] > tol else track.state_labels[i]


@pytest.mark.parametrize("horizon", [0.5, 1.0, 1.5, 2.0])
def test_labels_match_brute_force(wait_cross_scene, horizon):
    scene, _ = wait_cross_scene
    for ped in scene.pedestrians:
        wins = build_windows(ped, scene, 1.0, horizon)
        assert wins
        for win, label in wins:
            assert label == int(_brute_state(ped, win.t_end + horizon, 1 / SAMPLE_RATE))


def test_multi_horizon_labels(wait_cross_scene):
    scene, _ = wait_cross_scene
    ped = scene.pedestrians[0]
    multi = build_windows(ped, scene, 0.5, [0.5, 1.0, 1.5, 2.0])
    single = {w.t_end: y for w, y in build_windows(ped, scene, 0.5, 1.0)}
    for win, labels in multi:
        assert len(labels) == 4
        assert labels[1] == single[win.t_end]


def test_scene_too_short():
    track, scene = _flip_track(duration=1.5)
    with pytest.raises(FeatureError, match="shorter than context"):
        build_windows(track, scene, 0.5, 2.0)


def test_missing_frames_are_masked():
    times = [t for t in np.arange(0, 121) / 30 if not 1.0 <= t <= 1.4]
    track = linear_track(1, "Person", (100, 200), (20, 0), times, pose=upright_pose(),
                         states=(False,) * len(times))
    scene = simple_scene([track])
    for win, _ in build_windows(track, scene, 1.0, 0.5):
        gap = (win.slot_times > 1.0 + 1 / 15 + 1e-9) & (win.slot_times < 1.4 - 1 / 15 - 1e-9)
        assert not win.presence_mask[gap].any()
        assert np.all(win.vectors[~win.presence_mask] == 0)
        assert win.presence_mask[-1]


def test_stride_keeps_grid_subset(wait_cross_scene):
    scene, _ = wait_cross_scene
    ped = scene.pedestrians[0]
    full = {w.t_end: (w, y) for w, y in build_windows(ped, scene, 0.5, 1.5)}
    strided = build_windows(ped, scene, 0.5, 1.5, stride=3)
    assert {round(w.t_end * 15) % 3 for w, _ in strided} == {0}
    assert len(strided) == sum(round(t * 15) % 3 == 0 for t in full)
    for w, y in strided:
        assert np.array_equal(w.vectors, full[w.t_end][0].vectors) and y == full[w.t_end][1]


def test_dataset_round_trip(tmp_path, wait_cross_scene):
    scene, _ = wait_cross_scene
    ds = extract_dataset([scene], 0.5, 1.5, FeatureConfig(with_state=True), scene_ids=["a"], splits=["train"],
                         stride=5)
    path = tmp_path / "ds.jsonl"
    save_dataset(ds, path)
    again = load_dataset(path)
    assert np.array_equal(again.X, ds.X) and np.array_equal(again.mask, ds.mask)
    assert np.array_equal(again.y, ds.y) and np.array_equal(again.t_end, ds.t_end)
    assert list(again.split) == ["train"] * len(ds)
    assert again.X.shape[1:] == (8, 51)


def test_unlabelled_windows_reach_track_end(wait_cross_scene):
    scene, _ = wait_cross_scene
    ped = scene.pedestrians[0]
    labelled = build_windows(ped, scene, 0.5, 1.5)
    free = build_windows(ped, scene, 0.5, 1.5, labelled=False)
    assert all(y is None for _, y in free)
    assert free[-1][0].t_end >= ped.span[1] - 1 / 15
    assert len(free) > len(labelled)
