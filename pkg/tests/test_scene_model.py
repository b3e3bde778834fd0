import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import det, linear_track, simple_scene
from crossintent.scene_model import (
    CameraModel,
    CrosswalkEntrance,
    Detection,
    EntityTrack,
    Pose3D,
    SceneFormatError,
    SemanticGrid,
    load_scene,
    meta_record,
    sample_track,
    save_scene,
    scene_to_text,
)


def _two_track_scene():
    times = [0.0, 1 / 30, 2 / 30]
    ped = linear_track(1, "Person", (100, 200), (30, 0), times, states=(False, False, True))
    car = linear_track(2, "Car", (50, 120), (300, 0), times, height=150.0)
    cam = CameraModel([[100, 0, 64], [0, 100, 64], [0, 0, 1]])
    return simple_scene([ped, car], [CrosswalkEntrance((0, 0), (10, 0))], camera=cam)


def test_load_minimal_file(tmp_path):
    path = tmp_path / "scene.jsonl"
    save_scene(_two_track_scene(), path)
    scene = load_scene(path)
    assert len(scene.tracks) == 2
    assert [t.cls for t in scene.tracks] == ["Person", "Car"]


def test_duplicate_timestamp_rejected(tmp_path):
    scene = _two_track_scene()
    lines = scene_to_text(scene).splitlines()
    recs = [json.loads(l) for l in lines]
    dets = [r for r in recs if r["type"] == "det" and r["id"] == 1]
    dets[1]["t"] = dets[0]["t"]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    with pytest.raises(SceneFormatError, match="non-monotone timestamps"):
        load_scene(path)


def test_track_rejects_equal_timestamps():
    with pytest.raises(SceneFormatError, match="non-monotone timestamps"):
        EntityTrack(1, "Person", (det(0.0, 1, 1), det(0.0, 2, 2)))


def test_unknown_class_names_record(tmp_path):
    recs = [json.loads(l) for l in scene_to_text(_two_track_scene()).splitlines()]
    recs[3]["class"] = "Tram"
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    with pytest.raises(SceneFormatError, match="Tram"):
        load_scene(path)


def test_missing_field_is_named(tmp_path):
    recs = [json.loads(l) for l in scene_to_text(_two_track_scene()).splitlines()]
    del recs[2]["bbox"]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    with pytest.raises(SceneFormatError, match="bbox"):
        load_scene(path)


def test_round_trip_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_scene(_two_track_scene(), a)
    save_scene(load_scene(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_round_trip_structural_equality(tmp_path, wait_cross_scene):
    scene, _ = wait_cross_scene
    path = tmp_path / "s.jsonl"
    save_scene(scene, path)
    again = load_scene(path)
    assert again == scene


def test_two_saves_identical(tmp_path):
    scene = _two_track_scene()
    save_scene(scene, tmp_path / "a")
    save_scene(scene, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_empty_scene_round_trip(tmp_path):
    scene = simple_scene([])
    save_scene(scene, tmp_path / "e.jsonl")
    again = load_scene(tmp_path / "e.jsonl")
    assert again.tracks == ()
    assert again.semantics == scene.semantics


def test_meta_record_schema():
    rec = meta_record(_two_track_scene())
    assert rec["type"] == "meta"
    assert set(rec) >= {"frame_rate", "crosswalks", "semantic", "camera"}
    assert len(rec["camera"]["K"]) == 9


@pytest.mark.parametrize("query, expected", [(0.1, 0.1), (0.05, None), (0.09, 0.1)])
def test_sample_track_examples(query, expected):
    track = EntityTrack(1, "Person", (det(0.0, 0, 0), det(0.1, 1, 1)))
    hit = sample_track(track, query, 0.02)
    assert (hit.timestamp if hit else None) == expected


def test_sample_track_tie_goes_earlier():
    track = EntityTrack(1, "Person", (det(0.0, 0, 0), det(0.5, 1, 1)))
    assert sample_track(track, 0.25, 0.3).timestamp == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=20, unique=True),
       st.floats(-1, 11), st.floats(0, 2))
def test_sample_track_hit_iff_within_tolerance(times, t, tol):
    times = sorted(times)
    track = EntityTrack(1, "Person", tuple(det(s, 0, 0) for s in times))
    hit = sample_track(track, t, tol)
    best = min(abs(s - t) for s in times)
    assert (hit is not None) == (best <= tol)
    if hit is not None:
        assert abs(hit.timestamp - t) == best
        assert hit.height_px > 0


def test_detection_invariants():
    with pytest.raises(SceneFormatError):
        Detection(0.0, (10, 10, 5, 20))
    d = Detection(0.0, (10, 10, 30, 50))
    assert d.anchor_point == (20.0, 50.0)
    assert d.height_px == 40.0


def test_camera_invariants():
    with pytest.raises(SceneFormatError):
        CameraModel([[100, 0, 0], [1, 100, 0], [0, 0, 1]])
    with pytest.raises(SceneFormatError):
        CameraModel(np.eye(3), [[1, 0, 0], [0, 2, 0], [0, 0, 1]])


def test_crosswalk_midpoint():
    cw = CrosswalkEntrance((0, 0), (4, 2))
    assert np.allclose(cw.midpoint, (2, 1))
    assert np.allclose(cw.entrance_vector, (4, 2))
    with pytest.raises(SceneFormatError):
        CrosswalkEntrance((1, 1), (1, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.integers(1, 6))
def test_rle_round_trip(values, width):
    n = len(values) - len(values) % width or width
    arr = np.resize(np.asarray(values, dtype=np.uint8), n).reshape(-1, width)
    grid = SemanticGrid(arr)
    assert SemanticGrid.from_rle(grid.width, grid.height, grid.to_rle()) == grid


def test_pose_rejects_non_finite():
    with pytest.raises(SceneFormatError):
        Pose3D({"neck": (0.0, float("nan"), 0.0)})
