"""Scene data model and the line-delimited track-file format.

A track file is JSON lines: one ``meta`` header record followed by one
``det`` record per entity per frame.  Serialization is canonical (fixed key
order, shortest round-trip floats) so that ``save_scene(load_scene(f))``
reproduces the input byte for byte.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

JOINT_NAMES = (
    "head_top", "jaw", "eye_l", "eye_r", "neck",
    "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "wrist_l", "wrist_r",
    "hip_l", "hip_r", "hip_mid", "knee_l", "knee_r", "ankle_l", "ankle_r",
)

# Fourteen limb/torso joints concatenated into the pose feature, in order.
FEATURE_JOINTS = (
    "shoulder_l", "shoulder_r", "elbow_l", "elbow_r", "wrist_l", "wrist_r",
    "hip_l", "hip_r", "knee_l", "knee_r", "ankle_l", "ankle_r",
    "neck", "hip_mid",
)

CLASSES = ("Person", "Cyclist", "Car", "Bus", "Truck")
VEHICLE_CLASSES = ("Car", "Bus", "Truck")

LABELS = {"road": 0, "sidewalk": 1, "crosswalk": 2, "vehicle": 3, "other": 4}
ROAD, SIDEWALK, CROSSWALK, VEHICLE, OTHER = range(5)

STATES = ("not_crossing", "crossing")


class SceneFormatError(ValueError):
    """A track file or scene object violates the schema or an invariant."""


def _finite(values: Iterable[float]) -> bool:
    return all(math.isfinite(v) for v in values)


def _vec(values, n: int, what: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"{what}: expected {n} numbers") from exc
    if len(out) != n:
        raise SceneFormatError(f"{what}: expected {n} numbers, got {len(out)}")
    if not _finite(out):
        raise SceneFormatError(f"{what}: non-finite value")
    return out


@dataclass(frozen=True)
class Pose3D:
    """Named 3D joints of one pedestrian in normalized pose space (y up)."""

    joints: Mapping[str, tuple[float, float, float]]
    timestamp: float = 0.0

    def __post_init__(self):
        clean = {}
        for name, xyz in self.joints.items():
            clean[str(name)] = _vec(xyz, 3, f"joint {name!r}")
        object.__setattr__(self, "joints", clean)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.joints[name], dtype=float)
        except KeyError:
            raise KeyError(f"pose is missing joint {name!r}") from None

    def has(self, names: Iterable[str]) -> bool:
        return all(n in self.joints for n in names)

    @property
    def feature_complete(self) -> bool:
        return self.has(FEATURE_JOINTS)

    def transformed(self, rotation=None, offset=None) -> "Pose3D":
        rot = np.eye(3) if rotation is None else np.asarray(rotation, float)
        off = np.zeros(3) if offset is None else np.asarray(offset, float)
        joints = {k: tuple(rot @ np.asarray(v) + off) for k, v in self.joints.items()}
        return Pose3D(joints, self.timestamp)


@dataclass(frozen=True, eq=False)
class CameraModel:
    intrinsic: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        K = np.array(self.intrinsic, dtype=float).reshape(3, 3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise SceneFormatError("camera: non-finite entry")
        if np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise SceneFormatError("camera: K must be upper-triangular with positive focal lengths")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise SceneFormatError("camera: R is not orthonormal")
        for name, arr in (("intrinsic", K), ("rotation", R), ("translation", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (np.array_equal(self.intrinsic, other.intrinsic)
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None


@dataclass(frozen=True)
class Detection:
    timestamp: float
    bbox: tuple[float, float, float, float]
    anchor_point: tuple[float, float] | None = None
    pose: Pose3D | None = None
    toe_points_2d: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        bbox = _vec(self.bbox, 4, "bbox")
        if not (bbox[2] > bbox[0] and bbox[3] > bbox[1]):
            raise SceneFormatError(f"bbox {bbox} has non-positive extent")
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "timestamp", float(self.timestamp))
        if not math.isfinite(self.timestamp):
            raise SceneFormatError("timestamp is not finite")
        if self.anchor_point is None:
            # bbox bottom-centre stands in for the hip when no anchor is given
            anchor = ((bbox[0] + bbox[2]) / 2.0, bbox[3])
        else:
            anchor = _vec(self.anchor_point, 2, "anchor")
        object.__setattr__(self, "anchor_point", anchor)
        if self.toe_points_2d is not None:
            if len(self.toe_points_2d) != 2:
                raise SceneFormatError("toes: expected two points")
            toes = tuple(_vec(p, 2, "toe") for p in self.toe_points_2d)
            object.__setattr__(self, "toe_points_2d", toes)

    @property
    def height_px(self) -> float:
        return self.bbox[3] - self.bbox[1]

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.anchor_point, dtype=float)


@dataclass(frozen=True)
class EntityTrack:
    id: int
    cls: str
    detections: tuple[Detection, ...]
    state_labels: tuple[bool | None, ...] | None = None

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise SceneFormatError(f"track {self.id}: unknown class {self.cls!r}")
        dets = tuple(self.detections)
        object.__setattr__(self, "detections", dets)
        times = [d.timestamp for d in dets]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SceneFormatError(f"track {self.id}: non-monotone timestamps")
        object.__setattr__(self, "_times", times)
        if self.state_labels is not None:
            labels = tuple(self.state_labels)
            if len(labels) != len(dets):
                raise SceneFormatError(f"track {self.id}: state labels misaligned with detections")
            object.__setattr__(self, "state_labels", labels)

    @property
    def times(self) -> list[float]:
        return self._times

    @property
    def is_vehicle(self) -> bool:
        return self.cls in VEHICLE_CLASSES

    @property
    def span(self) -> tuple[float, float]:
        if not self.detections:
            return (math.inf, -math.inf)
        return self._times[0], self._times[-1]

    def nearest_index(self, t: float, tolerance: float) -> int | None:
        times = self._times
        if not times:
            return None
        i = bisect.bisect_left(times, t)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(times):
                gap = abs(times[j] - t)
                if gap <= tolerance and (best is None or gap < abs(times[best] - t)):
                    best = j
        return best

    def state_at(self, t: float, tolerance: float) -> bool | None:
        """Ground-truth crossing state nearest to ``t`` (None when unknown)."""
        if self.state_labels is None:
            return None
        i = self.nearest_index(t, tolerance)
        return None if i is None else self.state_labels[i]


def sample_track(track: EntityTrack, t: float, tolerance: float) -> Detection | None:
    """Detection nearest to ``t`` if it lies within ``tolerance`` seconds.

    Ties between an earlier and a later detection go to the earlier one.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    i = track.nearest_index(t, tolerance)
    return None if i is None else track.detections[i]


@dataclass(frozen=True)
class CrosswalkEntrance:
    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self):
        a, b = _vec(self.a, 2, "crosswalk a"), _vec(self.b, 2, "crosswalk b")
        if a == b:
            raise SceneFormatError("crosswalk entrance endpoints coincide")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def midpoint(self) -> np.ndarray:
        return (np.asarray(self.a) + np.asarray(self.b)) / 2.0

    @property
    def entrance_vector(self) -> np.ndarray:
        return np.asarray(self.b) - np.asarray(self.a)


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    labels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.labels, dtype=np.uint8)
        if arr.ndim != 2:
            raise SceneFormatError("semantic grid must be 2-D (height, width)")
        if arr.size and arr.max() >= len(LABELS):
            raise SceneFormatError("semantic grid contains an unknown label")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, label: int = OTHER) -> "SemanticGrid":
        return cls(np.full((height, width), label, dtype=np.uint8))

    def to_rle(self) -> list[list[int]]:
        flat = self.labels.ravel()
        if flat.size == 0:
            return []
        edges = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], edges))
        counts = np.diff(np.concatenate((starts, [flat.size])))
        return [[int(flat[s]), int(c)] for s, c in zip(starts, counts)]

    @classmethod
    def from_rle(cls, width: int, height: int, rle: Sequence[Sequence[int]]) -> "SemanticGrid":
        try:
            values = [int(r[0]) for r in rle]
            counts = [int(r[1]) for r in rle]
        except (TypeError, ValueError, IndexError) as exc:
            raise SceneFormatError("semantic.rle: expected [label, count] pairs") from exc
        if any(c < 0 for c in counts) or sum(counts) != width * height:
            raise SceneFormatError(
                f"semantic.rle: run lengths sum to {sum(counts)}, expected {width * height}")
        flat = np.repeat(np.asarray(values, dtype=np.int64), counts)
        if flat.size and (flat.min() < 0 or flat.max() >= len(LABELS)):
            raise SceneFormatError("semantic.rle: unknown label code")
        return cls(flat.reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True)
class SceneBundle:
    tracks: tuple[EntityTrack, ...]
    crosswalks: tuple[CrosswalkEntrance, ...]
    semantics: SemanticGrid
    camera: CameraModel | None = None
    frame_rate: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        object.__setattr__(self, "crosswalks", tuple(self.crosswalks))
        if not (self.frame_rate > 0 and math.isfinite(self.frame_rate)):
            raise SceneFormatError("frame_rate must be positive")
        ids = [tr.id for tr in self.tracks]
        if len(set(ids)) != len(ids):
            raise SceneFormatError("duplicate track ids")

    def track(self, track_id: int) -> EntityTrack:
        for tr in self.tracks:
            if tr.id == track_id:
                return tr
        raise KeyError(track_id)

    @property
    def pedestrians(self) -> list[EntityTrack]:
        return [tr for tr in self.tracks if tr.cls == "Person"]

    @property
    def vehicles(self) -> list[EntityTrack]:
        return [tr for tr in self.tracks if tr.is_vehicle]

    @property
    def time_span(self) -> tuple[float, float]:
        spans = [tr.span for tr in self.tracks if tr.detections]
        if not spans:
            return (0.0, 0.0)
        return min(s[0] for s in spans), max(s[1] for s in spans)


# ---------------------------------------------------------------- records

def _dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def _floats(values) -> list[float]:
    return [float(v) for v in values]


def meta_record(scene: SceneBundle) -> dict:
    cam = None
    if scene.camera is not None:
        cam = {
            "K": _floats(scene.camera.intrinsic.ravel()),
            "R": _floats(scene.camera.rotation.ravel()),
            "t": _floats(scene.camera.translation),
        }
    return {
        "type": "meta",
        "frame_rate": float(scene.frame_rate),
        "crosswalks": [{"a": _floats(c.a), "b": _floats(c.b)} for c in scene.crosswalks],
        "semantic": {
            "width": scene.semantics.width,
            "height": scene.semantics.height,
            "rle": scene.semantics.to_rle(),
        },
        "camera": cam,
    }


def detection_record(track: EntityTrack, index: int) -> dict:
    det = track.detections[index]
    pose = None
    if det.pose is not None:
        pose = {name: _floats(xyz) for name, xyz in det.pose.joints.items()}
    toes = None
    if det.toe_points_2d is not None:
        toes = [_floats(p) for p in det.toe_points_2d]
    state = None
    if track.state_labels is not None and track.state_labels[index] is not None:
        state = STATES[int(track.state_labels[index])]
    return {
        "type": "det",
        "id": int(track.id),
        "class": track.cls,
        "t": float(det.timestamp),
        "bbox": _floats(det.bbox),
        "anchor": _floats(det.anchor_point),
        "pose": pose,
        "toes": toes,
        "state": state,
    }


def iter_records(scene: SceneBundle) -> Iterator[dict]:
    """Header then detections, ordered by (timestamp, track id)."""
    yield meta_record(scene)
    order = sorted(
        ((det.timestamp, tr.id, k, tr) for tr in scene.tracks for k, det in enumerate(tr.detections)),
        key=lambda x: (x[0], x[1]),
    )
    for _, _, k, tr in order:
        yield detection_record(tr, k)


def scene_to_text(scene: SceneBundle) -> str:
    return "".join(_dumps(r) + "\n" for r in iter_records(scene))


def save_scene(scene: SceneBundle, path) -> None:
    Path(path).write_text(scene_to_text(scene), encoding="utf-8")


def parse_meta(rec: Mapping) -> dict:
    """Validate a header record; returns the scene-level pieces."""
    try:
        frame_rate = float(rec["frame_rate"])
        sem = rec["semantic"]
        grid = SemanticGrid.from_rle(int(sem["width"]), int(sem["height"]), sem["rle"])
        crosswalks = [CrosswalkEntrance(tuple(c["a"]), tuple(c["b"])) for c in rec.get("crosswalks", [])]
        cam = rec.get("camera")
        camera = None
        if cam is not None:
            camera = CameraModel(_vec(cam["K"], 9, "camera.K"), _vec(cam["R"], 9, "camera.R"),
                                 _vec(cam["t"], 3, "camera.t"))
    except KeyError as exc:
        raise SceneFormatError(f"meta record: missing field {exc.args[0]!r}") from None
    return {"frame_rate": frame_rate, "crosswalks": crosswalks, "semantics": grid, "camera": camera}


def parse_detection(rec: Mapping) -> tuple[int, str, Detection, bool | None]:
    """Validate a ``det`` record into (track id, class, detection, state)."""
    where = f"det record (id={rec.get('id')!r}, t={rec.get('t')!r})"
    try:
        track_id = int(rec["id"])
        cls = rec["class"]
        t = float(rec["t"])
        bbox = rec["bbox"]
    except KeyError as exc:
        raise SceneFormatError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise SceneFormatError(f"{where}: malformed id or t") from None
    if cls not in CLASSES:
        raise SceneFormatError(f"{where}: unknown class {cls!r}")
    state = rec.get("state")
    if state is not None and state not in STATES:
        raise SceneFormatError(f"{where}: field 'state' must be one of {STATES} or null")
    try:
        pose = rec.get("pose")
        if pose is not None:
            pose = Pose3D(pose, t)
        det = Detection(t, bbox, rec.get("anchor"), pose, rec.get("toes"))
    except SceneFormatError as exc:
        raise SceneFormatError(f"{where}: {exc}") from None
    return track_id, cls, det, (None if state is None else state == "crossing")


class TrackAccumulator:
    """Collects detection records into per-entity lists."""

    def __init__(self):
        self.classes: dict[int, str] = {}
        self.dets: dict[int, list[Detection]] = {}
        self.states: dict[int, list[bool | None]] = {}

    def add(self, track_id: int, cls: str, det: Detection, state: bool | None) -> None:
        known = self.classes.setdefault(track_id, cls)
        if known != cls:
            raise SceneFormatError(f"track {track_id}: class changed from {known} to {cls}")
        dets = self.dets.setdefault(track_id, [])
        if dets and det.timestamp <= dets[-1].timestamp:
            raise SceneFormatError(f"track {track_id}: non-monotone timestamps at t={det.timestamp}")
        dets.append(det)
        self.states.setdefault(track_id, []).append(state)

    def tracks(self) -> list[EntityTrack]:
        out = []
        for tid in sorted(self.dets):
            states = self.states[tid]
            labels = None if all(s is None for s in states) else tuple(states)
            out.append(EntityTrack(tid, self.classes[tid], tuple(self.dets[tid]), labels))
        return out


def scene_from_records(records: Iterable[Mapping]) -> SceneBundle:
    it = iter(records)
    try:
        head = next(it)
    except StopIteration:
        raise SceneFormatError("empty track file") from None
    if head.get("type") != "meta":
        raise SceneFormatError("first record must be the meta header")
    meta = parse_meta(head)
    acc = TrackAccumulator()
    for n, rec in enumerate(it, start=2):
        if rec.get("type") != "det":
            raise SceneFormatError(f"record {n}: field 'type' must be 'det'")
        acc.add(*parse_detection(rec))
    return SceneBundle(tuple(acc.tracks()), meta["crosswalks"], meta["semantics"],
                       meta["camera"], meta["frame_rate"])


def load_scene(path) -> SceneBundle:
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"record {n}: invalid JSON ({exc.msg})") from None
    return scene_from_records(records)
