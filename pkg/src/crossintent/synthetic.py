"""Deterministic synthetic intersections with exact ground truth.

The camera looks straight down on the ground plane from a fixed height, so
every object sits at the same depth and the height-ratio distance estimate
is exact.  World frame: x east, y up, z south; this is also the pose frame.

Scripts (the subject approaches a crosswalk from the north sidewalk):

``walk_through``        walks along the sidewalk past the crosswalk.
``approach_wait_cross`` turns toward the road, creeps to the curb, waits
                        ``ambiguity`` seconds and crosses.  Its crossing
                        interval starts on reaching the curb.
``approach_no_cross``   walks along the curb line to the same waiting spot,
                        faces the road for longer than ``ambiguity`` seconds,
                        then leaves.  Never crossing.
``cross_immediately``   turns toward the road and crosses without stopping.

While waiting, the crossing and non-crossing pedestrians look identical; only
the current-state flag tells them apart.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import project_point, yaw_rotation
from .measurement import KnowledgeBase
from .scene_model import (
    CROSSWALK, OTHER, ROAD, SIDEWALK,
    CameraModel, CrosswalkEntrance, Detection, EntityTrack, Pose3D, SceneBundle,
    SemanticGrid, save_scene,
)

SCRIPTS = ("walk_through", "approach_wait_cross", "approach_no_cross", "cross_immediately")
CONTEXT_MAX = 3.0
HORIZON_MAX = 2.0

IMAGE_W, IMAGE_H = 960, 540
FOCAL = 500.0
CAMERA_HEIGHT = 40.0

ROAD_HALF = 3.5          # road spans z in [-3.5, 3.5]
SIDEWALK_WIDTH = 4.0
CROSSWALK_HALF = 2.0     # crosswalk spans x in [-2, 2]
WALK_LANE = -5.5         # sidewalk walking line (z)
WAIT_Z = -4.0            # curb-side waiting spot (z)
CREEP_SPEED = 0.5
TURN_TIME = 0.5
LANES = (-1.75, 1.75)

# standing skeleton facing +z, person's left on +x, hip_mid at the origin
BASE_SKELETON = {
    "head_top": (0.0, 0.78, 0.0), "jaw": (0.0, 0.58, 0.03),
    "eye_l": (0.03, 0.66, 0.08), "eye_r": (-0.03, 0.66, 0.08),
    "neck": (0.0, 0.5, 0.0),
    "shoulder_l": (0.19, 0.45, 0.0), "shoulder_r": (-0.19, 0.45, 0.0),
    "elbow_l": (0.22, 0.17, 0.0), "elbow_r": (-0.22, 0.17, 0.0),
    "wrist_l": (0.23, -0.08, 0.0), "wrist_r": (-0.23, -0.08, 0.0),
    "hip_l": (0.1, 0.0, 0.0), "hip_r": (-0.1, 0.0, 0.0), "hip_mid": (0.0, 0.0, 0.0),
    "knee_l": (0.1, -0.45, 0.0), "knee_r": (-0.1, -0.45, 0.0),
    "ankle_l": (0.1, -0.88, 0.0), "ankle_r": (-0.1, -0.88, 0.0),
}
# forward (z) swing per unit gait amplitude; left side leads with +sin
SWING = {"knee": 0.25, "ankle": 0.45, "elbow": -0.1, "wrist": -0.2}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    script: str = "approach_wait_cross"
    n_pedestrians: int = 1
    n_vehicles: int = 2
    duration: float = 14.0
    noise: float = 0.0          # pixel jitter std; joints get noise / 100
    seed: int = 0
    ambiguity: float = 2.0      # seconds spent waiting at the curb after committing
    ped_speed: float | None = None
    height_jitter: float = 0.0  # std of physical heights in meters
    frame_rate: float = 30.0

    def validate(self) -> None:
        if self.script not in SCRIPTS:
            raise ScenarioError(f"unknown script {self.script!r}; choose from {SCRIPTS}")
        if self.duration < CONTEXT_MAX + HORIZON_MAX:
            raise ScenarioError(
                f"duration {self.duration:g} s is shorter than context_max + horizon_max "
                f"= {CONTEXT_MAX + HORIZON_MAX:g} s")
        if self.noise < 0 or self.height_jitter < 0 or self.ambiguity < 0:
            raise ScenarioError("noise, height_jitter and ambiguity must be non-negative")
        if self.n_pedestrians < 1 or self.n_vehicles < 0:
            raise ScenarioError("need at least one pedestrian and a non-negative vehicle count")
        if not self.frame_rate > 0:
            raise ScenarioError("frame_rate must be positive")


@dataclass
class PedestrianTruth:
    track_id: int
    script: str
    walk_speed: float
    crossing_onset: float | None
    crossing_end: float | None
    times: np.ndarray
    positions: np.ndarray        # (T, 2) ground-plane (x, z) in meters
    headings: np.ndarray         # (T,) orientation angle in degrees


@dataclass
class VehicleTruth:
    track_id: int
    cls: str
    speed: float
    times: np.ndarray
    positions: np.ndarray


@dataclass
class GroundTruth:
    pedestrians: list = field(default_factory=list)
    vehicles: list = field(default_factory=list)
    meters_per_pixel: float = CAMERA_HEIGHT / FOCAL


def scene_camera() -> CameraModel:
    K = [[FOCAL, 0.0, IMAGE_W / 2], [0.0, FOCAL, IMAGE_H / 2], [0.0, 0.0, 1.0]]
    R = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]
    return CameraModel(np.array(K), np.array(R), np.array([0.0, 0.0, CAMERA_HEIGHT]))


def ground_to_pixel(camera: CameraModel, x: float, z: float) -> np.ndarray:
    return project_point((x, 0.0, z), camera)


def _pixel_extent(meters: float) -> float:
    return FOCAL * meters / CAMERA_HEIGHT


def scene_semantics(camera: CameraModel) -> SemanticGrid:
    grid = np.full((IMAGE_H, IMAGE_W), OTHER, dtype=np.uint8)
    scale = FOCAL / CAMERA_HEIGHT
    row = lambda z: int(round(IMAGE_H / 2 + z * scale))
    col = lambda x: int(round(IMAGE_W / 2 + x * scale))
    grid[row(-ROAD_HALF - SIDEWALK_WIDTH):row(ROAD_HALF + SIDEWALK_WIDTH), :] = SIDEWALK
    grid[row(-ROAD_HALF):row(ROAD_HALF), :] = ROAD
    grid[row(-ROAD_HALF):row(ROAD_HALF), col(-CROSSWALK_HALF):col(CROSSWALK_HALF)] = CROSSWALK
    return SemanticGrid(grid)


def scene_crosswalks(camera: CameraModel) -> list[CrosswalkEntrance]:
    out = []
    for z in (-ROAD_HALF, ROAD_HALF):
        a = ground_to_pixel(camera, -CROSSWALK_HALF, z)
        b = ground_to_pixel(camera, CROSSWALK_HALF, z)
        out.append(CrosswalkEntrance(tuple(a), tuple(b)))
    return out


def heading_angle(dx: float, dz: float) -> float:
    """Orientation angle (degrees) of a ground-plane heading."""
    return math.degrees(math.atan2(dz, -dx)) % 360.0


def _interp_angle(a: float, b: float, w: float) -> float:
    delta = (b - a + 180.0) % 360.0 - 180.0
    return (a + w * delta) % 360.0


class _Path:
    """Piecewise motion of one pedestrian: positions, headings and speed over time."""

    def __init__(self, start, heading: float):
        self.segments = []      # (t0, t1, p0, p1, h0, h1)
        self.pos = np.asarray(start, dtype=float)
        self.heading = heading
        self.t = 0.0

    def move(self, target, duration: float, heading: float | None = None):
        target = np.asarray(target, dtype=float)
        if heading is None:
            d = target - self.pos
            heading = heading_angle(d[0], d[1]) if np.linalg.norm(d) > 0 else self.heading
        self.segments.append((self.t, self.t + duration, self.pos, target, heading, heading))
        self.t += duration
        self.pos, self.heading = target, heading

    def walk(self, target, speed: float):
        dist = float(np.linalg.norm(np.asarray(target, float) - self.pos))
        self.move(target, dist / speed)

    def turn(self, heading: float, duration: float = TURN_TIME):
        self.segments.append((self.t, self.t + duration, self.pos, self.pos, self.heading, heading))
        self.t += duration
        self.heading = heading

    def wait(self, duration: float):
        self.turn(self.heading, duration)

    def at(self, t: float):
        t0, t1, p0, p1, h0, h1 = self.segments[0]
        if t < t0 and t1 > t0:
            # before the scripted start: extend the first segment backwards
            vel = (p1 - p0) / (t1 - t0)
            return p0 + vel * (t - t0), h0, float(np.linalg.norm(vel))
        for t0, t1, p0, p1, h0, h1 in self.segments:
            if t <= t1:
                w = 0.0 if t1 == t0 else min(max((t - t0) / (t1 - t0), 0.0), 1.0)
                speed = float(np.linalg.norm(p1 - p0)) / (t1 - t0) if t1 > t0 else 0.0
                return p0 + w * (p1 - p0), _interp_angle(h0, h1, w), speed
        t0, t1, p0, p1, h0, h1 = self.segments[-1]
        # keep walking along the final segment direction
        if t1 > t0 and np.linalg.norm(p1 - p0) > 0:
            vel = (p1 - p0) / (t1 - t0)
            return p1 + vel * (t - t1), h1, float(np.linalg.norm(vel))
        return p1, h1, 0.0


def _script_path(script: str, walk: float, ambiguity: float, duration: float, east: bool,
                 rng: np.random.Generator):
    """Build the subject's path; returns (path, key event time, crossing onset or None)."""
    along = heading_angle(1.0 if east else -1.0, 0.0)   # heading while walking along the sidewalk
    sign = -1.0 if east else 1.0           # start on the west side when walking east
    south = heading_angle(0.0, 1.0)
    if script == "walk_through":
        x0 = sign * walk * duration / 2.0
        p = _Path((x0, WALK_LANE), along)
        p.walk((-x0, WALK_LANE), walk)
        return p, duration / 2.0, None
    if script == "approach_no_cross":
        lead = 2.0 + 4.0 * walk
        p = _Path((sign * lead, WAIT_Z), along)
        p.walk((0.0, WAIT_Z), walk)
        arrive = p.t
        p.turn(south)
        p.wait(ambiguity + TURN_TIME + rng.uniform(1.0, 2.0))
        p.turn(along)
        p.walk((-sign * 60.0, WAIT_Z), walk)
        return p, arrive, None
    lead = 2.0 + 4.0 * walk
    p = _Path((sign * lead, WALK_LANE), along)
    p.walk((0.0, WALK_LANE), walk)
    p.turn(south)
    if script == "approach_wait_cross":
        p.walk((0.0, WAIT_Z), CREEP_SPEED)
        onset = p.t
        p.wait(ambiguity)
    else:
        p.walk((0.0, WAIT_Z), walk)
        onset = p.t
    p.walk((0.0, 30.0), walk)
    return p, onset, onset


def _crossing_end(states, times, onset):
    if onset is None:
        return None
    after = [t for t, s, s_next in zip(times, states, states[1:]) if s and not s_next]
    return float(after[0]) if after else None


def _pose_at(heading: float, phase: float, amplitude: float, rng, joint_noise: float,
             timestamp: float = 0.0) -> Pose3D:
    joints = {}
    s = math.sin(phase)
    for name, (x, y, z) in BASE_SKELETON.items():
        part, _, side = name.partition("_")
        if part in SWING:
            z += SWING[part] * amplitude * (s if side == "l" else -s)
        joints[name] = np.array([x, y, z])
    rot = yaw_rotation(heading - 90.0)
    out = {}
    for name, v in joints.items():
        w = rot @ v
        if joint_noise > 0:
            w = w + rng.normal(0.0, joint_noise, 3)
        out[name] = tuple(float(c) for c in w)
    return Pose3D(out, timestamp)


def _jitter(rng, values, std):
    values = np.asarray(values, dtype=float)
    return values + rng.normal(0.0, std, values.shape) if std > 0 else values


def generate_scene(spec: ScenarioSpec) -> tuple[SceneBundle, GroundTruth]:
    """Render a scripted scene; identical specs give identical scenes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    kb = KnowledgeBase()
    cam = scene_camera()
    fr = spec.frame_rate
    n_frames = int(math.floor(spec.duration * fr + 1e-9)) + 1
    times = np.arange(n_frames) / fr
    truth = GroundTruth()
    tracks = []

    walk = spec.ped_speed if spec.ped_speed is not None else float(rng.uniform(1.2, 1.5))
    east = bool(rng.integers(2))
    path, key_p, onset_p = _script_path(spec.script, walk, spec.ambiguity, spec.duration, east, rng)
    # the script's key event lands on a frame at a fixed fraction of the scene
    frac = 0.5 if spec.script == "walk_through" else 0.4
    key_s = round(frac * spec.duration * fr) / fr
    shift = key_p - key_s
    onset = None if onset_p is None else key_s
    for j in range(spec.n_pedestrians):
        offset = 0.0 if j == 0 else (-1.0) ** j * 0.8 * math.ceil(j / 2)
        tid = j + 1
        height = kb.height("Person") + (rng.normal(0, spec.height_jitter) if spec.height_jitter else 0.0)
        h_px = _pixel_extent(height)
        dets, states, pos_log, head_log = [], [], [], []
        phase = float(rng.uniform(0, 2 * math.pi))
        prev_t = None
        for t in times:
            pos, heading, speed = path.at(t + shift)
            x, z = pos[0] + offset, pos[1]
            if prev_t is not None:
                phase += 2 * math.pi * 0.9 * (speed / 1.4) * (t - prev_t)
            prev_t = t
            amplitude = min(speed / 1.4, 1.2)
            pose = _pose_at(heading, phase, amplitude, rng, spec.noise / 100.0, float(t))
            anchor = _jitter(rng, ground_to_pixel(cam, x, z), spec.noise)
            rot = yaw_rotation(heading - 90.0)
            toes = []
            for ankle in ("ankle_l", "ankle_r"):
                a = rot @ np.asarray(BASE_SKELETON[ankle])
                toes.append(tuple(_jitter(rng, ground_to_pixel(cam, x + a[0], z + a[2]), spec.noise)))
            hh = h_px + (rng.normal(0, spec.noise) if spec.noise else 0.0)
            hh = max(hh, 1.0)
            bbox = (anchor[0] - 0.2 * hh, anchor[1] - 0.5 * hh, anchor[0] + 0.2 * hh, anchor[1] + 0.5 * hh)
            dets.append(Detection(float(t), bbox, tuple(anchor), pose, tuple(toes)))
            crossing = onset is not None and onset - 1e-9 <= t and z <= ROAD_HALF
            states.append(bool(crossing))
            pos_log.append((x, z))
            head_log.append(heading)
        tracks.append(EntityTrack(tid, "Person", tuple(dets), tuple(states)))
        truth.pedestrians.append(PedestrianTruth(
            tid, spec.script, walk, onset, _crossing_end(states, times, onset), times.copy(),
            np.asarray(pos_log), np.asarray(head_log)))

    for i in range(spec.n_vehicles):
        tid = 100 + i
        cls = str(rng.choice(["Car", "Car", "Car", "Bus", "Truck"]))
        height = kb.height(cls) + (rng.normal(0, spec.height_jitter) if spec.height_jitter else 0.0)
        lane = LANES[i % 2]
        direction = 1.0 if lane > 0 else -1.0          # south lane drives east
        speed = float(rng.uniform(8.0, 12.0))
        half_w = IMAGE_W / 2 * CAMERA_HEIGHT / FOCAL
        enter = float(rng.uniform(-0.5, 0.6)) * spec.duration
        length = {"Car": 4.5, "Bus": 12.0, "Truck": 9.0}[cls]
        h_px = _pixel_extent(height)
        dets, pos_log, t_log = [], [], []
        for t in times:
            x = direction * (-half_w + speed * (t - enter))
            if not -half_w <= x <= half_w:
                continue
            anchor = _jitter(rng, ground_to_pixel(cam, x, lane), spec.noise)
            hh = max(h_px + (rng.normal(0, spec.noise) if spec.noise else 0.0), 1.0)
            l_px = _pixel_extent(length)
            u0, u1 = (anchor[0] - l_px, anchor[0]) if direction > 0 else (anchor[0], anchor[0] + l_px)
            bbox = (u0, anchor[1] - 0.5 * hh, u1, anchor[1] + 0.5 * hh)
            dets.append(Detection(float(t), bbox, tuple(anchor)))
            pos_log.append((x, lane))
            t_log.append(t)
        if dets:
            tracks.append(EntityTrack(tid, cls, tuple(dets)))
            truth.vehicles.append(VehicleTruth(tid, cls, speed, np.asarray(t_log), np.asarray(pos_log)))

    scene = SceneBundle(tuple(tracks), tuple(scene_crosswalks(cam)), scene_semantics(cam), cam, fr)
    return scene, truth


def generate_orientation_set(n: int, seed: int = 0, joint_noise: float = 0.0,
                             angle_jitter: float = 0.0) -> list[tuple[Pose3D, float]]:
    """Upright poses facing known angles on a uniform grid over [0, 360).

    ``angle_jitter`` perturbs each grid angle uniformly by up to that many
    degrees; ``joint_noise`` adds Gaussian noise to every joint coordinate.
    """
    if n < 1:
        raise ScenarioError("n must be at least 1")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        angle = 360.0 * k / n
        if angle_jitter > 0:
            angle = (angle + rng.uniform(-angle_jitter, angle_jitter)) % 360.0
        phase = float(rng.uniform(0, 2 * math.pi))
        amplitude = float(rng.uniform(0.0, 0.6))
        out.append((_pose_at(angle, phase, amplitude, rng, joint_noise), angle))
    return out


def scenario_suite(n_scenes: int, seed: int = 0, splits=(0.7, 0.15, 0.15), **overrides):
    """Specs cycling through all scripts, with a by-scene train/val/test assignment."""
    specs, assignment = [], []
    n_train = int(round(splits[0] * n_scenes))
    n_val = int(round(splits[1] * n_scenes))
    order = np.random.default_rng(seed).permutation(n_scenes)
    names = np.empty(n_scenes, dtype=object)
    names[order[:n_train]] = "train"
    names[order[n_train:n_train + n_val]] = "val"
    names[order[n_train + n_val:]] = "test"
    for i in range(n_scenes):
        params = {"script": SCRIPTS[i % len(SCRIPTS)], "seed": seed * 100003 + i, **overrides}
        specs.append(ScenarioSpec(**params))
        assignment.append(str(names[i]))
    return specs, assignment


def write_suite(specs, splits, out_dir) -> Path:
    """Write one track file per spec plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (spec, split) in enumerate(zip(specs, splits)):
        scene, _ = generate_scene(spec)
        name = f"scene_{i:03d}.jsonl"
        save_scene(scene, out / name)
        entries.append({"file": name, "split": split, "spec": asdict(spec)})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"scenes": entries}, indent=2) + "\n")
    return manifest


def read_manifest(path):
    """(scene paths, split names, scene ids) listed by a manifest."""
    path = Path(path)
    data = json.loads(path.read_text())
    files = [path.parent / e["file"] for e in data["scenes"]]
    splits = [e.get("split") for e in data["scenes"]]
    return files, splits, [Path(e["file"]).stem for e in data["scenes"]]
