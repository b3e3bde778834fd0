"""Intention features, per-tick vector assembly and 15 Hz temporal windows.

Vector layout (0-indexed)::

    0..41  pose (14 joints x xyz)      46  vehicle speed
    42     group size                  47  crosswalk distance
    43     pedestrian speed            48  crosswalk angle
    44     vehicle distance            49  location semantics
    45     vehicle-pedestrian angle    50  current state (optional)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import GeometryError, body_orientation, cosine_gap, project_direction
from .measurement import (
    KnowledgeBase,
    MeasurementError,
    NormalizationFactors,
    estimate_distance,
    normalize_distance,
    pedestrian_speed,
    pixel_scale,
    vehicle_speed,
)
from .scene_model import (
    FEATURE_JOINTS,
    LABELS,
    Detection,
    EntityTrack,
    Pose3D,
    SceneBundle,
    SemanticGrid,
    sample_track,
)

SAMPLE_RATE = 15.0
BASE_DIM = 50
POSE_DIM = 42
SLOT = {
    "group_size": 42, "ped_speed": 43, "veh_distance": 44, "v2p_angle": 45,
    "veh_speed": 46, "cw_distance": 47, "cw_angle": 48, "location": 49, "state": 50,
}
TOE_STENCIL = ((2, 0), (-2, 0), (0, 2), (0, -2), (2, 2), (2, -2), (-2, 2), (-2, -2))
N_LABELS = len(LABELS)


class FeatureError(ValueError):
    pass


class FeatureUnavailable(FeatureError):
    """The subject has no usable detection/pose at the requested tick."""


@dataclass(frozen=True)
class FeatureConfig:
    kb: KnowledgeBase = field(default_factory=KnowledgeBase)
    norms: NormalizationFactors = field(default_factory=NormalizationFactors)
    distance_norm: str = "exp"
    with_state: bool = False
    speed_window: float = 0.5
    approach_lookback: float = 0.5
    sample_tolerance: float = 1.0 / SAMPLE_RATE
    group_radius: float = 2.5
    feature_joints: tuple = FEATURE_JOINTS

    def __post_init__(self):
        if self.distance_norm not in ("exp", "div"):
            raise ValueError("distance_norm must be 'exp' or 'div'")
        if len(self.feature_joints) * 3 != POSE_DIM:
            raise ValueError("exactly 14 feature joints are required")

    @property
    def dim(self) -> int:
        return BASE_DIM + int(self.with_state)


def feature_names(with_state: bool = False) -> list[str]:
    names = [f"{j}.{ax}" for j in FEATURE_JOINTS for ax in "xyz"]
    names += ["group_size", "ped_speed", "veh_distance", "v2p_angle", "veh_speed",
              "cw_distance", "cw_angle", "location"]
    if with_state:
        names.append("state")
    return names


def slot_count(context_length: float) -> int:
    """Number of 15 Hz slots in a context window, rounding half up."""
    return int(math.floor(SAMPLE_RATE * context_length + 0.5))


# ------------------------------------------------------------ single features

def context_for_slots(n_slots: int) -> float:
    """Shortest-rounding context length (s) that yields ``n_slots`` slots."""
    return (n_slots - 0.5) / SAMPLE_RATE


def pose_feature(pose: Pose3D, joints: Sequence[str] = FEATURE_JOINTS) -> np.ndarray:
    missing = [j for j in joints if j not in pose.joints]
    if missing:
        raise FeatureError(f"missing joint(s): {', '.join(missing)}")
    return np.concatenate([np.asarray(pose.joints[j], dtype=float) for j in joints])


def group_size(subject: EntityTrack, scene: SceneBundle, t: float,
               kb: KnowledgeBase | None = None, radius: float = 2.5,
               tolerance: float = 1.0 / SAMPLE_RATE) -> int:
    """Pedestrians, the subject included, within ``radius`` meters at ``t``."""
    kb = kb or KnowledgeBase()
    me = sample_track(subject, t, tolerance)
    if me is None:
        raise FeatureError(f"pedestrian {subject.id}: no detection near t={t:g}")
    count = 1
    for other in scene.tracks:
        if other.cls != "Person" or other.id == subject.id:
            continue
        det = sample_track(other, t, tolerance)
        if det is not None and estimate_distance(me, "Person", det, "Person", kb) <= radius:
            count += 1
    return count


def closest_approaching_vehicle(subject: EntityTrack, scene: SceneBundle, t: float,
                                lookback: float = 0.5, kb: KnowledgeBase | None = None,
                                tolerance: float = 1.0 / SAMPLE_RATE):
    """Nearest vehicle whose distance to the subject shrank over ``lookback``.

    Returns ``(track, distance_m)`` or None.
    """
    if not lookback > 0:
        raise ValueError("lookback must be positive")
    kb = kb or KnowledgeBase()
    me_now = sample_track(subject, t, tolerance)
    me_before = sample_track(subject, t - lookback, tolerance)
    if me_now is None or me_before is None:
        return None
    best = None
    for veh in scene.tracks:
        if not veh.is_vehicle:
            continue
        now = sample_track(veh, t, tolerance)
        before = sample_track(veh, t - lookback, tolerance)
        if now is None or before is None:
            continue
        d_now = estimate_distance(me_now, "Person", now, veh.cls, kb)
        d_before = estimate_distance(me_before, "Person", before, veh.cls, kb)
        if d_now - d_before < 0 and (best is None or d_now < best[1]):
            best = (veh, d_now)
    return best


def v2p_angle(body_direction, vehicle: EntityTrack, t1: float, t2: float,
              tolerance: float = 1.0 / SAMPLE_RATE) -> float:
    """``1 - cos`` between the image-plane body direction and the vehicle's displacement."""
    a = sample_track(vehicle, t1, tolerance)
    b = sample_track(vehicle, t2, tolerance)
    if a is None or b is None:
        raise FeatureError(f"vehicle {vehicle.id}: missing detection in [{t1:g}, {t2:g}]")
    try:
        return cosine_gap(body_direction, b.anchor - a.anchor)
    except GeometryError as exc:
        raise FeatureError(str(exc)) from None


def crosswalk_context(subject_det: Detection, scene: SceneBundle, body_direction,
                      kb: KnowledgeBase | None = None) -> tuple[float, float]:
    """Distance (m) to the nearest crosswalk entrance midpoint and ``1 - cos`` to its line."""
    kb = kb or KnowledgeBase()
    if not scene.crosswalks:
        raise FeatureError("no crosswalks")
    scale = pixel_scale(subject_det, "Person", kb)
    dists = [float(np.linalg.norm(subject_det.anchor - cw.midpoint)) * scale
             for cw in scene.crosswalks]
    k = int(np.argmin(dists))
    try:
        angle = cosine_gap(body_direction, scene.crosswalks[k].entrance_vector)
    except GeometryError:
        raise FeatureError("degenerate body orientation") from None
    return dists[k], angle


def location_semantics(det: Detection, grid: SemanticGrid) -> float:
    """Majority label under 8 pixels around each toe, as ``code / 4``.

    Ties go to the highest label code.
    """
    if det.toe_points_2d is None:
        raise FeatureError("missing toe points")
    votes = np.zeros(N_LABELS, dtype=int)
    for u, v in det.toe_points_2d:
        cu, cv = int(round(u)), int(round(v))
        for du, dv in TOE_STENCIL:
            x = min(max(cu + du, 0), grid.width - 1)
            y = min(max(cv + dv, 0), grid.height - 1)
            votes[grid.labels[y, x]] += 1
    winner = N_LABELS - 1 - int(np.argmax(votes[::-1]))
    return winner / (N_LABELS - 1)


# ------------------------------------------------------------- assembly

def body_direction_2d(subject: EntityTrack, det: Detection, scene: SceneBundle, t: float,
                      cfg: FeatureConfig):
    """Body facing direction in the image plane, or None when undefined.

    Uses the projected torso normal when a camera is known, otherwise the hip
    anchor's displacement over the speed window.
    """
    if scene.camera is not None and det.pose is not None:
        try:
            d = project_direction(body_orientation(det.pose).direction, scene.camera)
        except (GeometryError, KeyError):
            d = None
        if d is not None and np.linalg.norm(d) > 1e-9:
            return d
        return None
    earlier = sample_track(subject, t - cfg.speed_window, cfg.sample_tolerance)
    if earlier is None:
        return None
    d = det.anchor - earlier.anchor
    return d if np.linalg.norm(d) > 1e-9 else None


def _distance_feature(d: float, n: float, mode: str) -> float:
    return normalize_distance(d, n) if mode == "exp" else d / n


def assemble_feature(subject: EntityTrack, scene: SceneBundle, t: float,
                     cfg: FeatureConfig | None = None) -> np.ndarray:
    """The 50-dim (51 with state) feature vector of ``subject`` at ``t``.

    Undefined interaction terms (no approaching vehicle, no crosswalk, unknown
    facing direction) contribute zeros.
    """
    cfg = cfg or FeatureConfig()
    tol, kb, nf = cfg.sample_tolerance, cfg.kb, cfg.norms
    det = sample_track(subject, t, tol)
    if det is None:
        raise FeatureUnavailable(f"pedestrian {subject.id}: no detection near t={t:g}")
    if det.pose is None or not det.pose.has(cfg.feature_joints):
        raise FeatureUnavailable(f"pedestrian {subject.id}: no feature-complete pose at t={t:g}")

    x = np.zeros(cfg.dim)
    x[:POSE_DIM] = pose_feature(det.pose, cfg.feature_joints) / nf.pose
    x[SLOT["group_size"]] = group_size(subject, scene, t, kb, cfg.group_radius, tol) / nf.group

    t_prev = t - cfg.speed_window
    if sample_track(subject, t_prev, tol) is not None:
        x[SLOT["ped_speed"]] = pedestrian_speed(subject, t_prev, t, kb, tol) / nf.pedestrian_speed

    body = body_direction_2d(subject, det, scene, t, cfg)

    hit = closest_approaching_vehicle(subject, scene, t, cfg.approach_lookback, kb, tol)
    if hit is not None:
        veh, d_veh = hit
        x[SLOT["veh_distance"]] = _distance_feature(d_veh, nf.vehicle_distance, cfg.distance_norm)
        t_back = t - cfg.approach_lookback
        if body is not None:
            try:
                x[SLOT["v2p_angle"]] = v2p_angle(body, veh, t_back, t, tol) / nf.v2p_angle
            except FeatureError:
                pass
        try:
            x[SLOT["veh_speed"]] = vehicle_speed(veh, t_back, t, kb, tol) / nf.vehicle_speed
        except MeasurementError:
            pass

    if scene.crosswalks:
        scale = pixel_scale(det, "Person", kb)
        dists = [float(np.linalg.norm(det.anchor - cw.midpoint)) * scale for cw in scene.crosswalks]
        k = int(np.argmin(dists))
        x[SLOT["cw_distance"]] = _distance_feature(dists[k], nf.crosswalk_distance, cfg.distance_norm)
        if body is not None:
            x[SLOT["cw_angle"]] = cosine_gap(body, scene.crosswalks[k].entrance_vector) / nf.crosswalk_angle

    if det.toe_points_2d is None:
        # without toes the anchor stands in for both feet
        det = Detection(det.timestamp, det.bbox, det.anchor_point, None, (det.anchor_point,) * 2)
    x[SLOT["location"]] = location_semantics(det, scene.semantics) / nf.location

    if cfg.with_state:
        state = subject.state_at(t, tol)
        x[SLOT["state"]] = 1.0 if state else 0.0
    if not np.all(np.isfinite(x)):
        raise FeatureError(f"pedestrian {subject.id}: non-finite feature at t={t:g}")
    return x


# ------------------------------------------------------------- windows

@dataclass(frozen=True, eq=False)
class FeatureWindow:
    vectors: np.ndarray          # (slots, dim)
    presence_mask: np.ndarray    # (slots,) bool
    t_end: float
    context_length: float
    ped_id: int = -1

    @property
    def slot_times(self) -> np.ndarray:
        n = self.vectors.shape[0]
        return self.t_end - (np.arange(n)[::-1]) / SAMPLE_RATE


def _tick(t: float) -> int:
    return int(round(t * SAMPLE_RATE))


def window_tick_range(subject: EntityTrack, n_slots: int, horizon: float | None = None,
                      slack: float = 0.0) -> range:
    """15 Hz ticks ``k`` (window end ``k/15``) whose context lies inside the track span.

    ``slack`` lets the last window end that far past the final detection,
    which is as far as sampling can reach.
    """
    t0, t1 = subject.span
    if not subject.detections:
        return range(0)
    first = math.ceil(t0 * SAMPLE_RATE - 1e-6)
    last = math.floor((t1 + slack) * SAMPLE_RATE + 1e-6)
    if horizon is not None:
        last = math.floor((t1 - horizon) * SAMPLE_RATE + 1e-6)
    return range(first + n_slots - 1, last + 1)


class SlotCache:
    """Per-tick feature vectors of one subject, computed at most once."""

    def __init__(self, subject: EntityTrack, scene: SceneBundle, cfg: FeatureConfig):
        self.subject, self.scene, self.cfg = subject, scene, cfg
        self._cache: dict[int, np.ndarray | None] = {}

    def get(self, k: int) -> np.ndarray | None:
        if k not in self._cache:
            try:
                self._cache[k] = assemble_feature(self.subject, self.scene, k / SAMPLE_RATE, self.cfg)
            except FeatureUnavailable:
                self._cache[k] = None
        return self._cache[k]

    def window(self, k_end: int, n_slots: int, context_length: float) -> FeatureWindow | None:
        """Window ending at tick ``k_end``; None if the final slot is missing."""
        if self.get(k_end) is None:
            return None
        X = np.zeros((n_slots, self.cfg.dim))
        mask = np.zeros(n_slots, dtype=bool)
        for i, k in enumerate(range(k_end - n_slots + 1, k_end + 1)):
            v = self.get(k)
            if v is not None:
                X[i] = v
                mask[i] = True
        return FeatureWindow(X, mask, k_end / SAMPLE_RATE, context_length, self.subject.id)


def build_windows(subject: EntityTrack, scene: SceneBundle, context_length: float,
                  horizon=1.5, cfg: FeatureConfig | None = None, labelled: bool = True,
                  stride: int = 1):
    """Sliding 15 Hz windows of ``subject`` paired with future crossing labels.

    ``horizon`` may be a single value or a sequence (one label per horizon).
    With ``labelled=False`` labels are None and the future need not exist.
    ``stride`` keeps every stride-th window end, counted on the absolute tick grid.
    """
    cfg = cfg or FeatureConfig()
    if not 0 < context_length <= 3.0 + 1e-9:
        raise FeatureError("context_length must lie in (0, 3] seconds")
    horizons = [float(h) for h in np.atleast_1d(horizon)]
    if any(not 0 <= h <= 3.0 for h in horizons):
        raise FeatureError("horizons must lie in [0, 3] seconds")
    n = slot_count(context_length)
    start, end = scene.time_span
    if labelled and end - start < (n - 1) / SAMPLE_RATE + max(horizons) - 1e-9:
        raise FeatureError(
            f"scene spans {end - start:g} s, shorter than context {context_length:g} s + horizon {max(horizons):g} s")
    cache = SlotCache(subject, scene, cfg)
    out = []
    ticks = window_tick_range(subject, n, max(horizons)) if labelled else \
        window_tick_range(subject, n, None, cfg.sample_tolerance)
    if stride < 1:
        raise FeatureError("stride must be >= 1")
    for k in ticks:
        if k % stride:
            continue
        label = None
        if labelled:
            states = [subject.state_at(k / SAMPLE_RATE + h, cfg.sample_tolerance) for h in horizons]
            if any(s is None for s in states):
                continue
            label = int(states[0]) if np.ndim(horizon) == 0 else [int(s) for s in states]
        win = cache.window(k, n, context_length)
        if win is not None:
            out.append((win, label))
    return out


# ------------------------------------------------------------- datasets

@dataclass
class WindowDataset:
    """Stacked windows: ``X`` (N, slots, dim), ``mask`` (N, slots), ``y`` (N,) or (N, heads)."""

    X: np.ndarray
    mask: np.ndarray
    y: np.ndarray | None
    ped_id: np.ndarray
    scene: np.ndarray
    t_end: np.ndarray
    context: float
    horizon: float | list
    split: np.ndarray | None = None

    def __len__(self):
        return len(self.X)

    def subset(self, index) -> "WindowDataset":
        index = np.asarray(index)
        pick = lambda a: None if a is None else a[index]
        return WindowDataset(self.X[index], self.mask[index], pick(self.y), self.ped_id[index],
                             self.scene[index], self.t_end[index], self.context, self.horizon,
                             pick(self.split))

    def where_split(self, name: str) -> "WindowDataset":
        if self.split is None:
            raise ValueError("dataset carries no split assignment")
        return self.subset(np.flatnonzero(self.split == name))

    @property
    def multi_task(self) -> bool:
        return self.y is not None and self.y.ndim == 2


def extract_dataset(scenes, context_length: float, horizon=1.5, cfg: FeatureConfig | None = None,
                    scene_ids=None, splits=None, labelled: bool = True, stride: int = 1) -> WindowDataset:
    """Windows of every pedestrian in every scene, stacked into one dataset."""
    cfg = cfg or FeatureConfig()
    scene_ids = list(scene_ids) if scene_ids is not None else [str(i) for i in range(len(scenes))]
    n = slot_count(context_length)
    Xs, masks, ys, peds, sids, tends, spl = [], [], [], [], [], [], []
    for i, scene in enumerate(scenes):
        for ped in scene.pedestrians:
            for win, label in build_windows(ped, scene, context_length, horizon, cfg, labelled, stride):
                Xs.append(win.vectors)
                masks.append(win.presence_mask)
                ys.append(label)
                peds.append(ped.id)
                sids.append(scene_ids[i])
                tends.append(win.t_end)
                if splits is not None:
                    spl.append(splits[i])
    X = np.stack(Xs) if Xs else np.zeros((0, n, cfg.dim))
    mask = np.stack(masks) if masks else np.zeros((0, n), dtype=bool)
    y = np.asarray(ys, dtype=np.int64) if labelled else None
    if y is not None and not Xs:
        y = np.zeros((0,) if np.ndim(horizon) == 0 else (0, len(horizon)), dtype=np.int64)
    hz = float(horizon) if np.ndim(horizon) == 0 else [float(h) for h in horizon]
    return WindowDataset(X, mask, y, np.asarray(peds, dtype=np.int64), np.asarray(sids, dtype=object),
                         np.asarray(tends, dtype=float), float(context_length), hz,
                         np.asarray(spl, dtype=object) if splits is not None else None)


def save_dataset(ds: WindowDataset, path) -> None:
    """One JSON record per window."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(ds)):
            rec = {
                "ped_id": int(ds.ped_id[i]),
                "scene": str(ds.scene[i]),
                "split": None if ds.split is None else str(ds.split[i]),
                "t_end": float(ds.t_end[i]),
                "context": ds.context,
                "horizon": ds.horizon,
                "x": ds.X[i].tolist(),
                "mask": [bool(m) for m in ds.mask[i]],
                "y": None if ds.y is None else (ds.y[i].tolist() if ds.multi_task else int(ds.y[i])),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path) -> WindowDataset:
    recs = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not recs:
        raise FeatureError(f"{path}: empty dataset")
    try:
        X = np.asarray([r["x"] for r in recs], dtype=float)
        mask = np.asarray([r["mask"] for r in recs], dtype=bool)
        ys = [r.get("y") for r in recs]
        y = None if any(v is None for v in ys) else np.asarray(ys, dtype=np.int64)
        splits = [r.get("split") for r in recs]
        split = None if any(s is None for s in splits) else np.asarray(splits, dtype=object)
        ds = WindowDataset(X, mask, y, np.asarray([r["ped_id"] for r in recs], dtype=np.int64),
                           np.asarray([str(r.get("scene", "")) for r in recs], dtype=object),
                           np.asarray([r["t_end"] for r in recs], dtype=float),
                           float(recs[0]["context"]), recs[0]["horizon"], split)
    except (KeyError, ValueError) as exc:
        raise FeatureError(f"{path}: malformed dataset record ({exc})") from None
    if X.ndim != 3 or X.shape[2] not in (BASE_DIM, BASE_DIM + 1):
        raise FeatureError(f"{path}: feature rows must have {BASE_DIM} or {BASE_DIM + 1} entries")
    return ds
