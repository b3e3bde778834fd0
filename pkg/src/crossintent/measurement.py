"""Metric reconstruction from pixels using class mean heights."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .scene_model import CLASSES, Detection, EntityTrack, sample_track

MIN_SPEED_WINDOW = 0.5


class MeasurementError(ValueError):
    pass


def _default_heights():
    return {"Person": 1.7, "Cyclist": 1.5, "Car": 1.5, "Bus": 2.5, "Truck": 3.0}


@dataclass(frozen=True)
class KnowledgeBase:
    """Mean physical height in meters of each object class."""

    mean_heights: dict = field(default_factory=_default_heights)

    def __post_init__(self):
        missing = set(CLASSES) - set(self.mean_heights)
        if missing:
            raise ValueError(f"knowledge base lacks classes {sorted(missing)}")
        if any(not (float(h) > 0) for h in self.mean_heights.values()):
            raise ValueError("mean heights must be positive")

    def height(self, cls: str) -> float:
        return float(self.mean_heights[cls])


@dataclass(frozen=True)
class NormalizationFactors:
    group: float = 10.0
    pedestrian_speed: float = 5.0
    vehicle_distance: float = 10.0
    v2p_angle: float = 1.0
    vehicle_speed: float = 10.0
    crosswalk_distance: float = 10.0
    crosswalk_angle: float = 1.0
    location: float = 1.0
    pose: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"normalization factor {f.name} must be positive")


def load_measurement_config(path) -> tuple[KnowledgeBase, NormalizationFactors]:
    """Read optional ``mean_heights`` / ``normalization`` overrides from JSON."""
    data = json.loads(Path(path).read_text())
    heights = {**_default_heights(), **data.get("mean_heights", {})}
    norms = replace(NormalizationFactors(), **data.get("normalization", {}))
    return KnowledgeBase(heights), norms


def measurement_config_dict(kb: KnowledgeBase, norms: NormalizationFactors) -> dict:
    return {"mean_heights": dict(kb.mean_heights), "normalization": asdict(norms)}


def pixel_scale(det: Detection, cls: str, kb: KnowledgeBase) -> float:
    """Meters per pixel at the detection, from its pixel height."""
    h = det.height_px
    if not h > 0:
        raise MeasurementError("zero pixel height")
    return kb.height(cls) / h


def estimate_distance(a: Detection, cls_a: str, b: Detection, cls_b: str,
                      kb: KnowledgeBase | None = None) -> float:
    """Planar distance in meters between two detections' anchor points."""
    kb = kb or KnowledgeBase()
    scale = 0.5 * (pixel_scale(a, cls_a, kb) + pixel_scale(b, cls_b, kb))
    du = a.anchor_point[0] - b.anchor_point[0]
    dv = a.anchor_point[1] - b.anchor_point[1]
    return scale * math.hypot(du, dv)


def normalize_distance(d, n_h: float = 10.0):
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise MeasurementError("negative distance")
    if not n_h > 0:
        raise MeasurementError("normalization factor must be positive")
    out = np.exp(-d_arr / n_h)
    return float(out) if out.ndim == 0 else out


def _pair(track: EntityTrack, t1: float, t2: float, tolerance: float):
    a = sample_track(track, t1, tolerance)
    b = sample_track(track, t2, tolerance)
    if a is None or b is None:
        missing = t1 if a is None else t2
        raise MeasurementError(f"track {track.id}: no detection near t={missing:g}")
    return a, b


def _elapsed(a: Detection, b: Detection) -> float:
    # sampled detections may sit up to the tolerance away from the request
    dt = b.timestamp - a.timestamp
    if not dt > 0:
        raise MeasurementError("both ends of the window sample the same detection")
    return dt


def pedestrian_speed(track: EntityTrack, t1: float, t2: float, kb: KnowledgeBase | None = None,
                     tolerance: float = 1 / 15) -> float:
    """Hip-anchor speed in m/s, scaled by the pedestrian's pixel height at ``t2``."""
    kb = kb or KnowledgeBase()
    dt = t2 - t1
    if dt < MIN_SPEED_WINDOW - 1e-12:
        raise MeasurementError(f"window too short: {dt:g} s < {MIN_SPEED_WINDOW} s")
    a, b = _pair(track, t1, t2, tolerance)
    disp = math.hypot(*(b.anchor - a.anchor))
    return disp / _elapsed(a, b) * pixel_scale(b, "Person", kb)


def vehicle_speed(track: EntityTrack, t1: float, t2: float, kb: KnowledgeBase | None = None,
                  tolerance: float = 1 / 15) -> float:
    """Anchor speed in m/s with the scale taken from the mean of both pixel heights."""
    kb = kb or KnowledgeBase()
    dt = t2 - t1
    if not dt > 0:
        raise MeasurementError("t2 must be after t1")
    a, b = _pair(track, t1, t2, tolerance)
    h_sum = a.height_px + b.height_px
    if not h_sum > 0:
        raise MeasurementError("zero pixel height")
    disp = math.hypot(*(b.anchor - a.anchor))
    return disp / _elapsed(a, b) * (2.0 * kb.height(track.cls) / h_sum)
