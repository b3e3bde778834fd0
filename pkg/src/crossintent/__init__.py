"""Pedestrian crossing-intention prediction from 3D pose and scene context."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .features import FeatureConfig, WindowDataset, assemble_feature, build_windows, extract_dataset
from .geometry import angular_error, body_orientation, head_orientation, orientation_to_angle
from .measurement import KnowledgeBase, NormalizationFactors, estimate_distance, pedestrian_speed, vehicle_speed
from .scene_model import Pose3D, SceneBundle, load_scene, save_scene

__version__ = "0.1.0"


class BodyOrientationEstimator(BaseEstimator):
    """Torso-normal orientation angle of each pose; ``fit`` learns nothing.

    Only ``calibration_offset`` is configurable, so a grid search over it
    with an angular-error scorer recovers a camera offset.
    """

    def __init__(self, calibration_offset: float = 0.0, part: str = "body"):
        self.calibration_offset = calibration_offset
        self.part = part

    def fit(self, poses, y=None):
        if self.part not in ("body", "head"):
            raise ValueError("part must be 'body' or 'head'")
        self.n_samples_seen_ = len(poses)
        return self

    def predict(self, poses) -> np.ndarray:
        line = body_orientation if self.part == "body" else head_orientation
        return np.array([orientation_to_angle(line(p), self.calibration_offset) for p in poses])

    def score(self, poses, angles) -> float:
        """Negative mean circular error in degrees (higher is better)."""
        return -float(np.mean(angular_error(self.predict(poses), np.asarray(angles, dtype=float))))


class WindowExtractor(TransformerMixin, BaseEstimator):
    """Turns scenes into stacked feature windows (``transform``) and their labels."""

    def __init__(self, context_length: float = 0.5, horizon=1.5, with_state: bool = False,
                 distance_norm: str = "exp", stride: int = 1):
        self.context_length = context_length
        self.horizon = horizon
        self.with_state = with_state
        self.distance_norm = distance_norm
        self.stride = stride

    def fit(self, scenes, y=None):
        self.config_ = FeatureConfig(with_state=self.with_state, distance_norm=self.distance_norm)
        self.n_features_out_ = self.config_.dim
        return self

    def extract(self, scenes, scene_ids=None, splits=None, labelled: bool = True) -> WindowDataset:
        cfg = getattr(self, "config_", None) or self.fit(scenes).config_
        return extract_dataset(scenes, self.context_length, self.horizon, cfg, scene_ids, splits,
                               labelled, self.stride)

    def transform(self, scenes) -> np.ndarray:
        return self.extract(scenes, labelled=False).X


__all__ = [
    "BodyOrientationEstimator", "FeatureConfig", "KnowledgeBase", "NormalizationFactors", "Pose3D",
    "SceneBundle", "WindowDataset", "WindowExtractor", "angular_error", "assemble_feature",
    "body_orientation", "build_windows", "estimate_distance", "extract_dataset", "head_orientation",
    "load_scene", "orientation_to_angle", "pedestrian_speed", "save_scene", "vehicle_speed",
    "__version__",
]
