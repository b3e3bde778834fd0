import numpy as np
import pytest

from crossintent.scene_model import (
    SIDEWALK,
    CrosswalkEntrance,
    Detection,
    EntityTrack,
    Pose3D,
    SceneBundle,
    SemanticGrid,
)
from crossintent.synthetic import BASE_SKELETON, ScenarioSpec, generate_scene


def person_box(u, v_foot, height=170.0, width=40.0):
    """Bounding box whose bottom-centre is (u, v_foot)."""
    return (u - width / 2, v_foot - height, u + width / 2, v_foot)


def det(t, u, v, height=170.0, pose=None, toes=None):
    return Detection(t, person_box(u, v, height), (u, v), pose, toes)


def linear_track(track_id, cls, start, velocity, times, height=170.0, pose=None, states=None):
    dets = []
    for t in times:
        u = start[0] + velocity[0] * t
        v = start[1] + velocity[1] * t
        dets.append(det(t, u, v, height, pose))
    return EntityTrack(track_id, cls, tuple(dets), states)


def upright_pose():
    return Pose3D({k: v for k, v in BASE_SKELETON.items()})


def simple_scene(tracks, crosswalks=(), label=SIDEWALK, size=(400, 300), camera=None):
    return SceneBundle(tuple(tracks), tuple(crosswalks), SemanticGrid.filled(*size, label), camera, 30.0)


@pytest.fixture
def pose():
    return upright_pose()


@pytest.fixture(scope="session")
def wait_cross_scene():
    return generate_scene(ScenarioSpec("approach_wait_cross", n_pedestrians=2, n_vehicles=3, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def crosswalk():
    return CrosswalkEntrance((100.0, 200.0), (300.0, 200.0))


@pytest.fixture(scope="session")
def small_model():
    """A quickly trained GRU (2 x 32, with state) on a small scripted suite."""
    from crossintent.classifiers import IntentionClassifier
    from crossintent.features import FeatureConfig, extract_dataset
    from crossintent.synthetic import scenario_suite

    specs, splits = scenario_suite(24, seed=11, n_vehicles=2)
    ds = extract_dataset([generate_scene(s)[0] for s in specs], 0.5, 1.5, FeatureConfig(with_state=True),
                         splits=splits, stride=3)
    tr, va = ds.where_split("train"), ds.where_split("val")
    return IntentionClassifier("GRU", 2, 32, max_epochs=40, patience=6).fit(
        tr.X, tr.y, tr.mask, eval_set=(va.X, va.y, va.mask))


class _Learned:
    """Scripted intention suite plus GRU (3 x 128) models trained with and without state."""

    def __init__(self):
        import time

        from crossintent.features import FeatureConfig, extract_dataset
        from crossintent.synthetic import scenario_suite

        self.specs, self.splits = scenario_suite(58, seed=1)
        self.scenes = [generate_scene(s)[0] for s in self.specs]
        self.data, self.models, self.seconds = {}, {}, {}
        for state in (True, False):
            self.data[state] = extract_dataset(self.scenes, 0.5, 1.5, FeatureConfig(with_state=state),
                                               splits=self.splits, stride=3)
        self._time = time.perf_counter

    def model(self, with_state: bool):
        from crossintent.classifiers import IntentionClassifier

        if with_state not in self.models:
            ds = self.data[with_state]
            tr, va = ds.where_split("train"), ds.where_split("val")
            t0 = self._time()
            self.models[with_state] = IntentionClassifier("GRU", 3, 128, seed=0).fit(
                tr.X, tr.y, tr.mask, eval_set=(va.X, va.y, va.mask))
            self.seconds[with_state] = self._time() - t0
        return self.models[with_state]


@pytest.fixture(scope="session")
def learned():
    return _Learned()
