"""Online warning pipeline over a stream of track records."""
from __future__ import annotations

import bisect
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifiers import IntentionClassifier
from .features import (SAMPLE_RATE, FeatureConfig, FeatureUnavailable, assemble_feature,
                       closest_approaching_vehicle, slot_count)
from .scene_model import STATES, EntityTrack, SceneBundle, SceneFormatError, parse_detection, parse_meta

log = logging.getLogger(__name__)

REORDER_WINDOW = 0.2
SUPPRESS_SECONDS = 1.0
SUPPRESS_RISE = 0.1
HISTORY_SECONDS = 5.0    # detections older than this behind the newest tick are forgotten


@dataclass(frozen=True)
class WarningMessage:
    pedestrian_id: int
    t_emit: float
    horizon: float
    p_cross: float
    current_state: str
    nearest_vehicle_id: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_cross <= 1.0:
            raise ValueError("p_cross must lie in [0, 1]")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass(frozen=True)
class Prediction:
    pedestrian_id: int
    t_end: float
    proba: np.ndarray      # as returned by predict_proba for one window
    mask: tuple


@dataclass
class _Buffer:
    cls: str
    times: list = field(default_factory=list)
    dets: list = field(default_factory=list)
    states: list = field(default_factory=list)
    first_tick: int | None = None
    next_tick: int | None = None
    slots: dict = field(default_factory=dict)    # tick -> feature vector or None


class StreamProcessor:
    """Turns time-ordered detection records into predictions and warnings.

    Records may arrive out of order by up to ``reorder_window`` seconds;
    older ones are dropped with a warning.  A 15 Hz tick ``k`` is processed
    once the watermark (newest timestamp minus the reorder window) has passed
    ``k/15`` plus the sampling tolerance, so every detection a window can
    touch is already known.
    """

    def __init__(self, model: IntentionClassifier, cfg: FeatureConfig | None = None, context: float = 0.5,
                 threshold: float = 0.5, horizon: float = 1.5, reorder_window: float = REORDER_WINDOW):
        self.model = model
        self.cfg = cfg or FeatureConfig(with_state=model.n_features_in_ == 51)
        if self.cfg.dim != model.n_features_in_:
            raise ValueError(f"feature config gives {self.cfg.dim} dims, model expects {model.n_features_in_}")
        self.context = context
        self.n_slots = slot_count(context)
        if self.n_slots != model.n_slots_:
            raise ValueError(f"context {context:g} s gives {self.n_slots} slots, model expects {model.n_slots_}")
        horizons = list(model.config_.horizons)
        self.head = int(np.argmin([abs(h - horizon) for h in horizons]))
        self.horizon = horizons[self.head]
        self.threshold = threshold
        self.reorder_window = reorder_window
        self.meta = None
        self.buffers: dict[int, _Buffer] = {}
        self.max_seen = -math.inf
        self.predictions: list[Prediction] = []
        self.warnings: list[WarningMessage] = []
        self.latencies: list[float] = []
        self.dropped = 0
        self._last_warn: dict[int, tuple[float, float]] = {}

    # ------------------------------------------------------------ ingestion
    @property
    def watermark(self) -> float:
        return self.max_seen - self.reorder_window

    def feed(self, record: dict) -> list[WarningMessage]:
        """Ingest one record; returns warnings that became ready."""
        kind = record.get("type")
        if kind == "meta":
            self.meta = parse_meta(record)
            return []
        if kind != "det":
            raise SceneFormatError(f"unknown record type {kind!r}")
        if self.meta is None:
            raise SceneFormatError("detection record before the meta header")
        tid, cls, det, state = parse_detection(record)
        buf = self.buffers.get(tid)
        if buf is None:
            buf = self.buffers[tid] = _Buffer(cls)
        elif buf.cls != cls:
            raise SceneFormatError(f"track {tid}: class changed from {buf.cls} to {cls}")
        t = det.timestamp
        # processed ticks all have ready times below the watermark, so anything
        # at or past it cannot change a window already emitted
        if t < self.watermark:
            log.warning("dropping late record id=%d t=%.4f (watermark %.4f)", tid, t, self.watermark)
            self.dropped += 1
            return []
        i = bisect.bisect_left(buf.times, t)
        if i < len(buf.times) and buf.times[i] == t:
            raise SceneFormatError(f"track {tid}: duplicate timestamp {t}")
        buf.times.insert(i, t)
        buf.dets.insert(i, det)
        buf.states.insert(i, state)
        self.max_seen = max(self.max_seen, t)
        return self._advance(self.watermark)

    def feed_frame(self, records) -> list[WarningMessage]:
        """Ingest the records of one camera frame and time the whole step."""
        t0 = time.perf_counter()
        out = []
        for rec in records:
            out.extend(self.feed(rec))
        self.latencies.append(time.perf_counter() - t0)
        return out

    def flush(self) -> list[WarningMessage]:
        """Process every remaining tick at end of stream."""
        return self._advance(math.inf)

    # ----------------------------------------------------------- processing
    def _ready_time(self, k: int) -> float:
        return k / SAMPLE_RATE + self.cfg.sample_tolerance

    def _scene(self, horizon_t: float) -> SceneBundle:
        lo = horizon_t - HISTORY_SECONDS
        tracks = []
        for tid in sorted(self.buffers):
            buf = self.buffers[tid]
            start = bisect.bisect_left(buf.times, lo)
            if start:
                del buf.times[:start], buf.dets[:start], buf.states[:start]
            if buf.dets:
                tracks.append(EntityTrack(tid, buf.cls, tuple(buf.dets), tuple(buf.states)))
        m = self.meta
        return SceneBundle(tuple(tracks), m["crosswalks"], m["semantics"], m["camera"], m["frame_rate"])

    def _advance(self, watermark: float) -> list[WarningMessage]:
        emitted = []
        peds = [(tid, b) for tid, b in sorted(self.buffers.items()) if b.cls == "Person" and b.times]
        tol = self.cfg.sample_tolerance
        # ticks are handled in time order across pedestrians, ids breaking ties
        while True:
            pending = []
            for tid, b in peds:
                if not b.times:
                    continue
                if b.first_tick is None:
                    # an earlier record may still arrive until the first tick is processed
                    b.next_tick = math.ceil(b.times[0] * SAMPLE_RATE - 1e-6)
                if self._ready_time(b.next_tick) < watermark and b.next_tick / SAMPLE_RATE <= b.times[-1] + tol:
                    pending.append((b.next_tick, tid, b))
            if not pending:
                break
            k = min(p[0] for p in pending)
            scene = self._scene(k / SAMPLE_RATE)
            for kk, tid, buf in pending:
                if kk != k:
                    continue
                msg = self._tick(tid, buf, scene, k)
                buf.next_tick = k + 1
                if msg is not None:
                    emitted.append(msg)
        return emitted

    def _tick(self, tid: int, buf: _Buffer, scene: SceneBundle, k: int):
        subject = scene.track(tid)
        if buf.first_tick is None:
            buf.first_tick = k
        try:
            buf.slots[k] = assemble_feature(subject, scene, k / SAMPLE_RATE, self.cfg)
        except FeatureUnavailable:
            buf.slots[k] = None
        for old in [j for j in buf.slots if j <= k - self.n_slots]:
            del buf.slots[old]
        if k < buf.first_tick + self.n_slots - 1 or buf.slots[k] is None:
            return None
        X = np.zeros((self.n_slots, self.cfg.dim))
        mask = np.zeros(self.n_slots, dtype=bool)
        for i, j in enumerate(range(k - self.n_slots + 1, k + 1)):
            v = buf.slots.get(j)
            if v is not None:
                X[i] = v
                mask[i] = True
        heads = self.model.window_proba(X, mask)
        proba = heads[0] if heads.shape[0] == 1 else heads
        t = k / SAMPLE_RATE
        self.predictions.append(Prediction(tid, t, proba, tuple(bool(m) for m in mask)))
        p_cross = float(heads[self.head, 1])
        state = subject.state_at(t, self.cfg.sample_tolerance)
        if p_cross < self.threshold or state:
            return None
        last = self._last_warn.get(tid)
        if last is not None and t - last[0] < SUPPRESS_SECONDS - 1e-9 and p_cross < last[1] + SUPPRESS_RISE:
            return None
        hit = closest_approaching_vehicle(subject, scene, t, self.cfg.approach_lookback, self.cfg.kb,
                                          self.cfg.sample_tolerance)
        msg = WarningMessage(tid, t, self.horizon, p_cross, STATES[0], None if hit is None else hit[0].id)
        self._last_warn[tid] = (t, p_cross)
        self.warnings.append(msg)
        return msg

    def latency_summary(self) -> dict:
        lat = np.asarray(self.latencies) * 1000.0
        if lat.size == 0:
            return {"frames": 0}
        return {"frames": int(lat.size), "median_ms": float(np.median(lat)),
                "p95_ms": float(np.percentile(lat, 95)), "max_ms": float(lat.max())}


def iter_frames(records):
    """Group consecutive detection records sharing a timestamp; the meta header is its own frame."""
    frame, t_frame = [], None
    for rec in records:
        t = rec.get("t") if rec.get("type") == "det" else None
        if frame and (t is None or t != t_frame):
            yield frame
            frame = []
        frame.append(rec)
        t_frame = t
    if frame:
        yield frame


def stream_predict(records, model: IntentionClassifier, threshold: float = 0.5, context: float = 0.5,
                   cfg: FeatureConfig | None = None, horizon: float = 1.5) -> StreamProcessor:
    """Run a whole record stream through a fresh processor and return it."""
    proc = StreamProcessor(model, cfg, context, threshold, horizon)
    for frame in iter_frames(records):
        proc.feed_frame(frame)
    proc.flush()
    return proc
