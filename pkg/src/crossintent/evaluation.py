"""Orientation and intention metrics, throughput benchmarks and the ablation grid."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import ARCHITECTURES, ClassifierConfig, IntentionClassifier, count_parameters
from .features import FeatureConfig, SlotCache, extract_dataset, slot_count, window_tick_range
from .geometry import angular_error, body_orientation, orientation_to_angle
from .scene_model import SceneBundle

log = logging.getLogger(__name__)


# ------------------------------------------------------------- orientation

def _errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise ValueError("empty error list")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    return e


def accuracy_at(errors, threshold: float) -> float:
    """Percentage of errors at most ``threshold`` degrees."""
    e = _errors(errors)
    return 100.0 * np.count_nonzero(e <= threshold) / e.size


def mean_absolute_error(errors) -> float:
    return float(np.mean(_errors(errors)))


def error_histogram(errors, bin_width: float = 10.0):
    """Counts of errors per ``bin_width`` bin over [0, 180]; returns (edges, counts)."""
    e = _errors(errors)
    edges = np.arange(0.0, 180.0 + bin_width, bin_width)
    counts, _ = np.histogram(np.minimum(e, 180.0), bins=edges)
    return edges, counts


@dataclass
class OrientationReport:
    acc_22_5: float
    acc_45: float
    mae: float
    fps: float | None
    error_samples: list
    per_angle: dict = field(default_factory=dict)   # ground-truth bin start -> [sum, count]

    def histogram(self, bin_width: float = 10.0):
        return error_histogram(self.error_samples, bin_width)

    def summary(self) -> dict:
        return {"acc_22_5": self.acc_22_5, "acc_45": self.acc_45, "mae": self.mae, "fps": self.fps,
                "n": len(self.error_samples)}


def evaluate_orientation(samples, calibration_offset: float = 0.0, bin_width: float = 45.0,
                         fps: float | None = None) -> OrientationReport:
    """Score body orientation on ``(Pose3D, true angle)`` pairs."""
    errs, per_angle = [], {}
    for pose, truth in samples:
        pred = orientation_to_angle(body_orientation(pose), calibration_offset)
        err = float(angular_error(pred, truth))
        errs.append(err)
        key = float(bin_width * np.floor((truth % 360.0) / bin_width))
        acc = per_angle.setdefault(key, [0.0, 0])
        acc[0] += err
        acc[1] += 1
    return OrientationReport(accuracy_at(errs, 22.5), accuracy_at(errs, 45.0), mean_absolute_error(errs),
                             fps, errs, per_angle)


# ---------------------------------------------------------------- intention

@dataclass
class IntentionReport:
    accuracy: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    per_horizon: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d = asdict(self)
        d["per_horizon"] = {str(k): asdict(v) for k, v in self.per_horizon.items()}
        return d


def _confusion(pred, gt) -> IntentionReport:
    tp = int(np.count_nonzero((pred == 1) & (gt == 1)))
    fp = int(np.count_nonzero((pred == 1) & (gt == 0)))
    fn = int(np.count_nonzero((pred == 0) & (gt == 1)))
    tn = int(np.count_nonzero((pred == 0) & (gt == 0)))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 1.0  # no positives anywhere: nothing was missed
    return IntentionReport((tp + tn) / (tp + fp + fn + tn), f1, tp, fp, fn, tn)


def classification_metrics(preds, gts, horizons=None) -> IntentionReport:
    """Accuracy and F1 with crossing (1) as the positive class.

    Two-dimensional inputs are (windows, heads); the top-level numbers pool
    every head and ``per_horizon`` breaks them out.
    """
    p, g = np.asarray(preds), np.asarray(gts)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} predictions vs {g.shape} labels")
    if p.size == 0:
        raise ValueError("empty prediction list")
    if not (np.isin(p, (0, 1)).all() and np.isin(g, (0, 1)).all()):
        raise ValueError("labels must be 0 or 1")
    report = _confusion(p.reshape(-1), g.reshape(-1))
    if p.ndim == 2:
        horizons = list(horizons) if horizons is not None else list(range(p.shape[1]))
        report.per_horizon = {h: _confusion(p[:, j], g[:, j]) for j, h in enumerate(horizons)}
    return report


# --------------------------------------------------------------- throughput

@dataclass
class ThroughputReport:
    stage: str
    frames: int
    median_fps: float
    p5_fps: float
    p95_fps: float
    repetitions: int


def _orientation_work(scene: SceneBundle):
    poses = [d.pose for t in scene.pedestrians for d in t.detections if d.pose is not None]
    if not poses:
        raise ValueError("empty workload: no poses in scene")

    def run():
        for pose in poses:
            orientation_to_angle(body_orientation(pose))
    return run, len(poses)


def _intention_work(scene: SceneBundle, model: IntentionClassifier, cfg: FeatureConfig, context: float):
    n = slot_count(context)
    jobs = [(ped, k) for ped in scene.pedestrians for k in window_tick_range(ped, n)]
    if not jobs:
        raise ValueError("empty workload: no windows in scene")

    def run():
        caches = {}
        for ped, k in jobs:
            cache = caches.setdefault(ped.id, SlotCache(ped, scene, cfg))
            win = cache.window(k, n, context)
            if win is not None:
                model.predict_proba(win.vectors[None], win.presence_mask[None])
    return run, len(jobs)


def benchmark_throughput(stage: str, workload: SceneBundle, repetitions: int = 5, model=None,
                         cfg: FeatureConfig | None = None, context: float = 0.5,
                         min_frames: int = 100) -> ThroughputReport:
    """Frames (orientation) or windows (intention) per second; one warm-up run is discarded."""
    if stage == "orientation":
        run, frames = _orientation_work(workload)
    elif stage == "intention":
        if model is None:
            raise ValueError("intention benchmark needs a fitted model")
        run, frames = _intention_work(workload, model, cfg or FeatureConfig(with_state=model.n_features_in_ == 51),
                                      context)
    else:
        raise ValueError(f"unknown stage {stage!r}; use 'orientation' or 'intention'")
    if frames < min_frames:
        raise ValueError(f"workload has {frames} frames; at least {min_frames} required")
    run()
    rates = []
    for _ in range(max(1, repetitions)):
        t0 = time.perf_counter()
        run()
        rates.append(frames / (time.perf_counter() - t0))
    rates = np.asarray(rates)
    return ThroughputReport(stage, frames, float(np.median(rates)), float(np.percentile(rates, 5)),
                            float(np.percentile(rates, 95)), len(rates))


# ----------------------------------------------------------------- ablation

CONTEXTS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
HORIZONS = (0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class AblationCell:
    architecture: str
    n_layers: int
    n_hidden: int
    context: float
    horizon: float
    multi_task: bool
    with_state: bool


def astuple_cell(cell: AblationCell) -> tuple:
    return (cell.architecture, cell.n_layers, cell.n_hidden, cell.context, cell.horizon,
            cell.multi_task, cell.with_state)


@dataclass(frozen=True)
class AblationGrid:
    architectures: tuple = ARCHITECTURES
    n_layers: tuple = (2, 3, 4)
    n_hidden: tuple = (32, 64, 128)
    contexts: tuple = (0.5,)
    horizons: tuple = (1.5,)
    multi_task: tuple = (False,)
    with_state: tuple = (True,)

    @classmethod
    def full(cls) -> "AblationGrid":
        return cls(contexts=CONTEXTS, horizons=HORIZONS, multi_task=(False, True), with_state=(True, False))

    def cells(self) -> list[AblationCell]:
        out = []
        for a, l, h, c, hz, mt, st in itertools.product(self.architectures, self.n_layers, self.n_hidden,
                                                       self.contexts, self.horizons, self.multi_task,
                                                       self.with_state):
            # a multi-task model covers every horizon at once; keep one cell for it
            if mt and hz != self.horizons[0]:
                continue
            out.append(AblationCell(a, l, h, float(c), float(hz), mt, st))
        return out


def cell_seed(base_seed: int, cell: AblationCell) -> int:
    text = json.dumps([int(base_seed), *astuple_cell(cell)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


@dataclass
class AblationResult:
    cell: AblationCell
    seed: int
    param_count: int | None
    accuracy: float | None = None
    f1: float | None = None
    epochs: int | None = None
    best_epoch: int | None = None
    error: str | None = None

    def row(self) -> dict:
        d = asdict(self.cell)
        d.update(seed=self.seed, param_count=self.param_count, accuracy=self.accuracy, f1=self.f1,
                 epochs=self.epochs, best_epoch=self.best_epoch, error=self.error)
        return d


def _run_cell(cell: AblationCell, seed: int, data: dict, train_kw: dict) -> AblationResult:
    tr, va, te = data["train"], data["val"], data["test"]
    horizons = data["horizons"]
    result = AblationResult(cell, seed, None)
    try:
        cfg = ClassifierConfig(cell.architecture, cell.n_layers, cell.n_hidden, 4, tr.X.shape[2], tr.X.shape[1],
                               horizons, seed)
        result.param_count = count_parameters(cfg)
        model = IntentionClassifier(cell.architecture, cell.n_layers, cell.n_hidden, horizons=horizons,
                                    seed=seed, **train_kw)
        model.fit(tr.X, tr.y, tr.mask, eval_set=(va.X, va.y, va.mask))
        report = classification_metrics(model.predict(te.X, te.mask), te.y, horizons)
        if cell.multi_task:
            report = report.per_horizon.get(cell.horizon, report)
        result.accuracy, result.f1 = float(report.accuracy), float(report.f1)
        result.epochs, result.best_epoch = model.n_epochs_, model.best_epoch_
        if model.param_count_ != result.param_count:
            raise AssertionError("fitted model size differs from the analytic count")
    except Exception as exc:  # recorded per cell; the grid keeps going
        log.warning("cell %s failed: %s", cell, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def run_ablation(grid: AblationGrid, scenes, splits, out=None, base_seed: int = 0, n_jobs: int = 1,
                 feature_kw: dict | None = None, train_kw: dict | None = None, scene_ids=None,
                 stride: int = 1) -> list[AblationResult]:
    """Train and score every grid cell; writes CSV/JSON reports under ``out`` if given.

    Datasets are extracted once per (context, horizons, state) setting and
    shared by every model-size cell that uses them.
    """
    feature_kw, train_kw = feature_kw or {}, train_kw or {}
    cells = grid.cells()
    datasets = {}
    jobs = []
    for cell in cells:
        horizons = tuple(float(h) for h in grid.horizons) if cell.multi_task else (cell.horizon,)
        key = (cell.context, horizons, cell.with_state)
        if key not in datasets:
            cfg = FeatureConfig(with_state=cell.with_state, **feature_kw)
            hz = list(horizons) if cell.multi_task else horizons[0]
            ds = extract_dataset(scenes, cell.context, hz, cfg, scene_ids=scene_ids, splits=splits,
                                stride=stride)
            datasets[key] = {"train": ds.where_split("train"), "val": ds.where_split("val"),
                             "test": ds.where_split("test"), "horizons": horizons}
        jobs.append((cell, cell_seed(base_seed, cell), datasets[key]))
    if n_jobs == 1:
        results = [_run_cell(c, s, d, train_kw) for c, s, d in jobs]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(c, s, d, train_kw) for c, s, d in jobs)
    order = {c: i for i, c in enumerate(cells)}
    results.sort(key=lambda r: order[r.cell])
    if out is not None:
        write_ablation_reports(results, out)
    return results


TABLE_COLUMNS = ("architecture", "n_layers", "n_hidden", "context", "horizon", "multi_task", "with_state",
                 "seed", "param_count", "accuracy", "f1", "epochs", "best_epoch", "error")


def write_ablation_reports(results, out) -> dict:
    """Write the model-size table, the context-length curve table and a JSON results file."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r.row() for r in results]
    paths = {"table": out / "ablation_table.csv", "context": out / "context_curve.csv",
             "results": out / "ablation_results.json"}
    with open(paths["table"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    # one curve per (architecture, size, horizon, task, state); x = context length
    with open(paths["context"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "context", "accuracy", "f1"])
        for r in sorted(results, key=lambda r: (_series(r.cell), r.cell.context)):
            w.writerow([_series(r.cell), r.cell.context, r.accuracy, r.f1])
    paths["results"].write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    return paths


def _series(cell: AblationCell) -> str:
    task = "multi" if cell.multi_task else "single"
    state = "state" if cell.with_state else "nostate"
    return f"{cell.architecture}-{cell.n_layers}x{cell.n_hidden}-h{cell.horizon:g}-{task}-{state}"
