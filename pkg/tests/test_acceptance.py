"""Acceptance checks, one per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line (run with ``-s``
to see them) and then asserts the same condition.
"""

import time

import numpy as np
import pytest

from crossintent.classifiers import ARCHITECTURES, ClassifierConfig, IntentionClassifier, count_parameters, gradcheck
from crossintent.evaluation import (
    AblationGrid,
    accuracy_at,
    benchmark_throughput,
    classification_metrics,
    evaluate_orientation,
    mean_absolute_error,
    run_ablation,
)
from crossintent.features import (
    POSE_DIM,
    SLOT,
    FeatureConfig,
    assemble_feature,
    extract_dataset,
    feature_names,
    pose_feature,
    slot_count,
)
from crossintent.geometry import angular_error
from crossintent.measurement import estimate_distance, pedestrian_speed, vehicle_speed
from crossintent.scene_model import Detection, iter_records, sample_track
from crossintent.streaming import stream_predict
from crossintent.synthetic import ScenarioSpec, generate_orientation_set, generate_scene, scenario_suite

from conftest import det, linear_track



def report(n, ok, detail):
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


# 1 ------------------------------------------------------------ feature schema

def test_criterion_1_feature_schema():
    specs, _ = scenario_suite(17, seed=21, n_pedestrians=3, n_vehicles=2)
    scenes = [generate_scene(s)[0] for s in specs]
    t0 = time.perf_counter()
    cfg = FeatureConfig(with_state=True)
    ds = extract_dataset(scenes, 0.5, 1.5, cfg, labelled=False)
    plain = extract_dataset(scenes[:2], 0.5, 1.5, FeatureConfig(), labelled=False)
    k = len(plain)
    checks = [ds.X.shape[2] == 51 and len(feature_names(True)) == 51,
              plain.X.shape[2] == 50 and len(feature_names(False)) == 50,
              bool(np.all(np.isfinite(ds.X))),
              # without state the vector is the with-state one minus its last entry
              np.array_equal(plain.X, ds.X[:k, :, :50]) and np.array_equal(plain.mask, ds.mask[:k])]
    # recompute a sample of windows slot by slot and check the layout
    rng = np.random.default_rng(1)
    n = slot_count(0.5)
    for i in rng.choice(len(ds), 40, replace=False):
        scene = scenes[int(ds.scene[i])]
        track = scene.track(int(ds.ped_id[i]))
        for s in np.flatnonzero(ds.mask[i]):
            t = ds.t_end[i] - (n - 1 - s) / 15
            x = ds.X[i, s]
            d = sample_track(track, t, cfg.sample_tolerance)
            ok = np.array_equal(x, assemble_feature(track, scene, t, cfg))
            ok &= np.allclose(x[:POSE_DIM], pose_feature(d.pose) / cfg.norms.pose)
            ok &= x[SLOT["state"]] == float(bool(track.state_at(t, cfg.sample_tolerance)))
            checks.append(bool(ok))
    checks.append(np.array_equal(extract_dataset(scenes[:1], 0.5, 1.5, cfg, labelled=False).X,
                                 ds.X[:np.count_nonzero(ds.scene == "0")]))
    elapsed = time.perf_counter() - t0
    ok = all(checks) and len(ds) >= 10_000 and elapsed < 10
    assert report(1, ok, f"windows={len(ds)} (>=10000) dims=51/50 layout_checks={sum(checks)}/{len(checks)} "
                         f"time={elapsed:.1f}s (<10s)")


# 2 ------------------------------------------------------------ orientation inverse

def test_criterion_2_orientation_inverse():
    t0 = time.perf_counter()
    clean = evaluate_orientation(generate_orientation_set(360))
    noisy = evaluate_orientation(generate_orientation_set(360, seed=0, joint_noise=0.01))
    elapsed = time.perf_counter() - t0
    ok = clean.mae <= 1e-6 and clean.acc_45 == 100.0 and noisy.acc_45 >= 99.0 and elapsed < 5
    assert report(2, ok, f"clean MAE={clean.mae:.2e} (<=1e-6) acc45={clean.acc_45:.1f}% (=100); "
                         f"jitter 0.01 acc45={noisy.acc_45:.1f}% (>=99) time={elapsed:.2f}s (<5s)")


# 3 ------------------------------------------------------------ measurement closure

def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


def test_criterion_3_measurement_closure():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        scene, truth = generate_scene(ScenarioSpec("walk_through", n_pedestrians=2, n_vehicles=3, seed=20 + seed,
                                                   ped_speed=1.5))
        ped = truth.pedestrians[0]
        p_track = scene.track(ped.track_id)
        for veh in truth.vehicles:
            v_track = scene.track(veh.track_id)
            for i in range(0, len(veh.times), 5):
                k = int(np.argmin(np.abs(ped.times - veh.times[i])))
                d_true = float(np.linalg.norm(ped.positions[k] - veh.positions[i]))
                d_hat = estimate_distance(p_track.detections[k], "Person", v_track.detections[i], veh.cls)
                worst = max(worst, _rel(d_hat, d_true))
            t = veh.times[0]
            worst = max(worst, _rel(vehicle_speed(v_track, t, t + 0.5), veh.speed))
        for p in truth.pedestrians:
            for t in (1.0, 4.0, 7.0):
                worst = max(worst, _rel(pedestrian_speed(scene.track(p.track_id), t, t + 1.0), 1.5))
    hand = [
        estimate_distance(det(0, 0, 0), "Person", det(0, 500, 0), "Person") == 5.0,
        pedestrian_speed(linear_track(1, "Person", (0, 0), (150, 0), [0.0, 1.0]), 0.0, 1.0) == 1.5,
        vehicle_speed(linear_track(2, "Car", (0, 0), (1000, 0), [0.0, 1.0], height=150.0), 0.0, 1.0) == 10.0,
        estimate_distance(det(0, 0, 0), "Person", Detection(0.0, (290, -150, 310, 0), (300, 0)), "Car") == 3.0,
    ]
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and all(hand) and elapsed < 5
    assert report(3, ok, f"max rel error={worst:.2e} (<1e-6) hand cases={sum(hand)}/{len(hand)} "
                         f"time={elapsed:.2f}s (<5s)")


# 4 ------------------------------------------------------------ gradients

def test_criterion_4_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 8, 51))
    y = rng.integers(0, 2, size=6)
    mask = np.ones((6, 8), dtype=bool)
    mask[1, :2] = False
    worst = {}
    for arch in ARCHITECTURES:
        errors = gradcheck(ClassifierConfig(arch, 2, 32, input_dim=51, context_slots=8), X, y, mask, n_coords=100)
        worst[arch] = (errors.size, float(errors.max()))
    elapsed = time.perf_counter() - t0
    ok = all(n == 100 and e < 1e-4 for n, e in worst.values()) and elapsed < 60
    detail = " ".join(f"{a}={e:.1e}" for a, (_, e) in worst.items())
    assert report(4, ok, f"max rel error {detail} (<1e-4, 100 coords each) time={elapsed:.1f}s (<60s)")


# 5 ------------------------------------------------------------ learnability

def test_criterion_5_learnability(learned):
    counts = {s: learned.splits.count(s) for s in ("train", "val", "test")}
    acc = {}
    for state in (True, False):
        model = learned.model(state)
        te = learned.data[state].where_split("test")
        acc[state] = classification_metrics(model.predict(te.X, te.mask), te.y).accuracy
    elapsed = learned.seconds[True] + learned.seconds[False]
    ok = (counts["train"] >= 40 and counts["val"] >= 8 and counts["test"] >= 8
          and acc[True] >= 0.95 and acc[False] < acc[True] and elapsed < 15 * 60)
    assert report(5, ok, f"scenes={counts} with-state acc={acc[True]:.3f} (>=0.95) "
                         f"without-state acc={acc[False]:.3f} (< with) train time={elapsed:.0f}s (<900s)")


# 6 ------------------------------------------------------------ online / offline

def test_criterion_6_online_offline(small_model):
    t0 = time.perf_counter()
    compared, mismatched = 0, 0
    for seed, script in enumerate(("approach_wait_cross", "approach_no_cross", "cross_immediately")):
        scene, _ = generate_scene(ScenarioSpec(script, n_pedestrians=3, n_vehicles=3, noise=1.0, seed=60 + seed))
        ds = extract_dataset([scene], 0.5, 1.5, FeatureConfig(with_state=True), labelled=False)
        offline = {(int(p), round(float(t) * 15)): pr
                   for p, t, pr in zip(ds.ped_id, ds.t_end, small_model.predict_proba(ds.X, ds.mask))}
        online = {(p.pedestrian_id, round(p.t_end * 15)): p.proba
                  for p in stream_predict(iter_records(scene), small_model).predictions}
        mismatched += len(online.keys() ^ offline.keys())
        for key, p in offline.items():
            compared += 1
            mismatched += key in online and not np.array_equal(online[key], p)
    elapsed = time.perf_counter() - t0
    ok = mismatched == 0 and compared > 0 and elapsed < 120
    assert report(6, ok, f"windows compared={compared} mismatches={mismatched} (bit-exact) "
                         f"time={elapsed:.1f}s (<120s)")


# 7 ------------------------------------------------------------ real time

def test_criterion_7_real_time():
    t0 = time.perf_counter()
    scene, _ = generate_scene(ScenarioSpec("approach_wait_cross", n_pedestrians=5, n_vehicles=3, noise=1.0, seed=3))
    model = IntentionClassifier.from_config(ClassifierConfig("GRU", 3, 128, input_dim=51, context_slots=8))
    bench = benchmark_throughput("intention", scene, repetitions=3, model=model)
    latency = stream_predict(iter_records(scene), model).latency_summary()
    elapsed = time.perf_counter() - t0
    ok = bench.median_fps >= 30 and latency["p95_ms"] < 33 and elapsed < 300
    assert report(7, ok, f"throughput={bench.median_fps:.0f} windows/s (>=30) "
                         f"p95 latency={latency['p95_ms']:.2f} ms (<33) time={elapsed:.1f}s (<300s)")


# 8 ------------------------------------------------------------ metric oracles

def test_criterion_8_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        errs = rng.uniform(0, 180, n)
        d = float(rng.uniform(0, 180))
        bad += accuracy_at(errs, d) != pytest.approx(100.0 * sum(e <= d for e in errs) / n)
        bad += mean_absolute_error(errs) != pytest.approx(sum(errs) / n)
        p, g = rng.integers(0, 2, n), rng.integers(0, 2, n)
        tp = sum(a == 1 and b == 1 for a, b in zip(p, g))
        fp = sum(a == 1 and b == 0 for a, b in zip(p, g))
        fn = sum(a == 0 and b == 1 for a, b in zip(p, g))
        r = classification_metrics(p, g)
        bad += r.accuracy != pytest.approx(float(np.mean(p == g)))
        bad += r.f1 != pytest.approx(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0)
    # wrap-around properties of the circular error
    a, b, c = (rng.uniform(-720, 720, 2000) for _ in range(3))
    ab = np.array([angular_error(x, z) for x, z in zip(a, b)])
    props = [
        np.all((ab >= 0) & (ab <= 180)),
        np.allclose(ab, [angular_error(z, x) for x, z in zip(a, b)]),
        np.all(ab <= np.array([angular_error(x, w) + angular_error(w, z) for x, z, w in zip(a, b, c)]) + 1e-9),
        np.allclose(ab, [angular_error(x + 360 * k, z) for x, z, k in zip(a, b, rng.integers(-3, 4, 2000))],
                    atol=1e-9),
        angular_error(359, 1) == pytest.approx(2) and angular_error(0, 180) == 180,
    ]
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and all(props) and elapsed < 10
    assert report(8, ok, f"oracle mismatches={bad}/4000 angular properties={sum(map(bool, props))}/{len(props)} "
                         f"time={elapsed:.2f}s (<10s)")


# 9 ------------------------------------------------------------ ablation

def test_criterion_9_ablation(tmp_path):
    t0 = time.perf_counter()
    specs, splits = scenario_suite(16, seed=9, splits=(0.625, 0.1875, 0.1875))
    scenes = [generate_scene(s)[0] for s in specs]
    grid = AblationGrid()
    kw = dict(max_epochs=30, patience=5)
    a = run_ablation(grid, scenes, splits, out=tmp_path / "a", base_seed=0, train_kw=kw, stride=3)
    b = run_ablation(grid, scenes, splits, out=tmp_path / "b", base_seed=0, train_kw=kw, stride=3)
    elapsed = time.perf_counter() - t0
    counts_ok = all(r.param_count == count_parameters(ClassifierConfig(r.cell.architecture, r.cell.n_layers,
                                                                       r.cell.n_hidden, input_dim=51,
                                                                       context_slots=8))
                    for r in a)
    identical = ((tmp_path / "a" / "ablation_results.json").read_bytes()
                 == (tmp_path / "b" / "ablation_results.json").read_bytes())
    rows = (tmp_path / "a" / "ablation_table.csv").read_text().splitlines()[1:]
    failed = sum(r.error is not None for r in a)
    ok = len(a) == 27 and len(rows) == 27 and counts_ok and identical and failed == 0 and elapsed < 45 * 60
    assert report(9, ok, f"cells={len(a)} rows={len(rows)} failed={failed} param counts match={counts_ok} "
                         f"rerun identical={identical} time={elapsed:.0f}s (<2700s)")
