"""Command-line entry points: synth, extract, train, eval, bench, stream."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .classifiers import IntentionClassifier, TrainingError, load_checkpoint, save_checkpoint
from .evaluation import (
    AblationGrid,
    benchmark_throughput,
    classification_metrics,
    evaluate_orientation,
    run_ablation,
)
from .features import FeatureConfig, FeatureError, context_for_slots, extract_dataset, load_dataset, save_dataset
from .measurement import KnowledgeBase, MeasurementError, NormalizationFactors, load_measurement_config
from .scene_model import SceneFormatError, load_scene
from .streaming import StreamProcessor, iter_frames
from .synthetic import (
    ScenarioError,
    ScenarioSpec,
    generate_orientation_set,
    generate_scene,
    read_manifest,
    scenario_suite,
    write_suite,
)

log = logging.getLogger("crossintent")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers

def _read_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _feature_config(args, with_state: bool | None = None) -> FeatureConfig:
    kb, norms = KnowledgeBase(), NormalizationFactors()
    if args.config:
        kb, norms = load_measurement_config(args.config)
    extra = _read_config(args.config).get("features", {})
    cfg = FeatureConfig(kb=kb, norms=norms, **{k: v for k, v in extra.items() if k != "with_state"})
    state = with_state if with_state is not None else bool(extra.get("with_state", False))
    return replace(cfg, with_state=state)


def _scenes_from(inputs):
    """Expand manifests and track files into (scenes, scene ids, splits or None)."""
    scenes, ids, splits = [], [], []
    for item in inputs:
        p = Path(item)
        if p.suffix == ".json":
            files, spl, sids = read_manifest(p)
            scenes += [load_scene(f) for f in files]
            ids += sids
            splits += spl
        else:
            scenes.append(load_scene(p))
            ids.append(p.stem)
            splits.append(None)
    if not scenes:
        raise UsageError("no scenes given")
    return scenes, ids, (None if any(s is None for s in splits) else splits)


def _out_path(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    spec = _read_config(args.spec) if args.spec else {}
    scenario = {k: v for k, v in spec.get("scenario", {}).items()}
    n = int(spec.get("n_scenes", args.n_scenes))
    seed = int(spec.get("seed", args.seed))
    splits = tuple(spec.get("splits", (0.7, 0.15, 0.15)))
    specs, assignment = scenario_suite(n, seed, splits, **scenario)
    for s in specs:
        s.validate()
    manifest = write_suite(specs, assignment, _out_path(args, "scenes"))
    print(f"wrote {n} scenes and {manifest}")
    return EXIT_OK


def cmd_extract(args) -> int:
    scenes, ids, splits = _scenes_from(args.scenes)
    cfg = _feature_config(args, args.with_state)
    horizon = args.horizon[0] if len(args.horizon) == 1 else list(args.horizon)
    ds = extract_dataset(scenes, args.context, horizon, cfg, scene_ids=ids, splits=splits, stride=args.stride)
    out = _out_path(args, "dataset.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    y = ds.y if ds.y.ndim == 1 else ds.y[:, 0]
    n_cross = int(np.count_nonzero(y == 1))
    print(f"windows: {len(ds)} (crossing {n_cross}, not_crossing {len(ds) - n_cross}) dim {cfg.dim} -> {out}")
    return EXIT_OK


def _split(ds, name):
    if ds.split is None:
        raise FeatureError("dataset has no split assignment; extract from a manifest")
    part = ds.where_split(name)
    if len(part) == 0:
        raise FeatureError(f"empty {name} split")
    return part


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    tr, va = _split(ds, "train"), _split(ds, "val")
    conf = _read_config(args.config)
    params = {"architecture": args.arch, "n_layers": args.layers, "n_hidden": args.hidden,
              "learning_rate": args.lr, "batch_size": args.batch_size, "max_epochs": args.max_epochs,
              "patience": args.patience, "seed": args.seed, **conf.get("model", {}), **conf.get("train", {})}
    params["horizons"] = tuple(np.atleast_1d(ds.horizon).tolist())
    model = IntentionClassifier(**params)
    model.fit(tr.X, tr.y, tr.mask, eval_set=(va.X, va.y, va.mask),
              groups=tr.scene, eval_groups=va.scene)
    out = _out_path(args, "model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    log_path = out.with_suffix(".log.jsonl")
    log_path.write_text("".join(json.dumps(h) + "\n" for h in model.history_))
    best = model.history_[model.best_epoch_ - 1]
    print(f"best epoch {model.best_epoch_}/{model.n_epochs_}: val_loss {best['val_loss']:.4f} "
          f"val_accuracy {best['val_accuracy']:.4f} params {model.param_count_} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_path(args, "report.json")
    if args.orientation:
        samples = generate_orientation_set(args.orientation, args.seed, args.joint_noise)
        report = evaluate_orientation(samples)
        summary = report.summary()
        edges, counts = report.histogram()
        summary["histogram"] = {"edges": edges.tolist(), "counts": counts.tolist()}
        _write_json(out, summary)
        print(f"orientation: acc22.5 {report.acc_22_5:.2f}% acc45 {report.acc_45:.2f}% mae {report.mae:.6f}")
        return EXIT_OK
    if args.ablation:
        scenes, ids, splits = _scenes_from(args.ablation)
        if splits is None:
            raise FeatureError("ablation needs scenes from a manifest with splits")
        conf = _read_config(args.config)
        grid = AblationGrid(**{k: tuple(v) for k, v in conf.get("grid", {}).items()})
        results = run_ablation(grid, scenes, splits, out if out.suffix == "" else out.parent,
                               base_seed=args.seed, n_jobs=args.jobs, train_kw=conf.get("train", {}),
                               feature_kw=conf.get("features", {}), scene_ids=ids,
                               stride=int(conf.get("stride", 1)))
        failed = sum(r.error is not None for r in results)
        print(f"ablation: {len(results)} cells, {failed} failed")
        return EXIT_OK if not failed else EXIT_RUNTIME
    if not (args.checkpoint and args.dataset):
        raise UsageError("eval needs --checkpoint and --dataset, --orientation N, or --ablation")
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    part = ds.where_split(args.split) if ds.split is not None and args.split != "all" else ds
    if len(part) == 0:
        raise FeatureError(f"no windows in split {args.split!r}")
    pred = model.predict(part.X, part.mask)
    report = classification_metrics(pred, part.y, model.config_.horizons)
    _write_json(out, report.summary())
    print(f"intention: accuracy {report.accuracy:.4f} f1 {report.f1:.4f} "
          f"(tp {report.tp} fp {report.fp} fn {report.fn} tn {report.tn})")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = ScenarioSpec("approach_wait_cross", n_pedestrians=args.pedestrians, n_vehicles=args.vehicles,
                        duration=args.duration, seed=args.seed)
    scene, _ = generate_scene(spec)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if args.stage == "intention" and model is None:
        raise UsageError("intention benchmark needs --checkpoint")
    context = context_for_slots(model.n_slots_) if model is not None else 0.5
    rep = benchmark_throughput(args.stage, scene, args.repetitions, model, context=context)
    print(f"{rep.stage}: {rep.frames} frames, median {rep.median_fps:.1f} FPS "
          f"(p5 {rep.p5_fps:.1f}, p95 {rep.p95_fps:.1f})")
    if args.out:
        _write_json(Path(args.out), rep.__dict__)
    return EXIT_OK


def _follow(fh, idle: float):
    """Yield lines, waiting for more at EOF until ``idle`` seconds pass without data."""
    quiet = 0.0
    while True:
        line = fh.readline()
        if line:
            quiet = 0.0
            yield line
            continue
        if quiet >= idle:
            return
        time.sleep(0.05)
        quiet += 0.05


def _records(lines):
    for n, line in enumerate(lines, start=1):
        if line.strip():
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"line {n}: invalid JSON ({exc.msg})") from None


def cmd_stream(args) -> int:
    model = load_checkpoint(args.checkpoint)
    context = context_for_slots(model.n_slots_)
    proc = StreamProcessor(model, _feature_config(args, model.n_features_in_ == 51), context, args.threshold)
    sink = open(args.out, "w") if args.out else sys.stdout
    fh = open(args.input) if args.input and args.input != "-" else sys.stdin
    lines = _follow(fh, args.idle_timeout) if args.follow else fh
    try:
        for frame in iter_frames(_records(lines)):
            for msg in proc.feed_frame(frame):
                sink.write(msg.to_json() + "\n")
            sink.flush()
        for msg in proc.flush():
            sink.write(msg.to_json() + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
        if fh is not sys.stdin:
            fh.close()
    lat = proc.latency_summary()
    log.info("frames %d, latency median %.2f ms, p95 %.2f ms, dropped %d", lat.get("frames", 0),
             lat.get("median_ms", 0.0), lat.get("p95_ms", 0.0), proc.dropped)
    print(json.dumps({"warnings": len(proc.warnings), "predictions": len(proc.predictions),
                      "dropped": proc.dropped, **lat}), file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--config", help="JSON config (mean_heights, normalization, features, model, train, grid)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="crossintent", description="Pedestrian crossing-intention pipeline.", parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic scenes and a manifest")
    s.add_argument("spec", nargs="?", help="JSON with n_scenes, seed, splits and scenario overrides")
    s.add_argument("--n-scenes", type=int, default=8)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", parents=[common], help="build a window dataset from scenes")
    s.add_argument("scenes", nargs="+", help="track files or manifest.json")
    s.add_argument("--context", type=float, default=0.5)
    s.add_argument("--horizon", type=float, nargs="+", default=[1.5])
    s.add_argument("--with-state", action="store_true", default=None)
    s.add_argument("--stride", type=int, default=1, help="keep every n-th 15 Hz window")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", parents=[common], help="train a classifier with early stopping")
    s.add_argument("dataset")
    s.add_argument("--arch", default="GRU", choices=["FFNN", "GRU", "TransformerEncoder"])
    s.add_argument("--layers", type=int, default=3)
    s.add_argument("--hidden", type=int, default=128)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--max-epochs", type=int, default=200)
    s.add_argument("--patience", type=int, default=10)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a checkpoint, orientation set or ablation grid")
    s.add_argument("--checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--split", default="test")
    s.add_argument("--orientation", type=int, metavar="N", help="score N synthetic orientation samples")
    s.add_argument("--joint-noise", type=float, default=0.0)
    s.add_argument("--ablation", nargs="+", metavar="SCENES", help="run the ablation grid on a manifest")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="throughput of a pipeline stage")
    s.add_argument("--stage", choices=["orientation", "intention"], default="orientation")
    s.add_argument("--checkpoint")
    s.add_argument("--pedestrians", type=int, default=5)
    s.add_argument("--vehicles", type=int, default=3)
    s.add_argument("--duration", type=float, default=34.0)
    s.add_argument("--repetitions", type=int, default=5)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("stream", parents=[common], help="emit warnings from a record stream")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", help="track file to read (default: standard input)")
    s.add_argument("--follow", action="store_true", help="keep reading as the file grows")
    s.add_argument("--idle-timeout", type=float, default=2.0)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_stream)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"crossintent: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneFormatError, FeatureError, ScenarioError, MeasurementError, FileNotFoundError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"crossintent: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, RuntimeError, OSError) as exc:
        print(f"crossintent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
