"""``radnet`` command line: train, evaluate, predict, explain.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric failure.
Set ``RADNET_THREADS=1`` for bitwise-reproducible runs.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    ManifestDataset,
    image_split,
    load_image,
    parse_manifest,
    patient_split,
)
from .errors import NumericError, RadnetError
from .gradcam import gradcam, overlay, jet, save_png, zone_grade
from .metrics import EvalReport
from .model import ModelSpec, build, load_checkpoint, save
from .optim import evaluate_split, predicted_labels, train_loop

log = logging.getLogger("radnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

PRESETS = {
    "cxr-binary": {"task": "binary", "epochs": 20, "classes": ["non-Covid", "COVID-19"]},
    "cxr-3class": {"task": "three_class", "epochs": 20, "classes": ["COVID-19", "Normal", "Pneumonia"]},
    "ct-3class": {"task": "three_class", "epochs": 30, "classes": ["Normal", "Pneumonia", "COVID-19"]},
}
DEFAULT_SEED = 0
DEFAULT_EPOCHS = 20


class UsageError(RadnetError):
    pass


@contextlib.contextmanager
def thread_limit():
    n = os.environ.get("RADNET_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args):
    if not args.manifest:
        raise UsageError("--manifest is required")
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    return parse_manifest(args.manifest)


def _checkpoint(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    try:
        return load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.checkpoint}") from None


def _class_names(ckpt) -> list:
    names = ckpt.state.get("classes")
    if names:
        return list(names)
    n = ckpt.model.spec.n_outputs
    return ["negative", "positive"] if n == 1 else [str(i) for i in range(n)]


def _resolve_task(args, manifest):
    preset = PRESETS.get(args.preset) if args.preset else None
    task = args.task or (preset and preset["task"]) or manifest.task
    if task != manifest.task:
        raise UsageError(f"task {task} does not fit a manifest with {len(manifest.classes)} classes")
    if preset and list(manifest.classes) != preset["classes"]:
        log.warning("manifest classes %s differ from preset %s", manifest.classes, preset["classes"])
    return task


def _model_spec(args, task) -> ModelSpec:
    d = {}
    if args.spec:
        try:
            d = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read model spec {args.spec}: {exc}") from None
    d["task"] = task
    if args.precision:
        d["precision"] = args.precision
    d["seed"] = args.seed
    return ModelSpec.from_dict(d)


def cmd_train(args) -> int:
    manifest = _manifest(args)
    task = _resolve_task(args, manifest)
    if any(r.split == "unassigned" for r in manifest.records):
        splitter = image_split if args.image_split else patient_split
        manifest = splitter(manifest, args.ratios, seed=args.seed)
    spec = _model_spec(args, task)
    epochs = args.epochs
    if epochs is None:
        epochs = PRESETS[args.preset]["epochs"] if args.preset else DEFAULT_EPOCHS
    out = _out_dir(args)
    _write_split_manifest(manifest, out / "splits.csv")
    dtype = np.float64 if spec.precision == "f64" else np.float32
    train_set = ManifestDataset(manifest, "train", spec.input_size, dtype)
    val_set = ManifestDataset(manifest, "val", spec.input_size, dtype)
    if not len(train_set) or not len(val_set):
        raise UsageError("manifest needs non-empty train and val splits")

    model = build(spec)
    ckpt_path = out / "model.ckpt"
    log.info("training %s for %d epochs (seed %d, %d params)", spec.task, epochs, args.seed,
             model.parameter_count())
    lr = args.lr if args.lr is not None else 5e-5
    train_loop(model, train_set, val_set, epochs, batch_size=args.batch_size, seed=args.seed,
               lr=lr, checkpoint_path=ckpt_path, log_path=out / "train.log",
               extra_state={"classes": list(manifest.classes)})
    if not ckpt_path.exists():  # zero epochs: keep the initial weights
        save(model, ckpt_path, {"epoch": 0, "seed": args.seed, "classes": list(manifest.classes)})
    ckpt = load_checkpoint(ckpt_path)
    state = ckpt.state

    _, _, truth, preds = evaluate_split(ckpt.model, val_set, args.batch_size, args.threshold)
    report = EvalReport.from_labels(truth, preds, manifest.classes, split="val", seed=args.seed,
                                    best_epoch=state.get("epoch", 0))
    _write_report(out, report)
    print(json.dumps({"seed": args.seed, "epochs": epochs, "checkpoint": str(ckpt_path),
                      "val_accuracy": report.accuracy}))
    return EXIT_OK


def _write_split_manifest(manifest, path: Path):
    # the split actually trained on, with paths relative to its new home
    base = path.parent.resolve()
    records = [
        replace(r, path=os.path.relpath(manifest.resolve(r).resolve(), base))
        for r in manifest.records
    ]
    replace(manifest, records=records, root=base).write(path)


def _write_report(out: Path, report: EvalReport):
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())


def _read_predictions(path, classes) -> tuple:
    by_name = {c: i for i, c in enumerate(classes)}

    def cid(v):
        v = v.strip()
        if v in by_name:
            return by_name[v]
        if v.isdigit() and int(v) < len(classes):
            return int(v)
        raise UsageError(f"unknown class {v!r} in predictions file")

    truth, preds = [], []
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                truth.append(cid(row["label"]))
                preds.append(cid(row["predicted"]))
    except (OSError, KeyError) as exc:
        raise UsageError(f"cannot read predictions {path}: {exc}") from None
    return truth, preds


def cmd_evaluate(args) -> int:
    manifest = _manifest(args)
    out = _out_dir(args)
    if args.predictions:
        truth, preds = _read_predictions(args.predictions, manifest.classes)
        report = EvalReport.from_labels(truth, preds, manifest.classes, source=str(args.predictions))
    else:
        ckpt = _checkpoint(args)
        model = ckpt.model
        if model.spec.task != manifest.task:
            raise UsageError(
                f"checkpoint is {model.spec.task} but the manifest declares {len(manifest.classes)} classes"
            )
        data = ManifestDataset(manifest, args.split, model.spec.input_size, model.dtype)
        if not len(data):
            raise UsageError(f"manifest has no {args.split!r} records")
        _, _, truth, preds = evaluate_split(model, data, args.batch_size, args.threshold)
        report = EvalReport.from_labels(truth, preds, manifest.classes, split=args.split,
                                        checkpoint=str(args.checkpoint))
    _write_report(out, report)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _predict_one(ckpt, image_path, threshold):
    model = ckpt.model
    x = load_image(image_path, model.spec.input_size).astype(model.dtype)
    probs = model.forward(x[None], train=False)
    names = _class_names(ckpt)
    if probs.shape[1] == 1:
        p = float(probs[0, 0])
        dist = [1.0 - p, p]
    else:
        dist = [float(v) for v in probs[0]]
    idx = int(predicted_labels(probs, threshold)[0])
    return x, {
        "image": str(image_path),
        "probabilities": dict(zip(names, dist)),
        "predicted": names[idx],
        "predicted_index": idx,
    }


def cmd_predict(args) -> int:
    ckpt = _checkpoint(args)
    _, result = _predict_one(ckpt, args.image, args.threshold)
    print(json.dumps(result))
    return EXIT_OK


def cmd_explain(args) -> int:
    ckpt = _checkpoint(args)
    out = _out_dir(args)
    x, result = _predict_one(ckpt, args.image, args.threshold)
    target = args.target_class if args.target_class is not None else result["predicted_index"]
    heat = gradcam(ckpt.model, x, target_class=target)
    grade = zone_grade(heat, args.zone_threshold, args.area_fraction)
    save_png(out / "heatmap.png", jet(heat.values))
    save_png(out / "overlay.png", overlay(x, heat, args.alpha))
    result.update({
        "target_class": heat.target_class,
        "heatmap_raw_max": heat.raw_max,
        "zone_grade": grade.to_dict(),
    })
    (out / "explain.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))
    return EXIT_OK


def _ratios(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest")
    common.add_argument("--spec", help="model spec JSON (ModelSpec fields)")
    common.add_argument("--checkpoint")
    common.add_argument("--task", choices=["binary", "three_class"])
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int, default=8)
    common.add_argument("--lr", type=float)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--out", default=".")
    common.add_argument("--precision", choices=["f32", "f64"])
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--threshold", type=float, default=0.5, help="binary decision threshold")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="radnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    p.add_argument("--ratios", type=_ratios, default=[0.8, 0.2],
                   help="split ratios for unassigned records, e.g. 0.6,0.2,0.2")
    p.add_argument("--image-split", action="store_true", help="split by image instead of by patient")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--predictions", help="CSV with label,predicted columns instead of a checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="classify one image")
    p.add_argument("image")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", parents=[common], help="Grad-CAM heatmap and zone grade for one image")
    p.add_argument("image")
    p.add_argument("--target-class", type=int)
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--zone-threshold", type=float, default=0.5)
    p.add_argument("--area-fraction", type=float, default=0.05)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit():
            return args.func(args)
    except NumericError as exc:
        print(f"radnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RadnetError, OSError) as exc:
        print(f"radnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
