"""``dune-detect``: one entry point for the dataset, augmentation,
evaluation, budget, benchmark and toy-training pipelines.

Every subcommand writes one primary report (JSON or CSV) that is
byte-identical across runs with the same configuration and seed.  Anything
that depends on wall-clock time goes to a separate sidecar file.

Exit codes: 0 success, 1 runtime failure, 2 input or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .augment import AugConfig, generate_variant
from .budget import BenchmarkError, BudgetError, bench_latency, budget, load_spec, prune, reference_spec, spec_forward
from .dataset import (
    DEFAULT_RATIO,
    DatasetError,
    LabeledImage,
    load_descriptor,
    manifest_summary,
    read_dataset,
    read_labels,
    split_dataset,
    write_dataset,
)
from .metrics import confidence_sweep, evaluate, parse_iou_range, parse_predictions
from .toy import (
    DetectorConfig,
    SATConfig,
    ToyDetector,
    TrainConfig,
    TrainingDiverged,
    corrupt,
    evaluate_detector,
    history_csv,
    make_backgrounds,
    make_synthetic_shapes,
    save_checkpoint,
    to_gray,
    train,
)

log = logging.getLogger("dune_detect")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
SEED_ENV = "DUNE_DETECT_SEED"

# output locations and parallelism do not change report content
NOT_CONFIG = {"out", "report", "plot", "sweep", "history", "timing", "threads", "func"}

COMPARE_COLUMNS = ("mAP@0.50:0.95", "mAP@0.50", "mAP@0.75", "Params", "FLOPs", "Size", "Latency")
COMPARE_UNITS = {"Params": "count", "FLOPs": "GFLOPs (2 x MACs)", "Size": "MB", "Latency": "ms (median)"}
COMPARABLE = ("eval", "budget", "bench", "bench_timing", "train")


class InputError(Exception):
    """Bad flags, files or report schemas; maps to exit code 2."""


# ---------------------------------------------------------------- helpers


def config_hash(args: argparse.Namespace) -> str:
    cfg = {k: v for k, v in vars(args).items() if k not in NOT_CONFIG}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def stanza(args: argparse.Namespace) -> dict:
    return {"seed": args.seed, "version": __version__, "config_hash": config_hash(args)}


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _scalar(v):
    return v is None or isinstance(v, (str, int, float, bool))


def flatten(doc: dict, prefix: str = "") -> dict:
    """Scalar leaves of nested dicts under dotted keys; lists are skipped."""
    out = {}
    for k in sorted(doc):
        v = doc[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        elif _scalar(v):
            out[key] = v
    return out


def to_csv(rows: list[dict], columns=None) -> str:
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r.get(k) is None else r.get(k) for k in columns})
    return buf.getvalue()


def write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def emit(args, doc: dict, rows: list[dict] | None = None, columns=None) -> None:
    """Write the primary report.  CSV gets ``rows`` (default: the flattened
    scalars of ``doc`` as one row) with the reproducibility columns added."""
    rep = stanza(args)
    doc = {**doc, "reproducibility": rep}
    if args.out_format == "json":
        write_text(args.report, dump_json(doc))
        return
    if rows is None:
        rows = [{k: v for k, v in flatten(doc).items() if not k.startswith("reproducibility.")}]
    extra = {f"repro_{k}": v for k, v in rep.items()}
    rows = [{"kind": doc["kind"], **r, **extra} for r in rows]
    if columns is not None:
        columns = ["kind", *columns, *extra]
    write_text(args.report, to_csv(rows, columns))


def parse_ratio(text: str | None, fallback) -> tuple[float, float, float]:
    if text is None:
        return tuple(fallback)
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise InputError(f"bad ratio {text!r}, expected three comma-separated fractions") from None
    if len(parts) != 3:
        raise InputError(f"bad ratio {text!r}, expected three fractions")
    return parts


def _generated(source: str):
    """``synthetic:N`` / ``background:N`` sources, else None."""
    kind, sep, count = source.partition(":")
    if not sep or kind not in ("synthetic", "background"):
        return None
    try:
        n = int(count)
    except ValueError:
        raise InputError(f"bad source {source!r}: count must be an integer") from None
    if n < 0:
        raise InputError(f"bad source {source!r}: negative count")
    return kind, n


def load_source(source: str, class_count: int, seed: int, provenance: str = "raw"):
    gen = _generated(source)
    if gen is not None:
        kind, n = gen
        if kind == "synthetic":
            return make_synthetic_shapes(n, 32, min(class_count, 5), seed, prefix="syn"), None
        return make_backgrounds(n, 32, seed), None
    if not Path(source).is_dir():
        raise InputError(f"no such dataset directory: {source}")
    return read_dataset(source, class_count, provenance)


def _spec(args):
    spec = reference_spec(0.5) if args.spec == "reference" else load_spec(args.spec)
    if args.input_side is not None:
        spec = replace(spec, input_side=args.input_side)
    base = spec
    if args.prune_width is not None:
        spec = prune(spec, args.prune_width)
    return base, spec


# ------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    desc = load_descriptor(args.descriptor)
    prov = "negative" if args.negative else "raw"
    images, _ = load_source(args.input, len(desc.classes), args.seed, prov)
    if args.negative:
        images = [img.with_(provenance="negative") for img in images]
    manifest = write_dataset(args.out, images, None, desc.classes) if args.out else \
        manifest_summary(images, None, desc.classes)
    emit(args, {"kind": "ingest", "source": args.input, "manifest": manifest})
    return EXIT_OK


def cmd_split(args) -> int:
    desc = load_descriptor(args.descriptor)
    ratio = parse_ratio(args.ratio, desc.splits)
    images = None
    given = [x is not None for x in (args.input, args.count, args.ids)]
    if sum(given) != 1:
        raise InputError("split needs exactly one of --in, --count, --ids")
    if args.input is not None:
        images, _ = load_source(args.input, len(desc.classes), args.seed)
        ids = [img.id for img in images]
    elif args.count is not None:
        ids = [f"{k:06d}" for k in range(args.count)]
    else:
        ids = [line.strip() for line in Path(args.ids).read_text().splitlines() if line.strip()]
    split = split_dataset(ids, ratio, args.seed)
    if args.out:
        if images is None:
            raise InputError("--out needs --in (there are no images to write)")
        write_dataset(args.out, images, split, desc.classes)
    sizes = dict(zip(("train", "val", "test"), split.sizes()))
    doc = {"kind": "split", "count": len(ids), "ratio": list(ratio), "sizes": sizes, "split": split.to_dict()}
    rows = [{"split": name, "size": len(members), "ids": " ".join(members)} for name, members in split.items()]
    emit(args, doc, rows, ["split", "size", "ids"])
    return EXIT_OK


def cmd_augment(args) -> int:
    desc = load_descriptor(args.descriptor)
    raw, _ = load_source(args.input, len(desc.classes), args.seed)
    negs: list[LabeledImage] = []
    if args.negatives:
        negs, _ = load_source(args.negatives, len(desc.classes), args.seed + 1, "negative")
        negs = [n.with_(provenance="negative") for n in negs]
    count = len(negs) if args.neg_count is None else args.neg_count
    cfg = AugConfig(args.num_geom, args.num_cutmix, args.num_mosaic, count, args.seed,
                    args.paper_faithful_split, parse_ratio(args.ratio, desc.splits))
    variant = generate_variant(raw, cfg, negs, desc.classes, threads=args.threads)
    if args.out:
        write_dataset(args.out, variant.images, variant.split, desc.classes)
        write_text(Path(args.out) / "manifest.json", dump_json(variant.manifest))
    doc = {"kind": "augment", "source": args.input, "negatives": args.negatives, "manifest": variant.manifest}
    rows = [{"key": k, "value": v} for k, v in flatten(variant.manifest).items()]
    emit(args, doc, rows, ["key", "value"])
    return EXIT_OK


def cmd_eval(args) -> int:
    desc = load_descriptor(args.descriptor)
    gt = read_labels(args.gt, len(desc.classes), args.split)
    dets = parse_predictions(Path(args.pred).read_text())
    try:
        ious = parse_iou_range(args.iou_range)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report = evaluate(gt, dets, args.conf, ious, len(desc.classes), args.interpolation)
    doc = {"kind": "eval", "gt": args.gt, "pred": args.pred, "images": len(gt), "detections": len(dets),
           **report.to_dict()}
    if args.sweep or args.plot:
        rows = confidence_sweep(gt, dets)
        if args.sweep:
            write_text(args.sweep, to_csv([dict(zip(("threshold", "precision", "recall", "f1"), r))
                                           for r in rows]))
        if args.plot:
            from .plots import plot_sweep
            plot_sweep(rows, args.plot)
    emit(args, doc)
    return EXIT_OK


def cmd_budget(args) -> int:
    base, spec = _spec(args)
    rep = budget(spec, args.bytes_per_param, args.overhead_mb)
    doc = {"kind": "budget", "name": spec.name, "spec": args.spec, **rep.to_dict()}
    if args.prune_width is not None:
        doc["unpruned"] = budget(base, args.bytes_per_param, args.overhead_mb).to_dict()
    emit(args, doc)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.stub_sleep_ms is not None:
        delay = args.stub_sleep_ms / 1000.0
        fn, doc = (lambda: time.sleep(delay)), {"kind": "bench", "target": f"sleep {args.stub_sleep_ms} ms"}
    else:
        _, spec = _spec(args)
        rep = budget(spec)
        fn = spec_forward(spec, args.seed)
        doc = {"kind": "bench", "target": "spec_forward", "name": spec.name, "spec": args.spec,
               "params": rep.params, "gflops": rep.gflops, "size_mb": rep.size_mb,
               "width_multiple": spec.width_multiple, "input_side": spec.input_side}
    doc.update(iters=args.iters, warmup=args.warmup)
    try:
        stats = bench_latency(fn, args.warmup, args.iters)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    timing = {"kind": "bench_timing", "latency_ms": stats.median, "mean_ms": stats.mean,
              "median_ms": stats.median, "p95_ms": stats.p95, "samples_ms": stats.samples,
              "conditions": stats.conditions, "measured_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    timing_path = args.timing
    if timing_path is None and args.report not in (None, "-"):
        p = Path(args.report)
        timing_path = p.with_name(p.stem + ".timing.json")
    if timing_path is None:
        sys.stderr.write(dump_json(timing))
    else:
        write_text(timing_path, dump_json(timing))
        doc["timing_file"] = Path(timing_path).name
    emit(args, doc)
    return EXIT_OK


def _toy_data(args, class_count: int):
    gen = _generated(args.data)
    if gen is not None:
        if gen[0] != "synthetic":
            raise InputError("train-toy needs labelled data: a directory or synthetic:N")
        n = gen[1]
        n_val = args.val_size if args.val_size is not None else round(0.3 * n)
        classes = min(class_count, 5)
        return (make_synthetic_shapes(n, args.side, classes, 1000 + args.seed, prefix="tr"),
                make_synthetic_shapes(n_val, args.side, classes, 2000 + args.seed, prefix="va"),
                make_synthetic_shapes(n_val, args.side, classes, 3000 + args.seed, prefix="te"))
    images, split = load_source(args.data, class_count, args.seed)
    if split is None:
        split = split_dataset([img.id for img in images], DEFAULT_RATIO, args.seed)
    by_id = {img.id: img for img in images}
    return tuple([by_id[i] for i in ids] for _, ids in split.items())


def cmd_train_toy(args) -> int:
    desc = load_descriptor(args.descriptor)
    train_set, val_set, test_set = _toy_data(args, len(desc.classes))
    if not train_set or not val_set:
        raise InputError("train-toy needs non-empty train and val sets")
    try:
        cfg = DetectorConfig(side=args.side, grid=args.side // 4, num_classes=len(desc.classes))
        tcfg = TrainConfig(args.epochs, args.patience, args.batch, args.side, args.lr, args.seed,
                           args.grad_clip if args.grad_clip > 0 else None)
        scfg = None if args.no_sat else SATConfig(args.sat_eps, args.sat_prob, args.sat_mode)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    det = ToyDetector.init(cfg, args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    extra = {"seed": args.seed, "config_hash": config_hash(args)}
    try:
        res = train(train_set, val_set, det, tcfg, scfg)
    except TrainingDiverged as exc:
        if args.out:
            save_checkpoint(args.out, exc.detector, {**extra, "diverged": True})
        raise
    if args.out:
        save_checkpoint(args.out, res.detector, extra)
    if args.history:
        write_text(args.history, history_csv(res.history))
    if args.plot:
        from .plots import plot_history
        plot_history(res.history, args.plot)
    doc = {"kind": "train", "data": args.data, "params": int(res.detector.params.size),
           "train_images": len(train_set), "val_images": len(val_set), "test_images": len(test_set),
           "best_val_map50": res.best_map50, "best_epoch": res.best_epoch, "stopped_epoch": res.stopped_epoch,
           "sat": None if scfg is None else {"epsilon": scfg.epsilon, "apply_prob": scfg.apply_prob,
                                             "mode": scfg.mode},
           "history": [{"epoch": r.epoch, "train_loss": r.train_loss, "val_map50": r.val_map50,
                        "sat_batches": r.sat_batches} for r in res.history]}
    if args.out:
        doc["checkpoint_sha256"] = hashlib.sha256(Path(args.out).read_bytes()).hexdigest()
    if test_set:
        x = to_gray(test_set, args.side)
        gts = [list(img.annotations) for img in test_set]
        ids = [img.id for img in test_set]
        rep = evaluate_detector(res.detector, x, gts, ids)
        doc.update(test_map50=rep.map50, test_map75=rep.map75, test_map5095=rep.map5095,
                   test_precision=rep.precision, test_recall=rep.recall, test_f1=rep.f1)
        if args.attack_eps > 0:
            for kind in ("fgsm", "noise"):
                xa = corrupt(res.detector, x, gts, args.attack_eps, kind, args.seed)
                doc[f"{kind}_test_map50"] = evaluate_detector(res.detector, xa, gts, ids).map50
            doc["attack_eps"] = args.attack_eps
    emit(args, doc)
    return EXIT_OK


# ---------------------------------------------------------------- reports


def load_report(path) -> dict:
    """A report written by this tool, JSON or single-row CSV."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such report: {path}")
    text = p.read_text()
    if p.suffix.lower() == ".csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        if len(rows) != 1 or "kind" not in rows[0]:
            raise InputError(f"{path}: expected a single-row CSV report with a 'kind' column")
        return {k: _num(v) for k, v in rows[0].items()}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not JSON ({exc})") from None
    if not isinstance(doc, dict) or "kind" not in doc:
        raise InputError(f"{path}: not a dune-detect report (no 'kind')")
    return doc


def _num(text: str):
    if text == "":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def compare_cells(doc: dict, name: str) -> dict:
    kind = doc.get("kind")
    if kind not in COMPARABLE:
        raise InputError(f"{name}: report kind {kind!r} has no comparison columns")
    cells: dict = {}
    if kind == "eval":
        cells = {"mAP@0.50:0.95": doc.get("map5095"), "mAP@0.50": doc.get("map50"), "mAP@0.75": doc.get("map75")}
    elif kind == "train":
        cells = {"mAP@0.50:0.95": doc.get("test_map5095"), "mAP@0.50": doc.get("test_map50"),
                 "mAP@0.75": doc.get("test_map75"), "Params": doc.get("params")}
    elif kind in ("budget", "bench"):
        cells = {"Params": doc.get("params"), "FLOPs": doc.get("gflops"), "Size": doc.get("size_mb")}
    elif kind == "bench_timing":
        cells = {"Latency": doc.get("latency_ms")}
    for col, v in cells.items():
        if v is not None and not isinstance(v, (int, float)):
            raise InputError(f"{name}: column {col} is not numeric ({v!r})")
    return {k: v for k, v in cells.items() if v is not None}


def compare_row(spec: str, label: str | None = None) -> dict:
    """One table row from ``a.json`` or several files joined with ``+``."""
    row: dict = {}
    names = spec.split("+")
    docs = [load_report(name) for name in names]
    for name, doc in zip(names, docs):
        for col, v in compare_cells(doc, name).items():
            if col in row and row[col] != v:
                raise InputError(f"{spec}: conflicting values for {col}: {row[col]!r} vs {v!r}")
            row[col] = v
    model = label or next((d["name"] for d in docs if d.get("name")), None)
    return {"Model": model or Path(names[0]).stem, **{c: row.get(c) for c in COMPARE_COLUMNS}}


def report_compare(specs, labels=None) -> list[dict]:
    if not specs:
        raise InputError("report needs at least one input")
    if labels is not None and len(labels) != len(specs):
        raise InputError("--labels must name every input")
    return [compare_row(s, labels[i] if labels else None) for i, s in enumerate(specs)]


def aggregate(rows: list[dict]) -> list[dict]:
    out = []
    for col in COMPARE_COLUMNS:
        vals = [float(r[col]) for r in rows if r.get(col) is not None]
        if not vals:
            continue
        mean = math.fsum(vals) / len(vals)
        sd = statistics.stdev(vals) if len(vals) > 1 else None
        out.append({"column": col, "mean": mean, "sd": sd, "n": len(vals),
                    "display": f"{mean:.4f}" + (f" ± {sd:.4f}" if sd is not None else "")})
    return out


def cmd_report(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    if args.aggregate:
        rows = report_compare(args.aggregate, labels)
        stats = aggregate(rows)
        doc = {"kind": "aggregate", "inputs": args.aggregate, "rows": stats, "units": COMPARE_UNITS}
        emit(args, doc, stats, ["column", "mean", "sd", "n", "display"])
        return EXIT_OK
    rows = report_compare(args.compare, labels)
    doc = {"kind": "compare", "inputs": args.compare, "columns": ["Model", *COMPARE_COLUMNS],
           "rows": rows, "units": COMPARE_UNITS}
    if args.plot:
        from .plots import plot_compare
        plot_compare(rows, args.plot)
    emit(args, doc, rows, ["Model", *COMPARE_COLUMNS])
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _global_options(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--seed", type=int, default=default, help=f"random seed (env {SEED_ENV}, default 0)")
    p.add_argument("--threads", type=int, default=default if default is argparse.SUPPRESS else 1)
    p.add_argument("--out-format", choices=("json", "csv"),
                   default=default if default is argparse.SUPPRESS else "json")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dune-detect", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(ap, None)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, argparse.SUPPRESS)
    common.add_argument("--report", help="primary report path (default: stdout)")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "validate a labelled dataset and write it in canonical form")
    p.add_argument("--in", dest="input", required=True, help="directory, synthetic:N or background:N")
    p.add_argument("--out")
    p.add_argument("--descriptor")
    p.add_argument("--negative", action="store_true", help="source holds background images only")

    p = add("split", cmd_split, "train/val/test split")
    p.add_argument("--in", dest="input")
    p.add_argument("--count", type=int)
    p.add_argument("--ids")
    p.add_argument("--ratio", help="e.g. 0.6,0.2,0.2")
    p.add_argument("--descriptor")
    p.add_argument("--out")

    p = add("augment", cmd_augment, "build an augmented dataset variant")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--num-geom", type=int, default=0)
    p.add_argument("--num-cutmix", type=int, default=0)
    p.add_argument("--num-mosaic", type=int, default=0)
    p.add_argument("--negatives", help="directory or background:N")
    p.add_argument("--neg-count", type=int, help="how many negatives to inject (default: all)")
    p.add_argument("--paper-faithful-split", action="store_true",
                   help="split after augmenting, so val/test also hold augmented images")
    p.add_argument("--ratio")
    p.add_argument("--descriptor")

    p = add("eval", cmd_eval, "score predictions against labels")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--conf", type=float, default=0.25)
    p.add_argument("--iou-range", default="0.5:0.95:0.05")
    p.add_argument("--interpolation", choices=("coco101", "allpoint"), default="coco101")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--descriptor")
    p.add_argument("--sweep", help="CSV of threshold,precision,recall,f1")
    p.add_argument("--plot", help="PNG of the confidence sweep")

    for name, func, help_ in (("budget", cmd_budget, "params / FLOPs / size of a model spec"),
                              ("bench", cmd_bench, "latency of a model spec forward pass")):
        p = add(name, func, help_)
        p.add_argument("--spec", default="reference", help="ModelSpec JSON or 'reference'")
        p.add_argument("--prune-width", type=float)
        p.add_argument("--input-side", type=int)
        if name == "budget":
            p.add_argument("--bytes-per-param", type=float, default=2.0)
            p.add_argument("--overhead-mb", type=float, default=0.35)
        else:
            p.add_argument("--iters", type=int, default=50)
            p.add_argument("--warmup", type=int, default=3)
            p.add_argument("--stub-sleep-ms", type=float, help="time a sleep of this length instead")
            p.add_argument("--timing", help="timing sidecar path (default: next to --report)")

    p = add("train-toy", cmd_train_toy, "train the toy grid detector, optionally with SAT")
    p.add_argument("--data", required=True, help="directory or synthetic:N")
    p.add_argument("--val-size", type=int, help="validation/test size for synthetic data")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--patience", type=int, default=15)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--grad-clip", type=float, default=10.0, help="gradient norm clip, 0 disables")
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--sat-eps", type=float, default=0.03)
    p.add_argument("--sat-prob", type=float, default=0.5)
    p.add_argument("--sat-mode", choices=("sign_ascent", "objectness_hide"), default="sign_ascent")
    p.add_argument("--no-sat", action="store_true", help="plain training")
    p.add_argument("--attack-eps", type=float, default=0.0, help="also score corrupted test images")
    p.add_argument("--descriptor")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--history", help="CSV epoch,train_loss,val_map50")
    p.add_argument("--plot", help="PNG of the training history")

    p = add("report", cmd_report, "compare or aggregate reports")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--compare", nargs="+", metavar="REPORT", help="one row per argument; join files with +")
    g.add_argument("--aggregate", nargs="+", metavar="REPORT", help="mean and sd over runs")
    p.add_argument("--labels", help="comma-separated row names")
    p.add_argument("--plot", help="PNG bar chart of the accuracy columns")
    return ap


def _resolve_seed(args) -> None:
    if args.seed is None:
        env = os.environ.get(SEED_ENV)
        try:
            args.seed = int(env) if env not in (None, "") else 0
        except ValueError:
            raise InputError(f"{SEED_ENV}={env!r} is not an integer") from None


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _resolve_seed(args)
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        return args.func(args)
    except (InputError, DatasetError, BudgetError, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError) as exc:
        print(f"dune-detect {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDiverged, BenchmarkError) as exc:
        print(f"dune-detect {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"dune-detect {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a runtime failure, not bad input
        log.debug("unhandled", exc_info=True)
        print(f"dune-detect {args.command}: failed: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


run = main

if __name__ == "__main__":
    sys.exit(main())
