"""Command-line entry point.

Subcommands: train, calibrate, score, classify, visualize, bench.
Machine-readable output (TSV/JSON) goes to stdout or files; human
summaries go to stderr.  Exit codes: 0 success, 1 usage, 2 data error,
3 numeric failure.  File outputs are written atomically, so a failing
command leaves no partial artifacts.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from partmint import kernels
from partmint.bank import forward, init_bank
from partmint.calibration import confidence, fit_calibration
from partmint.classifier import (
    HeadTrainConfig,
    evaluate_classifier,
    init_classifier,
    predict,
    train_classifier,
)
from partmint.dataio import (
    SyntheticSpec,
    atomic_write_bytes,
    atomic_write_text,
    generate_synthetic,
    load_bank,
    load_calibration,
    load_classifier,
    load_features,
    read_feature_file,
    save_bank,
    save_calibration,
    save_classifier,
)
from partmint.errors import DataFormatError, NumericError, PartmintError
from partmint.training import TrainConfig, attention_coverage, train
from partmint import viz

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(msg: str):
    print(msg, file=sys.stderr)


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in _parse_float_list(text)]


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        if "x" in text:
            h, w = text.lower().split("x")
            return int(h), int(w)
        side = int(text)
        return side, side
    except ValueError as exc:
        raise UsageError(f"bad --resolution {text!r}, expected HxW or a single integer") from exc


def _add_train_flags(p: argparse.ArgumentParser, defaults: bool = True):
    d = TrainConfig()
    get = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--lambda", dest="lam", type=float, default=get(d.lam))
    p.add_argument("--epochs", type=int, default=get(d.epochs))
    p.add_argument("--learning-rate", type=float, default=get(d.learning_rate))
    p.add_argument("--weight-decay", type=float, default=get(d.weight_decay))
    p.add_argument("--batch-size", type=int, default=get(d.batch_size))
    p.add_argument("--rmsprop-smoothing", type=float, default=get(d.rmsprop_smoothing))
    p.add_argument("--rmsprop-epsilon", type=float, default=get(d.rmsprop_epsilon))
    p.add_argument("--seed", type=int, default=get(d.seed))


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lam=args.lam,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        rmsprop_smoothing=args.rmsprop_smoothing,
        rmsprop_epsilon=args.rmsprop_epsilon,
        seed=args.seed,
    )


def _add_spec_flags(p: argparse.ArgumentParser):
    d = SyntheticSpec()
    p.add_argument("--height", type=int, default=d.height)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--depth", type=int, default=d.depth)
    p.add_argument("--p-true", type=int, default=d.p_true)
    p.add_argument("--n-train", type=int, default=d.n_train)
    p.add_argument("--n-test", type=int, default=d.n_test)
    p.add_argument("--noise-sigma", type=float, default=d.noise_sigma)
    p.add_argument("--pattern-gain", type=str, default=str(d.pattern_gain))
    p.add_argument("--absence-rate", type=float, default=d.absence_rate)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--data-seed", type=int, default=d.seed)


def _spec_from_args(args) -> SyntheticSpec:
    gains = _parse_float_list(args.pattern_gain)
    return SyntheticSpec(
        height=args.height,
        width=args.width,
        depth=args.depth,
        p_true=args.p_true,
        n_train=args.n_train,
        n_test=args.n_test,
        noise_sigma=args.noise_sigma,
        pattern_gain=gains[0] if len(gains) == 1 else gains,
        absence_rate=args.absence_rate,
        num_classes=args.num_classes,
        seed=args.data_seed,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _train_config(args)
    feats, _, _ = load_features(args.manifest, split=args.split)
    bank_seed = args.bank_seed if args.bank_seed is not None else cfg.seed
    bank = init_bank(args.p, feats.shape[3], bank_seed)
    log = io.StringIO()
    bank, report = train(bank, feats, cfg, log_stream=log)
    log_path = args.log or str(args.bank) + ".log.jsonl"
    atomic_write_text(log_path, log.getvalue())
    save_bank(args.bank, bank)
    _say(
        f"trained {bank.p} detectors for {cfg.epochs} epochs "
        f"({kernels.BACKEND} backend); final coverage E = {report.final_coverage:.4f}"
    )
    _say(f"bank -> {args.bank}, epoch log -> {log_path}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    import warnings

    feats, _, _ = load_features(args.manifest, split=args.split)
    bank = load_bank(args.bank)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        params = fit_calibration(bank, feats)
    for w in caught:
        _say(f"warning: {w.message}")
    save_calibration(args.calibration, params)
    _say(f"calibrated {params.p} detectors over {params.count} images -> {args.calibration}")
    return EXIT_OK


def cmd_score(args) -> int:
    fmap = read_feature_file(args.features)
    bank = load_bank(args.bank)
    params = load_calibration(args.calibration)
    result = confidence(params, bank, fmap)
    lines = ["detector\th\tw\traw_score\tconfidence\tvisible"]
    for i in range(bank.p):
        h, w = result.max_locations[i]
        conf = result.confidences[i]
        visible = "true" if conf >= args.visibility_threshold else "false"
        lines.append(f"{i}\t{h}\t{w}\t{result.max_scores[i]:.9g}\t{conf:.9g}\t{visible}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_classify(args) -> int:
    if args.train:
        return _classify_train(args)
    if not args.model:
        raise UsageError("classify needs --model (or --train with --bank and --model)")
    model = load_classifier(args.model)
    feats, ids, labels = load_features(args.manifest, split=args.split)
    if any(lbl is None for lbl in labels):
        raise DataFormatError(
            "manifest items carry no labels; classification needs labeled items"
        )
    y = np.array(labels, dtype=np.int64)
    hits = 0
    for x in range(feats.shape[0]):
        res = predict(model, feats[x])
        hits += int(res.class_index == y[x])
        print(
            json.dumps(
                {
                    "type": "trace",
                    "id": ids[x],
                    "label": int(y[x]),
                    "predicted": res.class_index,
                    "final_logits": [float(v) for v in res.final_logits],
                    "part_logits": [[float(v) for v in row] for row in res.part_logits],
                }
            )
        )
    accuracy = hits / feats.shape[0]
    print(json.dumps({"type": "summary", "count": feats.shape[0], "accuracy": accuracy}))
    _say(f"accuracy {accuracy:.4f} over {feats.shape[0]} images")
    return EXIT_OK


def _classify_train(args) -> int:
    if not (args.bank and args.model):
        raise UsageError("classify --train needs --bank (input) and --model (output)")
    bank = load_bank(args.bank)
    feats, _, labels = load_features(args.manifest, split=args.split or "train")
    if any(lbl is None for lbl in labels):
        raise DataFormatError("manifest items carry no labels; head training needs labels")
    y = np.array(labels, dtype=np.int64)
    num_classes = args.num_classes or int(y.max()) + 1
    hidden = tuple(_parse_int_list(args.hidden))
    if len(hidden) != 2:
        raise UsageError(f"--hidden expects two comma-separated sizes, got {args.hidden!r}")
    cfg = HeadTrainConfig(seed=args.seed if args.seed is not None else 0)
    for name in ("epochs", "learning_rate", "weight_decay", "batch_size"):
        value = getattr(args, name)
        if value is not None:
            cfg = replace(cfg, **{name: value})
    model = init_classifier(
        bank, num_classes, hidden=hidden, dropout_rate=args.dropout, seed=cfg.seed
    )
    model, history = train_classifier(model, feats, y, cfg)
    save_classifier(args.model, model)
    last = history[-1] if history else None
    if last:
        _say(f"head training: final loss {last.loss:.4f}, train accuracy {last.accuracy:.4f}")
    _say(f"model -> {args.model}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    fmap = read_feature_file(args.features)
    bank = load_bank(args.bank)
    out_h, out_w = _parse_resolution(args.resolution)
    fr = forward(bank, fmap)
    out_dir = Path(args.out_dir)
    # render everything to memory first so a failure writes nothing
    blobs: list[tuple[str, bytes]] = []
    files = []
    for i in range(bank.p):
        amap = fr.activation_maps[i]
        vmax = float(amap.max())
        name = f"detector_{i:02d}.png"
        blobs.append((name, viz.heatmap_png(amap, out_h, out_w, vmax)))
        entry = {"detector": i, "file": name, "vmin": 0.0, "vmax": vmax}
        if args.image:
            overlay = f"overlay_{i:02d}.png"
            blobs.append((overlay, viz.overlay_png(args.image, amap, out_h, out_w, vmax)))
            entry["overlay"] = overlay
        files.append(entry)
    metadata = {
        "version": 1,
        "resolution": [out_h, out_w],
        "upsampling": "bilinear",
        "colormap": {"name": viz.COLORMAP_NAME, **viz.COLORMAP_FORMULA},
        "maps": files,
    }
    for name, blob in blobs:
        atomic_write_bytes(out_dir / name, blob)
    atomic_write_text(out_dir / "metadata.json", json.dumps(metadata, indent=2) + "\n")
    _say(f"wrote {len(files)} heatmap(s) to {out_dir}")
    return EXIT_OK


BENCH_REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "backend", "spec", "train_config", "runs", "total_seconds"],
    "properties": {
        "version": {"const": 1},
        "backend": {"type": "string"},
        "spec": {"type": "object"},
        "train_config": {"type": "object"},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["p", "lambda", "coverage", "locality", "unicity", "total", "seconds"],
                "properties": {
                    "p": {"type": "integer", "minimum": 1},
                    "lambda": {"type": "number", "minimum": 0},
                    "coverage": {"type": "number"},
                    "locality": {"type": "number"},
                    "unicity": {"type": "number"},
                    "total": {"type": "number"},
                    "seconds": {"type": "number", "minimum": 0},
                },
            },
        },
        "total_seconds": {"type": "number", "minimum": 0},
    },
}


def cmd_bench(args) -> int:
    t_start = time.perf_counter()
    spec = _spec_from_args(args)
    cfg = _train_config(args)
    out_dir = Path(args.out_dir)
    paths = generate_synthetic(spec, out_dir / "data")
    feats = paths.data.train
    p_list = _parse_int_list(args.p_list)
    lambda_list = _parse_float_list(args.lambda_list)
    runs = []
    for p in p_list:
        for lam in lambda_list:
            run_cfg = replace(cfg, lam=lam)
            bank = init_bank(p, spec.depth, run_cfg.seed)
            t0 = time.perf_counter()
            bank, report = train(bank, feats, run_cfg)
            seconds = time.perf_counter() - t0
            last = report.epochs[-1]
            runs.append(
                {
                    "p": p,
                    "lambda": lam,
                    "coverage": report.final_coverage,
                    "locality": last.locality,
                    "unicity": last.unicity,
                    "total": last.total,
                    "seconds": seconds,
                }
            )
            _say(
                f"p={p} lambda={lam}: E={report.final_coverage:.4f} "
                f"total={last.total:.4f} ({seconds:.1f}s)"
            )
    report_doc = {
        "version": 1,
        "backend": kernels.BACKEND,
        "spec": json.loads(json.dumps(spec.__dict__, default=list)),
        "train_config": dict(cfg.__dict__),
        "runs": runs,
        "total_seconds": time.perf_counter() - t_start,
    }
    atomic_write_text(out_dir / "report.json", json.dumps(report_doc, indent=2) + "\n")
    table = ["p\tlambda\tcoverage"]
    table += [f"{r['p']}\t{r['lambda']}\t{r['coverage']:.6f}" for r in runs]
    atomic_write_text(out_dir / "coverage.tsv", "\n".join(table) + "\n")
    _say(f"report -> {out_dir / 'report.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partmint", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a detector bank on a feature manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--bank", required=True, help="output path for the trained bank")
    p_train.add_argument("--log", default=None, help="epoch log path (JSON lines)")
    p_train.add_argument("--p", type=int, default=4, help="number of detectors")
    p_train.add_argument("--bank-seed", type=int, default=None, help="kernel init seed (default: --seed)")
    p_train.add_argument("--split", default="train")
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_cal = sub.add_parser("calibrate", help="fit per-detector confidence parameters")
    p_cal.add_argument("--manifest", required=True)
    p_cal.add_argument("--bank", required=True)
    p_cal.add_argument("--calibration", required=True, help="output JSON path")
    p_cal.add_argument("--split", default="train")
    p_cal.set_defaults(func=cmd_calibrate)

    p_score = sub.add_parser("score", help="score one feature file against a calibrated bank")
    p_score.add_argument("--features", required=True)
    p_score.add_argument("--bank", required=True)
    p_score.add_argument("--calibration", required=True)
    p_score.add_argument("--visibility-threshold", type=float, default=0.02)
    p_score.set_defaults(func=cmd_score)

    p_cls = sub.add_parser("classify", help="evaluate (or train, with --train) part heads")
    p_cls.add_argument("--manifest", required=True)
    p_cls.add_argument("--model", help="classifier container (input, or output with --train)")
    p_cls.add_argument("--train", action="store_true", help="train heads instead of evaluating")
    p_cls.add_argument("--bank", help="trained bank (input, --train mode)")
    p_cls.add_argument("--split", default=None)
    p_cls.add_argument("--hidden", default="4096,4096")
    p_cls.add_argument("--dropout", type=float, default=0.5)
    p_cls.add_argument("--num-classes", type=int, default=None)
    _add_train_flags(p_cls, defaults=False)
    p_cls.set_defaults(func=cmd_classify)

    p_viz = sub.add_parser("visualize", help="write per-detector heatmap images")
    p_viz.add_argument("--features", required=True)
    p_viz.add_argument("--bank", required=True)
    p_viz.add_argument("--out-dir", required=True)
    p_viz.add_argument("--resolution", default="224x224")
    p_viz.add_argument("--image", default=None, help="original image for overlays")
    p_viz.set_defaults(func=cmd_visualize)

    p_bench = sub.add_parser("bench", help="run the synthetic pipeline benchmark")
    p_bench.add_argument("--out-dir", required=True)
    p_bench.add_argument("--p-list", default="2,4,6")
    p_bench.add_argument("--lambda-list", default="0,0.2")
    _add_spec_flags(p_bench)
    _add_train_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    split = getattr(args, "split", "train")
    if split is not None and split not in ("train", "test"):
        _say(f"partmint: error: --split must be 'train' or 'test', got {split!r}")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        _say(f"partmint: error: {exc}")
        return EXIT_USAGE
    except NumericError as exc:
        _say(f"partmint: numeric failure: {exc}")
        return EXIT_NUMERIC
    except (DataFormatError, OSError, PartmintError, ValueError) as exc:
        _say(f"partmint: data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
