"""Command-line front end: ``presort <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig, load_config, preset_config
from .corpus import (SPLITS, ManifestError, WavError, generate_synthetic_corpus, load_ground_truth,
                     load_manifest, split, write_manifest)
from .labels import BACKGROUND, LabelSpace
from .net import BINARY, load_checkpoint, save_checkpoint
from .pipeline import (REGIMES, TrainingDiverged, background_probability, binarize_labels,
                       evaluate_binary, evaluate_multiclass, preprocess_splits, presort,
                       relabel_statistics, run_experiment, train_binary, train_multiclass,
                       write_relabels)
from .segmenter import load_store, save_store
from .threshold import threshold_all

log = logging.getLogger("presort")

LABELS_FILE = "labels.txt"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.segment_length is not None:
        overrides["segment.length_s"] = str(args.segment_length)
    if getattr(args, "tau", None) is not None:
        overrides["train.relabel_threshold"] = str(args.tau)
    if getattr(args, "thresholding", False):
        overrides["train.thresholding_enabled"] = "true"
    if args.epochs is not None:
        parts = [p.strip() for p in args.epochs.split(",")]
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise ConfigError(f"--epochs expects N or B,M, got {args.epochs!r}")
        overrides["train.epochs_binary"], overrides["train.epochs_multiclass"] = parts
    if args.config is None and args.preset:
        cfg = preset_config(args.preset)
        for k, v in overrides.items():
            cfg.set(k, v)
        cfg.validate()
        return cfg
    if args.config is not None and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    return load_config(args.config, overrides)


def prepare_out(path, cfg: RunConfig) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    return out


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def store_path(data_dir: Path, name: str, thresholded: bool = False) -> Path:
    return data_dir / (f"{name}.thresholded.seg" if thresholded else f"{name}.seg")


def load_split(data_dir: Path, name: str, thresholded: bool = False):
    path = store_path(data_dir, name, thresholded)
    if not path.is_file():
        hint = " (run preprocess with --thresholding)" if thresholded else ""
        raise UsageError(f"segment store not found: {path}{hint}")
    return load_store(path)


def load_label_space(data_dir: Path, segments=()) -> LabelSpace:
    f = data_dir / LABELS_FILE
    if f.is_file():
        return LabelSpace(tuple(x for x in f.read_text(encoding="utf-8").split() if x))
    return LabelSpace.from_labels(s.label for s in segments)


def write_label_space(data_dir: Path, space: LabelSpace) -> None:
    (data_dir / LABELS_FILE).write_text("\n".join(space) + "\n", encoding="utf-8")


def find_manifest(path) -> Path:
    p = Path(path)
    return p / "manifest.csv" if p.is_dir() else p


def find_ground_truth(manifest_path: Path, explicit=None):
    if explicit:
        return load_ground_truth(explicit)
    sidecar = manifest_path.parent / "ground_truth.csv"
    return load_ground_truth(sidecar) if sidecar.is_file() else None


def check_input_shape(cfg: RunConfig, segments) -> None:
    if segments and tuple(segments[0].values.shape) != tuple(cfg.input_shape):
        raise ConfigError(f"stored segments are {tuple(segments[0].values.shape)} but the config "
                          f"implies {tuple(cfg.input_shape)}; use the config the data was "
                          f"preprocessed with")


def print_table(rows: list[tuple[str, dict]]) -> None:
    print(f"{'split':<12}{'n':>7}{'Accuracy':>10}{'UAR':>8}{'F1':>8}")
    for name, s in rows:
        def fmt(v):
            return f"{v:.4f}" if isinstance(v, float) else "-"
        print(f"{name:<12}{s.get('n', 0):>7}{fmt(s.get('accuracy')):>10}{fmt(s.get('uar')):>8}"
              f"{fmt(s.get('f1')):>8}")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg: RunConfig) -> None:
    out = prepare_out(args.out, cfg)
    m = generate_synthetic_corpus(cfg.synth, out, seed=cfg.seed)
    print(f"wrote {len(m)} clips to {out}")


def cmd_preprocess(args, cfg: RunConfig) -> None:
    mpath = find_manifest(args.manifest)
    manifest = load_manifest(mpath)
    if not manifest.split_assignment:
        manifest = split(manifest, cfg.train.split_ratio, cfg.seed)
    out = prepare_out(args.out, cfg)
    write_manifest(manifest, out / "manifest.csv")
    write_label_space(out, manifest.label_space)
    splits = preprocess_splits(manifest, cfg, args.workers)
    for name, segs in splits.items():
        save_store(segs, store_path(out, name))
        if cfg.train.thresholding_enabled:
            save_store(threshold_all(segs, cfg.threshold, cfg.spectro.sample_rate, cfg.spectro.hop),
                       store_path(out, name, thresholded=True))
    counts = {k: len(v) for k, v in splits.items()}
    print(f"segments {cfg.input_shape[0]}x{cfg.input_shape[1]}: "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_train_binary(args, cfg: RunConfig) -> None:
    data = Path(args.data)
    thr = cfg.train.thresholding_enabled
    train = binarize_labels(load_split(data, "train", thr))
    val = binarize_labels(load_split(data, "val", thr))
    check_input_shape(cfg, train)
    result = train_binary(train, val, cfg)
    out = prepare_out(args.out, cfg)
    save_checkpoint(result.model, out / "binary.ckpt",
                    {"stage": "binary", "thresholding": thr, "best_epoch": result.best_epoch})
    write_json(out / "history.json", result.history)
    print(f"best epoch {result.best_epoch}, val F1 {result.best_score:.4f} -> {out / 'binary.ckpt'}")


def cmd_presort(args, cfg: RunConfig) -> None:
    data = Path(args.data)
    model, meta = load_checkpoint(args.model)
    if model.cfg.head != BINARY:
        raise UsageError(f"{args.model} is not a binary model")
    thr = bool(meta.get("thresholding", False)) or cfg.train.thresholding_enabled
    tau = cfg.train.relabel_threshold
    truth = find_ground_truth(data / "manifest.csv", args.ground_truth)
    out = prepare_out(args.out, cfg)
    space = load_label_space(data)
    write_label_space(out, space)
    if (data / "manifest.csv").is_file() and out.resolve() != data.resolve():
        (out / "manifest.csv").write_bytes((data / "manifest.csv").read_bytes())
    all_records, stats = [], {}
    for name in SPLITS:
        raw = load_split(data, name)
        seen = load_split(data, name, thresholded=True) if thr else raw
        new, records = presort(model, raw, tau, inputs=seen)
        save_store(new, store_path(out, name))
        all_records += records
        stats[name] = relabel_statistics(raw, records, truth, cfg.spectro.hop, cfg.spectro.sample_rate)
    write_relabels(all_records, out / "relabels.csv")
    write_json(out / "relabel_stats.json", {"tau": tau, "per_split": stats})
    print(f"tau {tau}: flipped {len(all_records)} segments to {BACKGROUND}")


def cmd_train_multiclass(args, cfg: RunConfig) -> None:
    data = Path(args.data)
    train, val = load_split(data, "train"), load_split(data, "val")
    check_input_shape(cfg, train)
    space = load_label_space(data, train + val)
    init = None
    if args.init:
        init, _ = load_checkpoint(args.init)
        if init.cfg.head != BINARY:
            raise UsageError(f"--init {args.init} is not a binary model")
    result = train_multiclass(train, val, space, cfg, init=init)
    out = prepare_out(args.out, cfg)
    save_checkpoint(result.model, out / "multiclass.ckpt",
                    {"stage": "multiclass", "label_space": list(space),
                     "warm_start": init is not None, "best_epoch": result.best_epoch})
    write_json(out / "history.json", result.history)
    print(f"best epoch {result.best_epoch}, val UAR {result.best_score:.4f} -> {out / 'multiclass.ckpt'}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    data = Path(args.data)
    model, meta = load_checkpoint(args.model)
    out = prepare_out(args.out, cfg)
    names = args.split or ["val", "test"]
    report, rows = {"model": str(args.model), "splits": {}}, []
    if model.cfg.head == BINARY:
        thr = bool(meta.get("thresholding", False))
        for name in names:
            raw = load_split(data, name)
            seen = load_split(data, name, thresholded=True) if thr else raw
            summary = evaluate_binary(model, binarize_labels(seen))
            p_bg = background_probability(model, seen)[0]
            mm = metrics.mismatch([s.label for s in raw], (p_bg < 0.5).astype(int).tolist(),
                                  load_label_space(data, raw))
            summary["mismatch"] = mm.to_dict()
            report["splits"][name] = summary
            rows.append((name, summary))
            cm = summary["confusion"]
            metrics.write_matrix_csv(out / f"confusion_{name}.csv", cm["counts"], cm["labels"], cm["labels"])
            metrics.write_heatmap(out / f"confusion_{name}.pgm", np.array(cm["counts"]))
            metrics.write_matrix_csv(out / f"mismatch_{name}.csv", mm.counts, list(mm.label_space),
                                     ["background", "primate"])
            metrics.write_heatmap(out / f"mismatch_{name}.pgm", mm.counts)
    else:
        space = LabelSpace(tuple(meta["label_space"])) if "label_space" in meta else load_label_space(data)
        for name in names:
            segs = load_split(data, name)
            summary, _ = evaluate_multiclass(model, segs, space)
            report["splits"][name] = summary
            rows.append((name, summary))
            cm = summary["confusion"]
            metrics.write_matrix_csv(out / f"confusion_{name}.csv", cm["counts"], cm["labels"], cm["labels"])
            metrics.write_heatmap(out / f"confusion_{name}.pgm", np.array(cm["counts"]))
    write_json(out / "metrics.json", report)
    print_table(rows)


def cmd_run(args, cfg: RunConfig) -> None:
    mpath = find_manifest(args.manifest)
    manifest = load_manifest(mpath)
    if not manifest.split_assignment:
        manifest = split(manifest, cfg.train.split_ratio, cfg.seed)
    truth = find_ground_truth(mpath, args.ground_truth)
    regime = args.regime
    if cfg.train.thresholding_enabled and regime == "presort":
        regime = "presort+threshold"
    report = run_experiment(regime, cfg, manifest, truth, workers=args.workers)
    out = prepare_out(args.out, cfg)
    path = report.write(out)
    mc = report.data["multiclass"]
    rows = [("val", mc["val"]), ("test", mc["test"]), ("test/clip", mc["test_clip"])]
    if "test_oracle" in mc:
        rows.append(("test/oracle", mc["test_oracle"]))
    print(f"regime {regime}, seed {cfg.seed}")
    print_table(rows)
    if report.data.get("relabel"):
        r = report.data["relabel"]
        prec = r.get("precision")
        print(f"relabeled {r['flipped']} of {r['primate_segments']} primate segments"
              + (f", {100 * prec:.1f}% outside ground-truth events" if prec is not None else ""))
    print(f"report: {path}")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults used when omitted)")
    common.add_argument("--preset", choices=["paper", "desk"],
                        help="start from a named preset instead of a config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, default=1, help="preprocessing processes")
    common.add_argument("--segment-length", type=float, help="segment length in seconds")
    common.add_argument("--epochs", help="N for both stages, or B,M")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="config override, repeatable")

    p = argparse.ArgumentParser(prog="presort", description="Binary presorting of weakly labeled audio.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")

    s = sub.add_parser("preprocess", parents=[common], help="split, segment and store spectrograms")
    s.add_argument("--manifest", required=True, help="manifest CSV or corpus directory")
    s.add_argument("--thresholding", action="store_true", help="also write thresholded stores")

    s = sub.add_parser("train-binary", parents=[common], help="train the background-vs-primate model")
    s.add_argument("--data", required=True, help="preprocess output directory")
    s.add_argument("--thresholding", action="store_true", help="train on thresholded stores")

    s = sub.add_parser("presort", parents=[common], help="relabel segments with a binary model")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True, help="binary checkpoint")
    s.add_argument("--tau", type=float, help="p(background) needed to flip a segment")
    s.add_argument("--ground-truth", help="event interval sidecar for precision statistics")

    s = sub.add_parser("train-multiclass", parents=[common], help="train the K-way model")
    s.add_argument("--data", required=True)
    s.add_argument("--init", help="binary checkpoint to warm-start the body from")

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on stored splits")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--split", action="append", choices=list(SPLITS))

    s = sub.add_parser("run", parents=[common], help="one experiment arm end to end")
    s.add_argument("--manifest", required=True, help="manifest CSV or corpus directory")
    s.add_argument("--regime", choices=list(REGIMES), default="presort")
    s.add_argument("--tau", type=float)
    s.add_argument("--thresholding", action="store_true", help="same as --regime presort+threshold")
    s.add_argument("--ground-truth")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train-binary": cmd_train_binary,
    "presort": cmd_presort,
    "train-multiclass": cmd_train_multiclass,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def main(argv=None) -> int:
    level = os.environ.get("PRESORT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        parser.print_usage(sys.stderr)
        print(f"presort {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, WavError, TrainingDiverged, ValueError, OSError, KeyError) as exc:
        print(f"presort {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
