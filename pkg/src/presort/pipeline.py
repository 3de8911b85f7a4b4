"""Binary pretraining, presorting (relabeling) and multiclass training."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .augment import augment, rng_stream, sample_weights, weighted_sample
from .config import RunConfig
from .corpus import SPLITS, ClipRecord, EventInterval, Manifest, decode_wav, split
from .labels import BACKGROUND, PRIMATE, LabelSpace
from .net import (BINARY, MULTICLASS, Adam, Network, bce_logit_grad, bce_loss,
                  focal_logit_grad, focal_loss, lr_schedule)
from .segmenter import MelSegment, segment, segment_span
from .spectro import mel_spectrogram_db
from .threshold import threshold_all

log = logging.getLogger(__name__)

REGIMES = ("baseline", "presort", "presort+threshold")
RELABEL_FIELDS = ["clip_id", "segment_index", "old_label", "new_label", "background_probability"]
STAGE_BINARY, STAGE_MULTICLASS = 1, 2


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class RelabelRecord:
    clip_id: str
    segment_index: int
    old_label: str
    new_label: str
    background_probability: float


@dataclass
class TrainResult:
    model: Network
    history: list[dict]
    best_epoch: int
    best_score: float


# ---------------------------------------------------------------------------
# preprocessing

def preprocess_clip(record: ClipRecord, cfg: RunConfig) -> list[MelSegment]:
    clip = decode_wav(record.path, cfg.spectro.sample_rate)
    clip.clip_id, clip.label = record.clip_id, record.label
    spec = mel_spectrogram_db(clip, cfg)
    return segment(spec, record.label, cfg.segment.length_s, cfg.segment.pad_last)


def _preprocess_many(args):
    records, cfg = args
    return [preprocess_clip(r, cfg) for r in records]


def preprocess(records: Sequence[ClipRecord], cfg: RunConfig, workers: int = 1) -> list[MelSegment]:
    """Segments for ``records`` in record order; output does not depend on ``workers``."""
    records = list(records)
    if workers <= 1 or len(records) < 2 * workers:
        nested = [preprocess_clip(r, cfg) for r in records]
    else:
        size = -(-len(records) // (workers * 4))
        chunks = [(records[i:i + size], cfg) for i in range(0, len(records), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = [segs for chunk in pool.map(_preprocess_many, chunks) for segs in chunk]
    return [s for segs in nested for s in segs]


def preprocess_splits(manifest: Manifest, cfg: RunConfig, workers: int = 1) -> dict[str, list[MelSegment]]:
    if not manifest.split_assignment:
        manifest = split(manifest, cfg.train.split_ratio, cfg.seed)
    return {name: preprocess(manifest.in_split(name), cfg, workers) for name in SPLITS}


def check_geometry(segments: Sequence[MelSegment], shape: tuple[int, int]) -> None:
    bad = [s for s in segments if tuple(s.values.shape) != tuple(shape)]
    if bad:
        s = bad[0]
        raise ValueError(f"segment geometry {tuple(s.values.shape)} ({s.clip_id}#{s.segment_index}) "
                         f"does not match model input {tuple(shape)}")


# ---------------------------------------------------------------------------
# labels

def binarize_labels(segments: Sequence[MelSegment], label_space: LabelSpace | None = None) -> list[MelSegment]:
    """background -> background, every other class -> primate; the old label is kept in ``source_label``."""
    if label_space is not None and not label_space.has_background:
        raise ValueError(f"label space {list(label_space)} has no {BACKGROUND!r} class")
    if label_space is None and segments and not any(s.label == BACKGROUND for s in segments):
        log.warning("binarizing segments without any background examples")
    return [s.with_label(BACKGROUND if s.label == BACKGROUND else PRIMATE) for s in segments]


def restore_labels(segments: Sequence[MelSegment]) -> list[MelSegment]:
    return [dataclasses.replace(s, label=s.source_label, source_label=None)
            if s.source_label is not None else s for s in segments]


def oracle_labels(segments: Sequence[MelSegment], truth: dict[str, EventInterval],
                  hop: int, sample_rate: int) -> list[str]:
    """Clip label if the segment overlaps the generator's event interval, else background."""
    out = []
    for s in segments:
        lab = s.source_label or s.label
        iv = truth.get(s.clip_id)
        if lab == BACKGROUND or iv is None or not iv.overlaps(*segment_span(s, hop, sample_rate)):
            out.append(BACKGROUND)
        else:
            out.append(lab)
    return out


# ---------------------------------------------------------------------------
# training

def stack(segments: Sequence[MelSegment], dtype=np.float32) -> np.ndarray:
    return np.stack([s.values for s in segments]).astype(dtype, copy=False)[:, None]


def predict(model: Network, segments: Sequence[MelSegment], batch_size: int = 256) -> np.ndarray:
    outs = [model.forward(stack(segments[i:i + batch_size], model.dtype))
            for i in range(0, len(segments), batch_size)]
    if not outs:
        return np.zeros((0,) if model.cfg.head == BINARY else (0, model.cfg.n_classes))
    return np.concatenate(outs, axis=0)


def _selection_uar(cm: metrics.ConfusionMatrix) -> float:
    # model selection tolerates classes absent from the validation split
    support = cm.counts.sum(axis=1)
    present = support > 0
    if not present.any():
        return 0.0
    return float(np.mean(np.diag(cm.counts)[present] / support[present]))


def _train(net: Network, train: Sequence[MelSegment], targets: np.ndarray,
           evaluate: Callable[[Network], dict], score_key: str, epochs: int, cfg: RunConfig,
           stage: int, use_augment: bool) -> TrainResult:
    tc, oc = cfg.train, cfg.optim
    opt = Adam(oc.learning_rate, oc.beta1, oc.beta2, oc.eps)
    weights = sample_weights(targets.tolist()) if tc.weighted_sampling else None
    history, best_state, best_score, best_epoch = [], None, -np.inf, -1
    n = len(train)
    for epoch in range(epochs):
        opt.learning_rate = lr_schedule(epoch, oc.learning_rate, oc.step_size, oc.decay)
        order_rng = rng_stream(cfg.seed, stage, epoch)
        order = weighted_sample(weights, n, order_rng) if weights is not None else order_rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            segs = [train[i] for i in idx]
            if use_augment:
                segs = [augment(s, cfg.augment, rng_stream(cfg.seed, stage, epoch, start + j, cfg.augment.seed))
                        for j, s in enumerate(segs)]
            x = stack(segs, net.dtype)
            y = targets[idx]
            z = net.logits(x, train=True, rng=rng_stream(cfg.seed, stage, epoch, 1_000_000 + b))
            p = net.activate(z)
            if net.cfg.head == BINARY:
                loss, dz = bce_loss(p, y), bce_logit_grad(p, y)[:, None]
            else:
                loss, dz = focal_loss(p, y, oc.focal_gamma), focal_logit_grad(p, y, oc.focal_gamma)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch} batch {b} (seed={cfg.seed}); "
                    f"config: {json.dumps(cfg.to_dict(), sort_keys=True)}")
            net.backward(dz)
            try:
                opt.step(net.params, net.grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"{exc} (seed={cfg.seed}); config: "
                                       f"{json.dumps(cfg.to_dict(), sort_keys=True)}") from None
            losses.append(loss)
        val = evaluate(net)
        row = {"epoch": epoch, "lr": opt.learning_rate, "train_loss": float(np.mean(losses)), **val}
        history.append(row)
        log.info("stage %d epoch %d loss %.4f %s %.4f", stage, epoch, row["train_loss"],
                 score_key, val[score_key])
        if val[score_key] > best_score:
            best_score, best_epoch, best_state = val[score_key], epoch, net.state_dict()
    if best_state is not None:
        net.load_state_dict(best_state)
    return TrainResult(net, history, best_epoch, float(best_score))


def _binary_targets(segments: Sequence[MelSegment]) -> np.ndarray:
    return np.array([0 if s.label == BACKGROUND else 1 for s in segments], dtype=np.int64)


def evaluate_binary(model: Network, segments: Sequence[MelSegment]) -> dict:
    p = predict(model, segments)
    pred = (p >= 0.5).astype(np.int64)
    cm = metrics.confusion_from_indices(_binary_targets(segments), pred, LabelSpace.binary())
    out = metrics.summary(cm)
    out["confusion"] = cm.to_dict()
    return out


def train_binary(train: Sequence[MelSegment], val: Sequence[MelSegment], cfg: RunConfig,
                 epochs: int | None = None) -> TrainResult:
    """Background-vs-primate net without batchnorm/dropout; best epoch by validation F1."""
    shape = cfg.input_shape
    check_geometry(train, shape)
    check_geometry(val, shape)
    net_cfg = dataclasses.replace(cfg.net, head=BINARY, n_classes=2, use_batchnorm=False,
                                  use_dropout=False, input_shape=shape)
    net = Network(net_cfg, seed=cfg.seed * 1000 + STAGE_BINARY)
    targets = _binary_targets(train)

    def evaluate(m):
        s = evaluate_binary(m, val)
        return {"val_f1": s["f1"], "val_accuracy": s["accuracy"], "val_uar": s["uar"]}

    epochs = cfg.train.epochs_binary if epochs is None else epochs
    return _train(net, train, targets, evaluate, "val_f1", epochs, cfg, STAGE_BINARY,
                  cfg.train.augment_binary)


def evaluate_multiclass(model: Network, segments: Sequence[MelSegment], space: LabelSpace,
                        labels: Sequence[str] | None = None) -> tuple[dict, np.ndarray]:
    q = predict(model, segments)
    pred = q.argmax(axis=1) if len(q) else np.zeros(0, dtype=np.int64)
    truth = space.indices(labels if labels is not None else [s.label for s in segments])
    cm = metrics.confusion_from_indices(truth, pred, space)
    out = metrics.summary(cm) if cm.total else {"accuracy": None, "uar": None, "n": 0}
    out["confusion"] = cm.to_dict()
    return out, pred


def train_multiclass(train: Sequence[MelSegment], val: Sequence[MelSegment], space: LabelSpace,
                     cfg: RunConfig, init: Network | None = None,
                     epochs: int | None = None) -> TrainResult:
    """Focal-loss K-way training; best epoch by validation UAR.

    With ``init`` the body is copied from that network and the head is
    replaced by a fresh K-way one.
    """
    shape = cfg.input_shape
    check_geometry(train, shape)
    check_geometry(val, shape)
    seed = cfg.seed * 1000 + STAGE_MULTICLASS
    if init is not None:
        if tuple(init.cfg.input_shape) != tuple(shape):
            raise ValueError(f"pretrained model input {init.cfg.input_shape} != segment geometry {shape}")
        net = init.with_head(MULTICLASS, len(space), seed=seed,
                             use_batchnorm=cfg.net.use_batchnorm, use_dropout=cfg.net.use_dropout,
                             dropout=cfg.net.dropout)
    else:
        net_cfg = dataclasses.replace(cfg.net, head=MULTICLASS, n_classes=len(space), input_shape=shape)
        net = Network(net_cfg, seed=seed)
    targets = np.array(space.indices([s.label for s in train]), dtype=np.int64)
    val_truth = np.array(space.indices([s.label for s in val]), dtype=np.int64)

    def evaluate(m):
        q = predict(m, val)
        cm = metrics.confusion_from_indices(val_truth, q.argmax(axis=1), space)
        return {"val_accuracy": metrics.accuracy(cm) if cm.total else 0.0,
                "val_uar": _selection_uar(cm)}

    epochs = cfg.train.epochs_multiclass if epochs is None else epochs
    return _train(net, train, targets, evaluate, "val_uar", epochs, cfg, STAGE_MULTICLASS,
                  cfg.train.augment_multiclass)


# ---------------------------------------------------------------------------
# presorting

def background_probability(models, segments: Sequence[MelSegment]) -> np.ndarray:
    """``[n_models, n_segments]`` array of p(background)."""
    models = models if isinstance(models, (list, tuple)) else [models]
    rows = []
    for m in models:
        if m.cfg.head != BINARY:
            raise ValueError("presort needs binary-head models")
        check_geometry(segments, m.cfg.input_shape)
        rows.append(1.0 - predict(m, segments).astype(np.float64))
    return np.stack(rows) if rows else np.zeros((0, len(segments)))


def presort(binary_model, segments: Sequence[MelSegment], tau: float = 0.5,
            inputs: Sequence[MelSegment] | None = None,
            p_background: np.ndarray | None = None) -> tuple[list[MelSegment], list[RelabelRecord]]:
    """Relabel primate segments the binary model confidently calls background.

    ``binary_model`` may be a list of models; a segment is then flipped only
    when a strict majority has ``p(background) >= tau``. ``inputs`` are the
    arrays the model sees (e.g. thresholded copies) and default to
    ``segments``. Background segments are never touched.
    """
    inputs = segments if inputs is None else inputs
    if len(inputs) != len(segments):
        raise ValueError("inputs and segments differ in length")
    if p_background is None:
        p_background = background_probability(binary_model, inputs)
    p_background = np.atleast_2d(p_background)
    votes = (p_background >= tau).sum(axis=0)
    need = p_background.shape[0] // 2 + 1
    mean_p = p_background.mean(axis=0)
    out, records = [], []
    for s, v, p in zip(segments, votes, mean_p):
        if s.label != BACKGROUND and v >= need:
            records.append(RelabelRecord(s.clip_id, s.segment_index, s.label, BACKGROUND, float(p)))
            out.append(s.with_label(BACKGROUND))
        else:
            out.append(s)
    return out, records


def write_relabels(records: Sequence[RelabelRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RELABEL_FIELDS)
        for r in records:
            w.writerow([r.clip_id, r.segment_index, r.old_label, r.new_label,
                        f"{r.background_probability:.6f}"])


def relabel_statistics(segments: Sequence[MelSegment], records: Sequence[RelabelRecord],
                       truth: dict[str, EventInterval] | None = None,
                       hop: int = 128, sample_rate: int = 16000) -> dict:
    totals = Counter(s.label for s in segments if s.label != BACKGROUND)
    flipped = Counter(r.old_label for r in records)
    stats = {
        "flipped": len(records),
        "primate_segments": int(sum(totals.values())),
        "per_class": {c: {"flipped": flipped.get(c, 0), "total": totals[c],
                          "fraction": flipped.get(c, 0) / totals[c]} for c in sorted(totals)},
    }
    if truth is not None:
        lookup = {(s.clip_id, s.segment_index): s for s in segments}
        clean = 0
        for r in records:
            s = lookup[(r.clip_id, r.segment_index)]
            iv = truth.get(r.clip_id)
            if iv is None or not iv.overlaps(*segment_span(s, hop, sample_rate)):
                clean += 1
        stats["flips_without_event"] = clean
        stats["precision"] = clean / len(records) if records else None
    return stats


# ---------------------------------------------------------------------------
# experiment

def clip_vote(segments: Sequence[MelSegment], pred: np.ndarray, space: LabelSpace) -> tuple[list[str], list[str]]:
    """Clip-level labels: majority over non-background segment predictions, background if none."""
    bg = space.index(BACKGROUND) if space.has_background else -1
    by_clip: dict[str, list[int]] = defaultdict(list)
    clip_label: dict[str, str] = {}
    for s, p in zip(segments, pred):
        by_clip[s.clip_id].append(int(p))
        clip_label[s.clip_id] = s.source_label or s.label
    truth, guess = [], []
    for cid in sorted(by_clip):
        votes = Counter(p for p in by_clip[cid] if p != bg)
        if votes:
            top = max(votes.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        else:
            top = bg if bg >= 0 else Counter(by_clip[cid]).most_common(1)[0][0]
        truth.append(clip_label[cid])
        guess.append(space.names[top])
    return truth, guess


@dataclass
class ExperimentReport:
    data: dict
    relabels: list[RelabelRecord] = field(default_factory=list)
    binary_model: Network | None = None
    model: Network | None = None

    def json_text(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True, allow_nan=False, default=_jsonable)

    def comparable(self) -> dict:
        """Report contents without wall-clock fields."""
        return {k: v for k, v in json.loads(self.json_text()).items() if k != "timing"}

    def write(self, out_dir) -> Path:
        from .net import save_checkpoint

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.json_text() + "\n", encoding="utf-8")
        labels = self.data["label_space"]
        test = self.data["multiclass"]["test"]
        metrics.write_matrix_csv(out / "confusion_test.csv", test["confusion"]["counts"], labels, labels)
        metrics.write_heatmap(out / "confusion_test.pgm", np.array(test["confusion"]["counts"]))
        binary = self.data.get("binary")
        if binary and binary.get("mismatch_test"):
            mm = binary["mismatch_test"]
            metrics.write_matrix_csv(out / "mismatch_test.csv", mm["counts"], mm["labels"], mm["columns"])
            metrics.write_heatmap(out / "mismatch_test.pgm", np.array(mm["counts"]))
        if self.data.get("relabel") is not None:
            write_relabels(self.relabels, out / "relabels.csv")
        if self.model is not None:
            save_checkpoint(self.model, out / "multiclass.ckpt", {"regime": self.data["regime"]})
        if self.binary_model is not None:
            save_checkpoint(self.binary_model, out / "binary.ckpt", {"regime": self.data["regime"]})
        return out / "report.json"


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _clean(d):
    # NaN -> None so reports stay strict JSON
    if isinstance(d, dict):
        return {k: _clean(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_clean(v) for v in d]
    if isinstance(d, float) and not np.isfinite(d):
        return None
    return d


def run_experiment(regime: str, cfg: RunConfig, manifest: Manifest,
                   ground_truth: dict[str, EventInterval] | None = None,
                   splits: dict[str, list[MelSegment]] | None = None,
                   workers: int = 1) -> ExperimentReport:
    """Run one arm end to end: ``baseline``, ``presort`` or ``presort+threshold``."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; choose from {REGIMES}")
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    space = manifest.label_space
    if not space.has_background:
        raise ValueError("experiments need a 'background' class")
    if splits is None:
        splits = preprocess_splits(manifest, cfg, workers)
    sp = cfg.spectro
    data: dict = {
        "regime": regime,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "label_space": list(space),
        "segments": {k: len(v) for k, v in splits.items()},
        "binary": None,
        "relabel": None,
    }
    relabels: list[RelabelRecord] = []
    binary_model = None
    current = {k: list(v) for k, v in splits.items()}

    if regime != "baseline":
        thresholding = regime == "presort+threshold"
        seen = {k: (threshold_all(v, cfg.threshold, sp.sample_rate, sp.hop) if thresholding else v)
                for k, v in splits.items()}
        bin_in = {k: binarize_labels(v, space) for k, v in seen.items()}
        result = train_binary(bin_in["train"], bin_in["val"], cfg)
        binary_model = result.model
        bin_val = evaluate_binary(binary_model, bin_in["val"])
        bin_test = evaluate_binary(binary_model, bin_in["test"])
        p_bg = {k: background_probability(binary_model, v) for k, v in seen.items()}
        mismatch = {k: metrics.mismatch([s.label for s in splits[k]],
                                        (p_bg[k][0] < 0.5).astype(int).tolist(), space).to_dict()
                    for k in ("val", "test")}
        data["binary"] = {
            "thresholding": thresholding,
            "best_epoch": result.best_epoch,
            "history": result.history,
            "val": bin_val,
            "test": bin_test,
            "mismatch_val": mismatch["val"],
            "mismatch_test": mismatch["test"],
        }
        per_split = {}
        for k in SPLITS:
            current[k], recs = presort(binary_model, splits[k], cfg.train.relabel_threshold,
                                       p_background=p_bg[k])
            relabels.extend(recs)
            per_split[k] = relabel_statistics(splits[k], recs, ground_truth, sp.hop, sp.sample_rate)
        everything = [s for k in SPLITS for s in splits[k]]
        data["relabel"] = {
            "tau": cfg.train.relabel_threshold,
            **relabel_statistics(everything, relabels, ground_truth, sp.hop, sp.sample_rate),
            "per_split": per_split,
        }

    init = binary_model if (binary_model is not None and cfg.train.warm_start) else None
    result = train_multiclass(current["train"], current["val"], space, cfg, init=init)
    model = result.model
    val_summary, _ = evaluate_multiclass(model, current["val"], space)
    test_summary, test_pred = evaluate_multiclass(model, current["test"], space)
    clip_truth, clip_guess = clip_vote(current["test"], test_pred, space)
    clip_cm = metrics.confusion(clip_truth, clip_guess, space)
    mc = {
        "warm_start": init is not None,
        "best_epoch": result.best_epoch,
        "history": result.history,
        "val": val_summary,
        "test": test_summary,
        "test_clip": {**metrics.summary(clip_cm), "confusion": clip_cm.to_dict()},
    }
    if ground_truth is not None:
        oracle = oracle_labels(splits["test"], ground_truth, sp.hop, sp.sample_rate)
        oracle_summary, _ = evaluate_multiclass(model, current["test"], space, labels=oracle)
        mc["test_oracle"] = oracle_summary
    data["multiclass"] = mc
    data["timing"] = {"started": started, "wall_clock_s": time.perf_counter() - t0}
    return ExperimentReport(_clean(data), relabels, binary_model, model)
