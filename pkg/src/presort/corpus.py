"""Manifests, WAV I/O, clip-level splitting and the synthetic weak-label corpus."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from scipy.io import wavfile

from .labels import BACKGROUND, LabelSpace, canonical_label

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_FIELDS = ["clip_id", "path", "label", "duration_s", "split"]
GROUND_TRUTH_FIELDS = ["clip_id", "event_start_s", "event_end_s"]


class ManifestError(ValueError):
    pass


class WavError(ValueError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    path: Path
    label: str
    duration_s: float

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ManifestError(f"clip {self.clip_id}: duration_s must be > 0, got {self.duration_s}")


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""
    label: str = ""

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Manifest:
    records: tuple[ClipRecord, ...]
    label_space: LabelSpace
    split_assignment: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.clip_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate clip_id(s): {dup[:5]}")
        for r in self.records:
            if r.label not in self.label_space:
                raise ManifestError(f"clip {r.clip_id}: unknown label {r.label!r}")
        object.__setattr__(self, "split_assignment", MappingProxyType(dict(self.split_assignment)))

    def __len__(self) -> int:
        return len(self.records)

    def in_split(self, name: str) -> list[ClipRecord]:
        return [r for r in self.records if self.split_assignment.get(r.clip_id) == name]

    def by_id(self) -> dict[str, ClipRecord]:
        return {r.clip_id: r for r in self.records}

    def class_counts(self) -> dict[str, int]:
        counts = {n: 0 for n in self.label_space}
        for r in self.records:
            counts[r.label] += 1
        return counts


def load_manifest(path, labels: Sequence[str] | None = None) -> Manifest:
    """Read a manifest CSV. Relative audio paths resolve against the manifest's folder.

    When ``labels`` is given, every row must use one of them (after
    canonicalisation); otherwise the label space is inferred from the file.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    allowed = None if labels is None else LabelSpace(tuple(canonical_label(x) for x in labels))
    records, splits = [], {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_FIELDS[:4] if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}: header missing column(s) {missing}")
        for row in reader:
            line = reader.line_num
            try:
                clip_id = row["clip_id"].strip()
                if not clip_id:
                    raise ValueError("empty clip_id")
                label = canonical_label(row["label"])
                duration = float(row["duration_s"])
                audio = Path(row["path"].strip())
                if not audio.is_absolute():
                    audio = path.parent / audio
                rec = ClipRecord(clip_id, audio, label, duration)
            except (ValueError, TypeError, AttributeError) as exc:
                raise ManifestError(f"{path}:{line}: malformed row ({exc})") from None
            if allowed is not None and label not in allowed:
                raise ManifestError(f"{path}:{line}: unknown label {row['label']!r}")
            records.append(rec)
            split_name = (row.get("split") or "").strip()
            if split_name:
                if split_name not in SPLITS:
                    raise ManifestError(f"{path}:{line}: unknown split {split_name!r}")
                splits[clip_id] = split_name
    if not records:
        raise ManifestError("empty manifest")
    space = allowed or LabelSpace.from_labels(r.label for r in records)
    return Manifest(tuple(records), space, splits)


def write_manifest(manifest: Manifest, path, relative_to=None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in manifest.records:
            try:
                p = r.path.relative_to(base)
            except ValueError:
                p = r.path
            w.writerow([r.clip_id, p.as_posix(), r.label, f"{r.duration_s:.6f}",
                        manifest.split_assignment.get(r.clip_id, "")])


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return samples
    n_out = max(1, int(round(len(samples) * dst_rate / src_rate)))
    t = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t, np.arange(len(samples)), samples)


def decode_wav(path, target_rate: int = 16000) -> AudioClip:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise WavError(f"{path}: cannot parse WAV ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise WavError(f"{path}: unsupported encoding {data.dtype} (need PCM16 or float32)")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise WavError(f"{path}: zero-length audio")
    x = resample_linear(x, int(rate), int(target_rate))
    return AudioClip(x, int(target_rate), clip_id=path.stem)


def encode_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono PCM16."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    wavfile.write(Path(path), int(sample_rate), pcm.astype(np.int16))


def _allocate(n: int, ratio: Sequence[float]) -> list[int]:
    # largest-remainder apportionment, then make sure no split is left empty
    total = float(sum(ratio))
    quotas = [n * r / total for r in ratio]
    alloc = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: n - sum(alloc)]:
        alloc[i] += 1
    for i in range(len(alloc)):
        if alloc[i] == 0:
            j = max(range(len(alloc)), key=lambda k: alloc[k])
            alloc[j] -= 1
            alloc[i] += 1
    return alloc


def split(manifest: Manifest, ratio=(3, 1, 1), seed: int = 0) -> Manifest:
    """Stratified clip-level split into train/val/test."""
    if len(ratio) != len(SPLITS) or any(r <= 0 for r in ratio):
        raise ValueError(f"ratio needs {len(SPLITS)} positive components, got {ratio}")
    rng = np.random.default_rng(seed)
    assignment = {}
    for name in manifest.label_space:
        ids = sorted(r.clip_id for r in manifest.records if r.label == name)
        if not ids:
            continue
        if len(ids) < len(SPLITS):
            raise ManifestError(f"class {name!r} has {len(ids)} clip(s); need at least {len(SPLITS)} to split")
        perm = [ids[i] for i in rng.permutation(len(ids))]
        start = 0
        for split_name, k in zip(SPLITS, _allocate(len(ids), ratio)):
            for cid in perm[start:start + k]:
                assignment[cid] = split_name
            start += k
    return Manifest(manifest.records, manifest.label_space, assignment)


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass
class SyntheticSpec:
    classes: tuple[str, ...] = (BACKGROUND, "chimpanzee", "mandrill", "guenon", "redcap")
    counts: tuple[int, ...] = (750, 375, 150, 112, 113)
    duration_range: tuple[float, float] = (0.145, 3.0)
    event_range: tuple[float, float] = (0.2, 0.6)
    snr_range: tuple[float, float] = (0.0, 12.0)
    sample_rate: int = 16000

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("synthetic corpus needs K >= 2 classes")
        if len(self.counts) != len(self.classes):
            raise ValueError("counts must have one entry per class")
        if any(int(c) <= 0 for c in self.counts):
            raise ValueError(f"nonpositive clip count in {self.counts}")
        lo, hi = self.duration_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid duration range {self.duration_range}")
        elo, ehi = self.event_range
        if not (0 < elo <= ehi):
            raise ValueError(f"invalid event range {self.event_range}")
        if self.snr_range[0] > self.snr_range[1]:
            raise ValueError(f"invalid SNR range {self.snr_range}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class EventInterval:
    clip_id: str
    start_s: float | None
    end_s: float | None

    @property
    def empty(self) -> bool:
        return self.start_s is None

    def overlaps(self, start: float, end: float) -> bool:
        if self.empty:
            return False
        return self.start_s < end and start < self.end_s


def colored_noise(n: int, rng: np.random.Generator, exponent: float) -> np.ndarray:
    """Gaussian noise with a 1/f**exponent power spectrum, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec *= f ** (-exponent / 2.0)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x


def class_template(class_index: int) -> dict:
    """Fixed harmonic-chirp recipe for event class ``class_index`` (>= 1)."""
    i = class_index - 1
    return {
        "f0": 320.0 * 1.5 ** i,
        "sweep": (1.45, 0.7, 1.2, 0.85, 1.6, 0.6)[i % 6],
        "harmonics": (4, 3, 5, 2, 3, 4)[i % 6],
        "decay": (0.6, 0.8, 0.5, 0.9, 0.7, 0.65)[i % 6],
        "am_hz": (0.0, 12.0, 0.0, 25.0, 6.0, 18.0)[i % 6],
    }


def render_event(class_index: int, n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    tpl = class_template(class_index)
    f0 = tpl["f0"] * rng.uniform(0.9, 1.1)
    t = np.arange(n) / rate
    dur = max(n / rate, 1e-9)
    inst = f0 * tpl["sweep"] ** (t / dur)
    phase = 2 * np.pi * np.cumsum(inst) / rate
    out = np.zeros(n)
    for h in range(1, tpl["harmonics"] + 1):
        if h * inst.max() >= 0.45 * rate:
            break
        out += tpl["decay"] ** (h - 1) * np.sin(h * phase)
    if tpl["am_hz"]:
        out *= 0.6 + 0.4 * np.sin(2 * np.pi * tpl["am_hz"] * t)
    out *= np.hanning(n) if n > 2 else 1.0
    return out


def synthesize_clip(class_index: int, spec: SyntheticSpec, rng: np.random.Generator):
    """Return ``(samples, event_start_s, event_end_s)``; the interval is None for background."""
    rate = spec.sample_rate
    dur = rng.uniform(*spec.duration_range)
    n = max(2, int(round(dur * rate)))
    noise = colored_noise(n, rng, rng.uniform(0.5, 1.5)) * rng.uniform(0.02, 0.08)
    if class_index == 0:
        x, interval = noise, (None, None)
    else:
        ev_len = min(rng.uniform(*spec.event_range), 0.8 * n / rate)
        m = max(2, int(round(ev_len * rate)))
        start = int(rng.integers(0, n - m + 1))
        event = render_event(class_index, m, rate, rng)
        snr = rng.uniform(*spec.snr_range)
        noise_energy = float(np.sum(noise[start:start + m] ** 2))
        gain = np.sqrt(noise_energy * 10 ** (snr / 10) / float(np.sum(event ** 2)))
        x = noise.copy()
        x[start:start + m] += gain * event
        interval = (start / rate, (start + m) / rate)
    peak = np.max(np.abs(x))
    if peak > 0.95:
        x = x * (0.95 / peak)
    return x, interval[0], interval[1]


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir, seed: int = 0) -> Manifest:
    """Write WAVs, ``manifest.csv`` and ``ground_truth.csv`` under ``out_dir``.

    Every clip draws from its own RNG stream keyed by (seed, class, index), so
    output is byte-identical for a fixed seed.
    """
    spec.validate()
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    classes = tuple(canonical_label(c) for c in spec.classes)
    records, truth = [], []
    for k, (name, count) in enumerate(zip(classes, spec.counts)):
        for i in range(int(count)):
            rng = np.random.default_rng([seed, k, i])
            x, s0, s1 = synthesize_clip(k, spec, rng)
            clip_id = f"{name}_{i:05d}"
            path = wav_dir / f"{clip_id}.wav"
            encode_wav(path, x, spec.sample_rate)
            records.append(ClipRecord(clip_id, path, name, len(x) / spec.sample_rate))
            truth.append(EventInterval(clip_id, s0, s1))
    manifest = Manifest(tuple(records), LabelSpace(classes))
    write_manifest(manifest, out_dir / "manifest.csv")
    write_ground_truth(truth, out_dir / "ground_truth.csv")
    log.info("synthesized %d clips into %s", len(records), out_dir)
    return manifest


def write_ground_truth(intervals: Sequence[EventInterval], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROUND_TRUTH_FIELDS)
        for iv in intervals:
            if iv.empty:
                w.writerow([iv.clip_id, "", ""])
            else:
                w.writerow([iv.clip_id, f"{iv.start_s:.6f}", f"{iv.end_s:.6f}"])


def load_ground_truth(path) -> dict[str, EventInterval]:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            s0, s1 = row["event_start_s"].strip(), row["event_end_s"].strip()
            out[row["clip_id"]] = EventInterval(
                row["clip_id"], float(s0) if s0 else None, float(s1) if s1 else None)
    return out
