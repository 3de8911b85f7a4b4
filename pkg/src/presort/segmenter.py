"""Fixed-length segmentation of MEL spectrograms and the on-disk segment store."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .spectro import DB_FLOOR, MelSpectrogram

STORE_MAGIC = b"PSEG"
STORE_VERSION = 1
INDEX_FIELDS = ["clip_id", "segment_index", "label", "start_s", "padded_frames"]


@dataclass
class MelSegment:
    values: np.ndarray  # [n_mels, frames_per_segment], dB
    label: str
    clip_id: str
    segment_index: int
    start_s: float
    padded_frames: int = 0
    # label before binarization / relabeling, kept for reporting
    source_label: str | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_label(self, label: str) -> "MelSegment":
        return replace(self, label=label,
                       source_label=self.source_label if self.source_label is not None else self.label)

    def with_values(self, values: np.ndarray) -> "MelSegment":
        return replace(self, values=values)


def frames_per_segment(segment_length_s: float, sample_rate: int, hop: int) -> int:
    if segment_length_s <= 0:
        raise ValueError("segment_length_s must be > 0")
    # round before ceil so 0.7*16000/128 = 87.5 stays exact and 0.7*16000/256 doesn't drift
    return int(math.ceil(round(segment_length_s * sample_rate / hop, 9)))


def segment(spec: MelSpectrogram, label: str, segment_length_s: float,
            pad_last: bool = True) -> list[MelSegment]:
    """Cut ``spec`` into non-overlapping windows left to right.

    The trailing partial window is right-padded with the dB floor; with
    ``pad_last=False`` it is dropped instead (unless it is the only one).
    """
    n_frames = spec.values.shape[1]
    if n_frames == 0:
        raise ValueError(f"spectrogram {spec.clip_id!r} has zero frames")
    fps = frames_per_segment(segment_length_s, spec.sample_rate, spec.hop)
    seconds_per_frame = spec.hop / spec.sample_rate
    out = []
    for i, start in enumerate(range(0, n_frames, fps)):
        chunk = spec.values[:, start:start + fps]
        pad = fps - chunk.shape[1]
        if pad and not pad_last and out:
            break
        if pad:
            chunk = np.concatenate(
                [chunk, np.full((chunk.shape[0], pad), DB_FLOOR, dtype=chunk.dtype)], axis=1)
        out.append(MelSegment(np.ascontiguousarray(chunk), label, spec.clip_id, i,
                              start * seconds_per_frame, pad))
    return out


def reassemble(segments: Sequence[MelSegment]) -> np.ndarray:
    """Concatenate the unpadded frames of one clip's segments in order."""
    segs = sorted(segments, key=lambda s: s.segment_index)
    return np.concatenate([s.values[:, : s.values.shape[1] - s.padded_frames] for s in segs], axis=1)


def segment_span(seg: MelSegment, hop: int, sample_rate: int) -> tuple[float, float]:
    """Time extent (s) of the unpadded frames of ``seg``."""
    n = seg.values.shape[1] - seg.padded_frames
    return seg.start_s, seg.start_s + n * hop / sample_rate


# ---------------------------------------------------------------------------
# segment store: <name>.seg (header + float32 matrices) and <name>.csv (index)

def save_store(segments: Sequence[MelSegment], path) -> None:
    path = Path(path)
    if path.suffix != ".seg":
        path = path.with_suffix(".seg")
    shape = segments[0].values.shape if segments else (0, 0)
    with path.open("wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<IIII", STORE_VERSION, len(segments), shape[0], shape[1]))
        for s in segments:
            if s.values.shape != shape:
                raise ValueError(f"segment {s.clip_id}#{s.segment_index} has shape {s.values.shape}, "
                                 f"store expects {shape}")
            fh.write(np.ascontiguousarray(s.values, dtype="<f4").tobytes())
    with path.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_FIELDS)
        for s in segments:
            w.writerow([s.clip_id, s.segment_index, s.label, f"{s.start_s:.6f}", s.padded_frames])


def load_store(path) -> list[MelSegment]:
    path = Path(path)
    if path.suffix != ".seg":
        path = path.with_suffix(".seg")
    raw = path.read_bytes()
    if raw[:4] != STORE_MAGIC:
        raise ValueError(f"{path}: not a segment store")
    version, n, n_mels, frames = struct.unpack_from("<IIII", raw, 4)
    if version != STORE_VERSION:
        raise ValueError(f"{path}: unsupported store version {version}")
    data = np.frombuffer(raw, dtype="<f4", offset=20, count=n * n_mels * frames)
    data = data.reshape(n, n_mels, frames).astype(np.float32)
    with path.with_suffix(".csv").open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != n:
        raise ValueError(f"{path}: index has {len(rows)} rows, store has {n} segments")
    return [MelSegment(data[i], r["label"], r["clip_id"], int(r["segment_index"]),
                       float(r["start_s"]), int(r["padded_frames"]))
            for i, r in enumerate(rows)]
