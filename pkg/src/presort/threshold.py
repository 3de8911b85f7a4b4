"""Local adaptive thresholding of segments (binary stage only)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .segmenter import MelSegment
from .spectro import DB_FLOOR, db_to_power


class SingleWindowWarning(UserWarning):
    """The thresholding window covers the whole segment; nothing was changed."""


@dataclass
class ThresholdConfig:
    window_s: float = 0.4
    threshold: float = 0.3


def window_frames(window_s: float, sample_rate: int, hop: int) -> int:
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    return max(1, int(round(window_s * sample_rate / hop)))


def window_energies(values: np.ndarray, width: int) -> np.ndarray:
    """Linear-power energy summed over all bins of each ``width``-frame window."""
    power = db_to_power(values)
    n = values.shape[1]
    return np.array([power[:, s:s + width].sum() for s in range(0, n, width)])


def blackened_windows(energies: Sequence[float], threshold: float) -> np.ndarray:
    """Boolean mask of windows whose max-normalized energy is below ``threshold``."""
    e = np.asarray(energies, dtype=np.float64)
    top = e.max() if e.size else 0.0
    if top <= 0:
        return np.zeros(e.shape, dtype=bool)
    return e / top < threshold


def threshold_mask(values: np.ndarray, width: int, threshold: float) -> np.ndarray:
    """Per-frame boolean mask of frames to blacken."""
    n = values.shape[1]
    frames = np.zeros(n, dtype=bool)
    if np.all(values <= DB_FLOOR):
        return frames
    for w, dark in enumerate(blackened_windows(window_energies(values, width), threshold)):
        if dark:
            frames[w * width:(w + 1) * width] = True
    return frames


def apply_threshold(seg: MelSegment, window_s: float, threshold: float,
                    sample_rate: int = 16000, hop: int = 128) -> MelSegment:
    """Set every frame of a low-energy window to the dB floor.

    Window energies are normalized by the loudest window of the segment. A
    segment that fits in one window is returned unchanged with a
    :class:`SingleWindowWarning`.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    width = window_frames(window_s, sample_rate, hop)
    n = seg.values.shape[1]
    if width >= n:
        if threshold > 0:
            warnings.warn(f"window of {width} frames covers segment of {n} frames; unchanged",
                          SingleWindowWarning, stacklevel=2)
        return seg
    mask = threshold_mask(seg.values, width, threshold)
    if not mask.any():
        return seg
    out = seg.values.copy()
    out[:, mask] = DB_FLOOR
    return seg.with_values(out)


def threshold_all(segments: Iterable[MelSegment], cfg: ThresholdConfig, sample_rate: int,
                  hop: int) -> list[MelSegment]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleWindowWarning)
        return [apply_threshold(s, cfg.window_s, cfg.threshold, sample_rate, hop) for s in segments]


def sweep_report(segments: Sequence[MelSegment], window_options: Sequence[float],
                 thresholds: Sequence[float], sample_rate: int = 16000,
                 hop: int = 128) -> list[dict]:
    """Mean fraction of frames blackened, per class, for each (window, threshold) pair."""
    if not segments or not window_options or not thresholds:
        raise ValueError("segments, window_options and thresholds must be non-empty")
    classes = sorted({s.label for s in segments})
    rows = []
    for window_s in window_options:
        width = window_frames(window_s, sample_rate, hop)
        for thr in sorted(thresholds):
            per_class = {c: [] for c in classes}
            for s in segments:
                n = s.values.shape[1]
                frac = 0.0 if width >= n else threshold_mask(s.values, width, thr).mean()
                per_class[s.label].append(frac)
            rows.append({
                "window_s": float(window_s),
                "threshold": float(thr),
                "blackened": {c: float(np.mean(v)) for c, v in per_class.items()},
            })
    return rows
