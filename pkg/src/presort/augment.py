"""Spectrogram augmentation and class-balanced sampling."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .segmenter import MelSegment
from .spectro import DB_FLOOR

_FLOOR_POWER = 10.0 ** (DB_FLOOR / 10.0)


@dataclass
class AugmentConfig:
    probability: float = 0.5
    loudness: float = 0.3
    shift: float = 0.3
    noise: float = 0.3
    mask: int = 5
    pitch_bins: int = 3
    seed: int = 0

    def validate(self) -> None:
        for name in ("probability", "loudness", "shift", "noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"augment.{name} must be in [0, 1], got {v}")
        if self.mask < 0 or self.pitch_bins < 0:
            raise ValueError("augment.mask and augment.pitch_bins must be >= 0")


def rng_stream(*key: int) -> np.random.Generator:
    """Independent generator per (seed, epoch, position, ...) key."""
    return np.random.default_rng([int(k) for k in key])


def _to_db(power: np.ndarray) -> np.ndarray:
    return np.clip(10.0 * np.log10(np.maximum(power, _FLOOR_POWER)), DB_FLOOR, 0.0)


def loudness(values: np.ndarray, amount: float, rng) -> np.ndarray:
    gain = rng.uniform(1.0 - amount, 1.0 + amount)
    out = values.astype(np.float64)
    live = out > DB_FLOOR
    out[live] = np.clip(out[live] + 10.0 * np.log10(max(gain, 1e-12)), DB_FLOOR, 0.0)
    return out


def noise(values: np.ndarray, amount: float, rng) -> np.ndarray:
    power = 10.0 ** (values.astype(np.float64) / 10.0)
    sigma = amount * power.std()
    return _to_db(power + rng.normal(0.0, sigma, size=power.shape)) if sigma > 0 else values


def _translate(values: np.ndarray, k: int, axis: int) -> np.ndarray:
    if k == 0:
        return values
    out = np.full_like(values, DB_FLOOR)
    n = values.shape[axis]
    if abs(k) >= n:
        return out
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    if k > 0:
        src[axis], dst[axis] = slice(0, n - k), slice(k, n)
    else:
        src[axis], dst[axis] = slice(-k, n), slice(0, n + k)
    out[tuple(dst)] = values[tuple(src)]
    return out


def shift(values: np.ndarray, amount: float, rng) -> np.ndarray:
    span = int(round(amount * values.shape[1]))
    return _translate(values, int(rng.integers(-span, span + 1)), axis=1)


def pitch(values: np.ndarray, bins: int, rng) -> np.ndarray:
    return _translate(values, int(rng.integers(-bins, bins + 1)), axis=0)


def mask_run(values: np.ndarray, width: int, axis: int, rng) -> np.ndarray:
    n = values.shape[axis]
    width = min(width, n)
    if width <= 0:
        return values
    start = int(rng.integers(0, n - width + 1))
    out = values.copy()
    if axis == 0:
        out[start:start + width, :] = DB_FLOOR
    else:
        out[:, start:start + width] = DB_FLOOR
    return out


def augment(seg: MelSegment, cfg: AugmentConfig, rng) -> MelSegment:
    """Apply each augmentation independently with probability ``cfg.probability``.

    Order: loudness, shift, pitch, noise, frequency mask, time mask. Returns a
    new segment; ``seg`` is left untouched.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    p = cfg.probability
    x = seg.values
    if p <= 0:
        return seg.with_values(x.copy())
    if rng.random() < p:
        x = loudness(x, cfg.loudness, rng)
    if rng.random() < p:
        x = shift(x, cfg.shift, rng)
    if rng.random() < p:
        x = pitch(x, cfg.pitch_bins, rng)
    if rng.random() < p:
        x = noise(x, cfg.noise, rng)
    if rng.random() < p:
        x = mask_run(x, cfg.mask, 0, rng)
    if rng.random() < p:
        x = mask_run(x, cfg.mask, 1, rng)
    return seg.with_values(np.array(x, dtype=seg.values.dtype))


def class_weights(labels: Sequence) -> dict:
    """``weight(c) = total / (num_classes * count(c))``."""
    if len(labels) == 0:
        raise ValueError("class_weights needs at least one label")
    counts = Counter(labels)
    total, k = len(labels), len(counts)
    return {c: total / (k * n) for c, n in counts.items()}


def sample_weights(labels: Sequence) -> np.ndarray:
    cw = class_weights(labels)
    return np.array([cw[lab] for lab in labels], dtype=np.float64)


def weighted_sample(weights, n: int, rng) -> np.ndarray:
    """``n`` i.i.d. indices drawn with replacement, probability proportional to weight."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0 or np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be non-empty, finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all-zero weights")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.choice(w.size, size=int(n), replace=True, p=w / total)
