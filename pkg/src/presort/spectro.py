"""STFT, MEL filterbank, dB scaling and SNR."""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import AudioClip

DB_FLOOR = -80.0
_AMIN = 1e-20


@dataclass
class SpectroConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 128
    n_mels: int = 128


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [n_mels, n_frames], dB
    n_mels: int
    hop: int
    n_fft: int
    sample_rate: int
    clip_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SnrReport:
    snr_db: float
    signal_energy: float
    noise_energy: float


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def mel_points(n_mels: int, sample_rate: int) -> np.ndarray:
    """``n_mels + 2`` edge/center frequencies (Hz), uniform on the mel axis."""
    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mels)


def mel_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    return mel_points(n_mels, sample_rate)[1:-1]


@functools.lru_cache(maxsize=16)
def _filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    pts = mel_points(n_mels, sample_rate)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"n_mels={n_mels} too large for n_fft={n_fft} at {sample_rate} Hz: "
            f"filter(s) {empty[:5].tolist()} have empty support")
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters (peak 1) with centers equally spaced in mel from 0 to Nyquist."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not _is_pow2(n_fft):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    return _filterbank(int(n_mels), int(n_fft), int(sample_rate))


def frame_count(num_samples: int, hop: int) -> int:
    return -(-num_samples // hop)


def stft_power(clip, n_fft: int, hop: int) -> np.ndarray:
    """Hann-windowed, centered power spectrogram ``[(n_fft/2+1), ceil(len/hop)]``."""
    if hop <= 0:
        raise ValueError("hop must be positive")
    if not _is_pow2(n_fft):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    x = np.asarray(clip.samples if isinstance(clip, AudioClip) else clip, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty clip")
    n_frames = frame_count(x.size, hop)
    half = n_fft // 2
    right = max(half, (n_frames - 1) * hop + n_fft - half - x.size)
    if x.size > 1:
        padded = np.pad(x, (half, right), mode="reflect")
    else:
        padded = np.pad(x, (half, right), mode="constant")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    window = np.hanning(n_fft + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def power_to_db(power: np.ndarray, ref: float | None = None, floor: float = DB_FLOOR) -> np.ndarray:
    """``10*log10(x/ref)`` floored; ``ref`` defaults to the matrix max."""
    power = np.asarray(power, dtype=np.float64)
    if ref is None:
        ref = float(power.max()) if power.size else 0.0
    if ref <= 0:
        return np.full(power.shape, floor)
    db = 10.0 * np.log10(np.maximum(power, _AMIN) / ref)
    return np.maximum(db, floor)


def db_to_power(db: np.ndarray) -> np.ndarray:
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


def mel_spectrogram_db(clip: AudioClip, cfg) -> MelSpectrogram:
    cfg = getattr(cfg, "spectro", cfg)
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != configured rate {cfg.sample_rate}")
    power = stft_power(clip, cfg.n_fft, cfg.hop)
    mel = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate) @ power
    return MelSpectrogram(power_to_db(mel).astype(np.float32), cfg.n_mels, cfg.hop,
                          cfg.n_fft, cfg.sample_rate, clip.clip_id)


def snr_db(signal_energy: float, noise_energy: float) -> SnrReport:
    if not noise_energy > 0:
        raise ValueError("noise_energy must be > 0")
    if signal_energy < 0:
        raise ValueError("signal_energy must be >= 0")
    ratio = signal_energy / noise_energy
    value = 10.0 * np.log10(ratio) if ratio > 0 else float("-inf")
    return SnrReport(float(value), float(signal_energy), float(noise_energy))


# debug exports -------------------------------------------------------------

def to_gray(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo = float(v.min()) if lo is None else lo
    hi = float(v.max()) if hi is None else hi
    scale = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    return np.clip(np.round(scale * 255), 0, 255).astype(np.uint8)


def write_pgm(path, values: np.ndarray, lo: float | None = None, hi: float | None = None,
              flip: bool = True) -> None:
    """Binary PGM (P5); low-frequency rows at the bottom when ``flip``."""
    img = to_gray(values, lo, hi)
    if flip:
        img = img[::-1]
    h, w = img.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data[m.end(): m.end() + w * h], dtype=np.uint8).reshape(h, w)


def write_matrix_csv(path, values: np.ndarray) -> None:
    np.savetxt(path, np.asarray(values), delimiter=",", fmt="%.6f")
