import hashlib
from collections import Counter

import numpy as np
import pytest
from scipy.io import wavfile

from presort.corpus import (ManifestError, SyntheticSpec, WavError, decode_wav,
                            encode_wav, generate_synthetic_corpus, load_ground_truth,
                            load_manifest, split, write_manifest)
from presort.labels import LabelSpace, canonical_label
from presort.segmenter import segment, segment_span
from presort.spectro import SpectroConfig, mel_spectrogram_db

HEADER = "clip_id,path,label,duration_s,split\n"


def write_rows(path, rows):
    path.write_text(HEADER + "".join(rows), encoding="utf-8")
    return path


def test_load_manifest_basic(tmp_path):
    rows = [f"c{i},a/c{i}.wav,{'BKGD' if i % 2 else 'Chimpanzee'},{0.5 + i},\n" for i in range(5)]
    m = load_manifest(write_rows(tmp_path / "m.csv", rows))
    assert len(m) == 5
    assert m.label_space == LabelSpace(("background", "chimpanzee"))
    assert m.records[0].path == tmp_path / "a" / "c0.wav"


def test_load_manifest_errors(tmp_path):
    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest(write_rows(tmp_path / "e.csv", []))
    with pytest.raises(ManifestError, match=":3: malformed"):
        load_manifest(write_rows(tmp_path / "b.csv", ["a,x.wav,background,1.0,\n", "b,y.wav,background,abc,\n"]))
    with pytest.raises(ManifestError, match="unknown label"):
        load_manifest(write_rows(tmp_path / "u.csv", ["a,x.wav,gorilla,1.0,\n"]),
                      labels=["background", "chimpanzee"])
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "missing.csv")
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(write_rows(tmp_path / "d.csv", ["a,x.wav,background,1.0,\n"] * 2))


def test_minimum_duration_row_accepted(tmp_path):
    m = load_manifest(write_rows(tmp_path / "m.csv", ["a,x.wav,guenon,0.145,\n"]))
    assert m.records[0].duration_s == 0.145


def test_canonical_label():
    assert canonical_label(" BKGD ") == "background"
    assert canonical_label("Red Capped") == "red_capped"


def test_manifest_round_trip(tmp_path):
    rows = [f"c{i},c{i}.wav,background,1.0,\n" for i in range(4)]
    m = split(load_manifest(write_rows(tmp_path / "m.csv", rows)), (2, 1, 1), seed=0)
    write_manifest(m, tmp_path / "out.csv")
    again = load_manifest(tmp_path / "out.csv")
    assert dict(again.split_assignment) == dict(m.split_assignment)


# -- WAV ------------------------------------------------------------------------

def test_decode_identity_pcm16(tmp_path):
    rng = np.random.default_rng(0)
    pcm = rng.integers(-32768, 32767, size=16000, dtype=np.int16)
    wavfile.write(tmp_path / "a.wav", 16000, pcm)
    clip = decode_wav(tmp_path / "a.wav", 16000)
    assert len(clip.samples) == 16000
    assert np.array_equal(clip.samples, pcm / 32768.0)


def test_decode_stereo_cancels(tmp_path):
    left = (np.sin(np.linspace(0, 100, 16000)) * 0.5).astype(np.float32)
    wavfile.write(tmp_path / "s.wav", 16000, np.stack([left, -left], axis=1))
    clip = decode_wav(tmp_path / "s.wav", 16000)
    assert np.all(clip.samples == 0.0)


def test_decode_resample_keeps_tone(tmp_path):
    t = np.arange(8000) / 8000
    wavfile.write(tmp_path / "t.wav", 8000, (0.5 * np.sin(2 * np.pi * 100 * t)).astype(np.float32))
    clip = decode_wav(tmp_path / "t.wav", 16000)
    assert len(clip.samples) == 16000
    # DFT oracle: 1 s of signal -> bin index == frequency in Hz
    mag = np.abs(np.fft.rfft(clip.samples))
    assert int(np.argmax(mag)) == 100


def test_decode_errors(tmp_path):
    wavfile.write(tmp_path / "i32.wav", 16000, np.zeros(10, dtype=np.int32))
    with pytest.raises(WavError, match="unsupported"):
        decode_wav(tmp_path / "i32.wav")
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00garbage")
    with pytest.raises(WavError):
        decode_wav(tmp_path / "bad.wav")
    wavfile.write(tmp_path / "empty.wav", 16000, np.zeros(0, dtype=np.int16))
    with pytest.raises(WavError, match="zero-length"):
        decode_wav(tmp_path / "empty.wav")


def test_encode_decode_round_trip(tmp_path):
    x = np.random.default_rng(1).uniform(-0.99, 0.99, 12345)
    encode_wav(tmp_path / "r.wav", x, 16000)
    y = decode_wav(tmp_path / "r.wav", 16000).samples
    assert len(y) == len(x)
    assert np.max(np.abs(y - x)) <= 1 / 32768


# -- split ------------------------------------------------------------------------

def manifest_with(counts, tmp_path):
    rows = []
    for label, n in counts.items():
        rows += [f"{label}_{i},{label}_{i}.wav,{label},1.0,\n" for i in range(n)]
    return load_manifest(write_rows(tmp_path / "m.csv", rows))


def split_counts(m):
    out = Counter()
    for r in m.records:
        out[(r.label, m.split_assignment[r.clip_id])] += 1
    return out


def test_split_exact(tmp_path):
    m = split(manifest_with({"background": 100, "chimp": 100}, tmp_path), (3, 1, 1), seed=3)
    c = split_counts(m)
    for lab in ("background", "chimp"):
        assert (c[(lab, "train")], c[(lab, "val")], c[(lab, "test")]) == (60, 20, 20)


def test_split_deterministic_and_partition(tmp_path):
    base = manifest_with({"background": 37, "a": 11, "b": 5}, tmp_path)
    one, two = split(base, (3, 1, 1), 9), split(base, (3, 1, 1), 9)
    assert dict(one.split_assignment) == dict(two.split_assignment)
    assert set(one.split_assignment) == {r.clip_id for r in base.records}
    assert dict(split(base, (3, 1, 1), 10).split_assignment) != dict(one.split_assignment)


def test_split_five_classes_fifty(tmp_path):
    m = split(manifest_with({c: 50 for c in ["background", "a", "b", "c", "d"]}, tmp_path), (3, 1, 1), 0)
    c = split_counts(m)
    for lab in m.label_space:
        for name, want in (("train", 30), ("val", 10), ("test", 10)):
            assert abs(c[(lab, name)] - want) <= 1


def test_split_ratio_within_one_for_odd_sizes(tmp_path):
    sizes = {"background": 113, "a": 7, "b": 22}
    m = split(manifest_with(sizes, tmp_path), (3, 1, 1), 1)
    c = split_counts(m)
    for lab, n in sizes.items():
        for name, share in (("train", 0.6), ("val", 0.2), ("test", 0.2)):
            assert abs(c[(lab, name)] - n * share) <= 1


def test_split_too_small_class(tmp_path):
    with pytest.raises(ManifestError, match="'rare'"):
        split(manifest_with({"background": 10, "rare": 2}, tmp_path), (3, 1, 1), 0)


# -- synthetic corpus ----------------------------------------------------------------

SMALL = SyntheticSpec(counts=(8, 4, 3, 3, 3), duration_range=(0.3, 1.5))


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synthetic_counts_and_sidecar(tmp_path):
    spec = SyntheticSpec(counts=(40, 20, 8, 6, 6), duration_range=(0.2, 1.0))
    m = generate_synthetic_corpus(spec, tmp_path, seed=1)
    counts = load_manifest(tmp_path / "manifest.csv").class_counts()
    assert counts == {"background": 40, "chimpanzee": 20, "mandrill": 8, "guenon": 6, "redcap": 6}
    assert counts["background"] > counts["chimpanzee"] > counts["mandrill"] >= counts["guenon"]
    gt = load_ground_truth(tmp_path / "ground_truth.csv")
    assert set(gt) == {r.clip_id for r in m.records}
    for r in m.records:
        iv = gt[r.clip_id]
        if r.label == "background":
            assert iv.empty
        else:
            assert 0 <= iv.start_s < iv.end_s <= r.duration_s + 1e-9


def test_synthetic_deterministic(tmp_path):
    generate_synthetic_corpus(SMALL, tmp_path / "a", seed=5)
    generate_synthetic_corpus(SMALL, tmp_path / "b", seed=5)
    generate_synthetic_corpus(SMALL, tmp_path / "c", seed=6)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_synthetic_invalid_spec(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SyntheticSpec(counts=(5, 0, 1, 1, 1)), tmp_path)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SyntheticSpec(duration_range=(0.0, 1.0)), tmp_path)


def test_synthetic_event_clip_has_empty_segments(tmp_path):
    spec = SyntheticSpec(classes=("background", "chimpanzee"), counts=(1, 6),
                         duration_range=(3.0, 3.0), event_range=(0.5, 0.5))
    m = generate_synthetic_corpus(spec, tmp_path, seed=2)
    gt = load_ground_truth(tmp_path / "ground_truth.csv")
    cfg = SpectroConfig()
    for r in m.records:
        if r.label == "background":
            continue
        iv = gt[r.clip_id]
        assert iv.end_s - iv.start_s == pytest.approx(0.5, abs=1e-4)
        clip = decode_wav(r.path, 16000)
        segs = segment(mel_spectrogram_db(clip, cfg), r.label, 0.7)
        assert len(segs) == 5
        empty = [s for s in segs if not iv.overlaps(*segment_span(s, cfg.hop, cfg.sample_rate))]
        assert len(empty) >= 2
