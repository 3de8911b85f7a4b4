import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from presort.corpus import SyntheticSpec, decode_wav, generate_synthetic_corpus
from presort.segmenter import MelSegment, segment
from presort.spectro import DB_FLOOR, SpectroConfig, mel_spectrogram_db
from presort.threshold import (SingleWindowWarning, apply_threshold, blackened_windows,
                               sweep_report, window_energies, window_frames)


def seg_from_window_energies(energies, width=4, n_mels=2):
    # each window gets uniform power so its summed energy equals the target
    cols = []
    for e in energies:
        cell = e / (width * n_mels)
        cols.append(np.full((n_mels, width), 10.0 * np.log10(cell)))
    return MelSegment(np.concatenate(cols, axis=1), "a", "c", 0, 0.0)


def test_hand_example_blackens_middle_window():
    assert blackened_windows([10.0, 2.0, 9.0], 0.3).tolist() == [False, True, False]
    # level-independent: same result on dB values (peak 10 -> 0 dB)
    seg = seg_from_window_energies([1.0, 0.2, 0.9])
    out = apply_threshold(seg, 4 * 128 / 16000, 0.3)
    assert np.all(out.values[:, 4:8] == DB_FLOOR)
    assert np.array_equal(out.values[:, :4], seg.values[:, :4])
    assert np.array_equal(out.values[:, 8:], seg.values[:, 8:])


def test_window_energy_oracle():
    seg = seg_from_window_energies([0.5, 0.25, 0.125])
    np.testing.assert_allclose(window_energies(seg.values, 4), [0.5, 0.25, 0.125], rtol=1e-6)
    assert window_frames(0.4, 16000, 128) == 50
    assert window_frames(0.4, 16000, 256) == 25


def test_threshold_zero_and_one():
    seg = seg_from_window_energies([0.3, 1.0, 0.6, 0.9])
    assert apply_threshold(seg, 4 * 128 / 16000, 0.0) is seg
    out = apply_threshold(seg, 4 * 128 / 16000, 1.0)
    dark = [bool(np.all(out.values[:, i * 4:(i + 1) * 4] == DB_FLOOR)) for i in range(4)]
    assert dark == [True, False, True, True]


def test_silent_segment_unchanged():
    seg = MelSegment(np.full((4, 20), DB_FLOOR), "a", "c", 0, 0.0)
    out = apply_threshold(seg, 4 * 128 / 16000, 0.9)
    assert np.array_equal(out.values, seg.values)


def test_single_window_warns_and_returns_input():
    seg = seg_from_window_energies([1.0, 0.01])
    with pytest.warns(SingleWindowWarning):
        out = apply_threshold(seg, 1.0, 0.3)
    assert out is seg


def test_bad_threshold():
    with pytest.raises(ValueError):
        apply_threshold(seg_from_window_energies([1.0]), 0.1, 1.5)


values_strategy = arrays(np.float64, (3, 24), elements=st.floats(DB_FLOOR, 0.0))


@given(values_strategy, st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(1, 8))
@settings(max_examples=80, deadline=None)
def test_threshold_properties(values, t1, t2, width):
    lo, hi = min(t1, t2), max(t1, t2)
    seg = MelSegment(values, "a", "c", 0, 0.0)
    w_s = width * 128 / 16000
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleWindowWarning)
        a = apply_threshold(seg, w_s, lo).values
        b = apply_threshold(seg, w_s, hi).values
        twice = apply_threshold(MelSegment(b, "a", "c", 0, 0.0), w_s, hi).values
    # monotone: everything blackened at lo is blackened at hi
    dark_a = np.all(a == DB_FLOOR, axis=0) & ~np.all(values == DB_FLOOR, axis=0)
    assert np.all(b[:, dark_a] == DB_FLOOR)
    # only original values or the floor
    assert np.all((b == values) | (b == DB_FLOOR))
    assert np.array_equal(twice, b)


def test_sweep_report_shape_and_monotone():
    segs = [seg_from_window_energies([1.0, 0.1, 0.5, 0.05]),
            seg_from_window_energies([1.0, 1.0, 0.9, 0.8])]
    segs[1].label = "b"
    rows = sweep_report(segs, [4 * 128 / 16000], [0.0, 0.3, 1.0])
    assert [r["threshold"] for r in rows] == [0.0, 0.3, 1.0]
    fr = [r["blackened"]["a"] for r in rows]
    assert fr == sorted(fr)
    assert fr[0] == 0.0 and fr[-1] == 0.75
    with pytest.raises(ValueError):
        sweep_report([], [0.4], [0.3])


def test_sweep_on_synthetic_corpus(tmp_path):
    spec = SyntheticSpec(counts=(30, 15, 10, 10, 10), duration_range=(1.5, 3.0))
    m = generate_synthetic_corpus(spec, tmp_path, seed=4)
    cfg = SpectroConfig()
    segs = []
    for r in m.records:
        segs += segment(mel_spectrogram_db(decode_wav(r.path, 16000), cfg), r.label, 0.7)
    rows = sweep_report(segs, [0.2, 0.4], [0.3])
    assert len(rows) == 2
    by = {r["window_s"]: r["blackened"] for r in rows}
    for frac in by[0.4].values():
        assert 0.0 <= frac <= 1.0
    # stationary background noise has flat window energies, so it is blackened
    # less than clips carrying a short loud event
    events = [v for k, v in by[0.4].items() if k != "background"]
    assert by[0.4]["background"] < min(events)
