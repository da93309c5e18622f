import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlsnn.coding import (
    EventStream,
    direct_encode,
    events_to_frames,
    rate_decode,
    read_events_csv,
    slice_indices,
    write_events_csv,
)
from mlsnn.errors import ConfigError, DataError


def test_direct_encode_examples():
    img = np.random.default_rng(0).random((1, 3, 3)).astype(np.float32)
    assert np.array_equal(direct_encode(img, 1), img[None])
    out = direct_encode(np.full((2, 2), 0.5), 3)
    assert out.shape == (3, 2, 2) and np.all(out == 0.5)
    assert np.allclose(direct_encode(img, 5).sum(axis=0), 5 * img)
    assert np.array_equal(direct_encode(img, 4).mean(axis=0), img)
    with pytest.raises(ConfigError):
        direct_encode(img, 0)


def test_rate_decode_examples():
    assert rate_decode(np.array([1, 0, 1, 1]), 1, 4) == 0.75
    assert rate_decode(np.zeros((3, 5)), 2, 3).tolist() == [0.0] * 5
    assert rate_decode(np.full((3, 2), 4), 4, 3).tolist() == [1.0, 1.0]
    with pytest.raises(ConfigError):
        rate_decode(np.zeros((3, 2)), 1, 4)


def _stream(ts, w=8, h=8, seed=0):
    rng = np.random.default_rng(seed)
    m = len(ts)
    return EventStream(ts, rng.integers(0, w, m), rng.integers(0, h, m), rng.integers(0, 2, m), w, h)


def test_events_to_frames_examples():
    empty = EventStream.empty(4, 3)
    frames = events_to_frames(empty, 2, "by_time")
    assert frames.shape == (2, 2, 3, 4) and frames.sum() == 0
    with pytest.raises(DataError):
        events_to_frames(empty, 2, "by_count")
    one = EventStream([5], [3], [1], [1], 4, 2)
    frames = events_to_frames(one, 1)
    assert frames[0, 1, 1, 3] == 1 and frames.sum() == 1
    ten = _stream(np.arange(10) * 7)
    frames = events_to_frames(ten, 2, "by_count")
    assert frames[0].sum() == 5 and frames[1].sum() == 5


def test_by_count_slices_match_floor_bounds():
    m, T = 23, 5
    idx = slice_indices(_stream(np.arange(m)), T, "by_count")
    for j in range(T):
        lo, hi = j * m // T, (j + 1) * m // T
        assert np.all(idx[lo:hi] == j)


def test_by_time_single_timestamp_goes_to_slice_zero():
    idx = slice_indices(_stream(np.full(6, 42)), 4, "by_time")
    assert np.all(idx == 0)


def test_by_time_equal_windows():
    idx = slice_indices(_stream(np.array([0, 24, 25, 50, 99, 100])), 4, "by_time")
    assert idx.tolist() == [0, 0, 1, 2, 3, 3]


def test_stream_validation():
    with pytest.raises(DataError):
        EventStream([2, 1], [0, 0], [0, 0], [0, 0], 2, 2)
    with pytest.raises(DataError):
        EventStream([0], [2], [0], [0], 2, 2)
    with pytest.raises(DataError):
        EventStream([0], [0], [0], [3], 2, 2)
    with pytest.raises(ConfigError):
        events_to_frames(_stream([1, 2]), 2, "by_magic")


def test_normalize_flag():
    frames = events_to_frames(_stream(np.arange(50)), 2, normalize=True)
    assert frames.dtype == np.float32
    assert np.allclose(frames.reshape(2, -1).max(axis=1), 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=300), st.integers(1, 20),
       st.sampled_from(["by_count", "by_time"]))
def test_event_conservation(ts, T, slicing):
    stream = _stream(np.sort(ts))
    assert events_to_frames(stream, T, slicing).sum() == len(ts)


def test_events_csv_round_trip(tmp_path):
    stream = _stream(np.sort(np.random.default_rng(1).integers(0, 1000, 40)))
    write_events_csv(tmp_path / "e.csv", stream)
    back = read_events_csv(tmp_path / "e.csv", 8, 8)
    for f in ("t", "x", "y", "p"):
        assert np.array_equal(getattr(back, f), getattr(stream, f))


def test_events_csv_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_events_csv(tmp_path / "bad.csv", 4, 4)
    (tmp_path / "nonint.csv").write_text("t,x,y,p\n1,x,0,0\n")
    with pytest.raises(DataError):
        read_events_csv(tmp_path / "nonint.csv", 4, 4)
    with pytest.raises(DataError):
        read_events_csv(tmp_path / "missing.csv", 4, 4)
