"""Label generation from the offline-optimal replay, plus dataset IO."""
import pytest

from embcache import (InvalidConfigError, SequenceSample, chunk, label_caching,
                      label_prefetch, read_dataset, simulate_optgen,
                      split_dataset, trace_from_gids, write_dataset)
from embcache.errors import TraceParseError

from conftest import letter_trace


def one_chunk_samples(trace, l_in):
    # hand-built sample covering the whole trace
    return [SequenceSample(input=trace.accesses[:l_in], origin=0,
                           window=trace.accesses[l_in:] or None)]


def test_label_caching_hand_example():
    t = letter_trace("ABACB")
    samples = one_chunk_samples(t, 5)
    # gpu_capacity 3 -> floor(0.8 * 3) = 2 blocks for labeling
    ds = label_caching(t, samples, gpu_capacity=3)
    assert ds.label_capacity == 2
    assert ds.samples[0].cache_labels == [1, 1, 0, 0, 0]


def test_label_caching_all_distinct_zero():
    t = trace_from_gids(list(range(6)), [8])
    ds = label_caching(t, one_chunk_samples(t, 6), gpu_capacity=4)
    assert ds.samples[0].cache_labels == [0] * 6


def test_label_caching_single_id_repeated():
    t = trace_from_gids([3] * 7, [8])
    ds = label_caching(t, one_chunk_samples(t, 7), gpu_capacity=2)
    assert ds.samples[0].cache_labels == [1] * 6 + [0]


def test_label_alignment(correlated_trace):
    samples = chunk(correlated_trace, l_in=15, l_out=5, window_ratio=3)
    ds = label_caching(correlated_trace, samples, gpu_capacity=40)
    keep = simulate_optgen(correlated_trace, ds.label_capacity).keep_decisions
    for s in ds.samples:
        assert s.cache_labels == keep[s.origin: s.origin + len(s.input)]


def test_capacity_floor_rejected():
    t = letter_trace("ABAB")
    with pytest.raises(InvalidConfigError):
        label_caching(t, one_chunk_samples(t, 4), gpu_capacity=1)


def test_label_prefetch_targets_are_window_misses():
    # trace: chunk [A,B] then window [C,D,A,B] at capacity 2.
    t = letter_trace("ABCDAB")
    samples = chunk(t, l_in=2, l_out=2, window_ratio=2)
    ds = label_prefetch(t, samples, gpu_capacity=3, l_out=2)
    res = simulate_optgen(t, 2)
    sample = ds.samples[0]
    window_positions = range(2, 6)
    misses = [t.accesses[i] for i in window_positions if not res.per_access_hit[i]]
    assert sample.prefetch_targets == misses[:2]
    for tgt in sample.prefetch_targets:
        assert tgt in sample.window


def test_label_prefetch_pads_scarce_misses():
    # Window [C,A,B,A,B] at capacity 2 misses exactly C then B
    t = letter_trace("ABCABAB")
    sample = SequenceSample(input=t.accesses[:2], origin=0, window=t.accesses[2:7])
    ds = label_prefetch(t, [sample], gpu_capacity=3, l_out=5)
    gids = [a.global_id for a in ds.samples[0].prefetch_targets]
    assert gids == [2, 1, 1, 1, 1]


def test_label_prefetch_drops_all_hit_windows():
    # Working set fits (capacity 2 after scaling): every window access hits
    t = letter_trace("ABABABABABAB")
    samples = chunk(t, l_in=4, l_out=2, window_ratio=2)
    ds = label_prefetch(t, samples, gpu_capacity=3, l_out=2)
    assert len(ds.samples) == 0
    assert ds.dropped == len(samples)


def test_label_determinism(correlated_trace):
    samples = chunk(correlated_trace, 15, 5, 3)
    a = label_prefetch(correlated_trace, samples, gpu_capacity=40)
    b = label_prefetch(correlated_trace, samples, gpu_capacity=40)
    assert [s.prefetch_targets for s in a.samples] == \
        [s.prefetch_targets for s in b.samples]


def test_split_ratio_and_parity(correlated_trace):
    samples = chunk(correlated_trace, 15, 5, 3)
    ds = label_caching(correlated_trace, samples, gpu_capacity=40)
    train, val = split_dataset(ds, ratio=0.75)
    assert len(train) == int(len(ds.samples) * 0.75)
    assert len(train) + len(val) == len(ds.samples)
    even, odd = split_dataset(ds, parity=True)
    assert len(even) + len(odd) == len(ds.samples)
    assert [s.origin for s in even.samples] == \
        [s.origin for i, s in enumerate(ds.samples) if i % 2 == 0]
    with pytest.raises(InvalidConfigError):
        split_dataset(ds, ratio=1.5)


def test_dataset_round_trip(tmp_path, correlated_trace):
    samples = chunk(correlated_trace, 15, 5, 3)
    for ds in (label_caching(correlated_trace, samples, gpu_capacity=40),
               label_prefetch(correlated_trace, samples, gpu_capacity=40)):
        path = tmp_path / f"{ds.kind}.ds"
        write_dataset(ds, path)
        back = read_dataset(path)
        assert back.kind == ds.kind
        assert back.label_capacity == ds.label_capacity
        assert back.vocabulary == ds.vocabulary
        assert back.dropped == ds.dropped
        assert len(back) == len(ds)
        for s1, s2 in zip(back.samples, ds.samples):
            assert s1.origin == s2.origin
            assert s1.input == s2.input
            assert s1.cache_labels == s2.cache_labels
            assert s1.prefetch_targets == s2.prefetch_targets
            assert s1.window == s2.window


def test_dataset_parse_errors(tmp_path):
    path = tmp_path / "bad.ds"
    path.write_text("tables: 4\nkind: caching\nlabel_capacity: 2\n0|0,1|not-bits||\n")
    with pytest.raises(TraceParseError):
        read_dataset(path)
    path.write_text("kind: caching\n")
    with pytest.raises(TraceParseError):
        read_dataset(path)
