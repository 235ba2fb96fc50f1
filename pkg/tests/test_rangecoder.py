# -*- coding: utf-8 -*-

import numpy as np
import pytest

from lidarcodec.modules.rangecoder import (
    BACKEND,
    BitDecoder,
    SymbolStream,
    configure_backend,
    decode_runs,
    decode_segments,
    empirical_cost_bits,
    encode_runs,
    encode_segments,
    encode_symbol_stream,
)


@pytest.fixture(autouse=True)
def python_backend():
    configure_backend(False)
    yield
    configure_backend(False)


def sparse_values(rng, n, density=0.1, scale=20):
    values = np.where(rng.random(n) < density, rng.integers(-scale, scale + 1, n), 0)
    return values.astype(np.int64).tolist()


def test_segments_round_trip(rng):
    values = sparse_values(rng, 600)
    bounds = [0, 64, 200, 200, 600]
    data = encode_segments(values, bounds)
    assert decode_segments(data, bounds) == values


def test_large_magnitudes_round_trip():
    values = [0, 1 << 20, -(1 << 18), 0, 0, 5, -1]
    bounds = [0, len(values)]
    assert decode_segments(encode_segments(values, bounds), bounds) == values


def test_all_zero_segments_are_tiny():
    bounds = [0, 1000, 4096]
    data = encode_segments([0] * 4096, bounds)
    assert len(data) <= 4
    assert decode_segments(data, bounds) == [0] * 4096


def test_corrupt_segments_raise(rng):
    values = sparse_values(rng, 300, density=0.3)
    bounds = [0, 300]
    data = encode_segments(values, bounds)
    with pytest.raises(ValueError):
        decode_segments(data[: len(data) // 2], bounds)
    with pytest.raises(ValueError):
        decode_segments(data + b"\x00\x00", bounds)


def test_runs_round_trip():
    flat = np.zeros(100, dtype=bool)
    flat[10:40] = True
    flat[70:71] = True
    runs = [10, 30, 30, 1, 29]
    data = encode_runs(runs)
    np.testing.assert_array_equal(decode_runs(data, 100), flat)


def test_runs_starting_with_ones():
    data = encode_runs([0, 5, 3])
    np.testing.assert_array_equal(decode_runs(data, 8), [True] * 5 + [False] * 3)


def test_runs_exceeding_total_raise():
    data = encode_runs([4, 10])
    with pytest.raises(ValueError):
        decode_runs(data, 8)


def test_empty_runs():
    assert decode_runs(b"", 0).size == 0
    with pytest.raises(ValueError):
        decode_runs(b"\x01", 0)


def test_symbol_stream_round_trip(rng):
    contexts = rng.integers(0, 3, 500).tolist()
    symbols = [int(rng.random() < (0.1 if c == 0 else 0.7)) for c in contexts]
    data = encode_symbol_stream(SymbolStream(contexts, symbols), 3)
    decoder = BitDecoder(data, 3)
    assert [decoder.decode(c) for c in contexts] == symbols
    assert decoder.finished_cleanly()


def test_empirical_cost_tracks_coded_size(rng):
    contexts = [0] * 4000
    symbols = (rng.random(4000) < 0.05).astype(int).tolist()
    stream = SymbolStream(contexts, symbols)
    cost, n = empirical_cost_bits(stream, 1)
    assert n == 4000
    assert cost < 4000 * 0.5
    coded_bits = 8 * len(encode_symbol_stream(stream, 1))
    assert abs(coded_bits - cost) < 0.05 * cost + 64


def test_backend_info():
    assert configure_backend(False).startswith("python")
    assert not BACKEND.jit
