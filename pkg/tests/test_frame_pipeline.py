# -*- coding: utf-8 -*-

import pytest

from lidarcodec.utils.frame_pipeline import FramePrefetcher


def test_order_is_preserved():
    with FramePrefetcher(range(20), lambda i: i * i, depth=2) as frames:
        assert list(frames) == [i * i for i in range(20)]
        assert len(frames) == 20


def test_loader_error_is_raised_in_order():
    def loader(i):
        if i == 3:
            raise OSError("archivo ilegible")
        return i

    seen = []
    with pytest.raises(OSError, match="ilegible"):
        with FramePrefetcher(range(6), loader) as frames:
            for item in frames:
                seen.append(item)
    assert seen == [0, 1, 2]


def test_close_before_the_end():
    prefetcher = FramePrefetcher(range(100), lambda i: i, depth=1)
    for item in prefetcher:
        if item == 2:
            break
    prefetcher.close()
    assert prefetcher._thread is None


@pytest.mark.parametrize("depth", [0, 5])
def test_invalid_depth(depth):
    with pytest.raises(ValueError):
        FramePrefetcher([], lambda i: i, depth=depth)
