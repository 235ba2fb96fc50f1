# -*- coding: utf-8 -*-

import math

import pytest

from lidarcodec.evaluation.report import FrameRow, RunReport, format_value, read_frame_rows, write_table


def sample_report():
    report = RunReport("stream-sim")
    report.add(FrameRow(0, "intra", 300, 1.545, target_bpp=1.5, mse=0.01, psnr=60.0))
    report.add(FrameRow(1, "inter", 200, 1.455, target_bpp=1.5, mse=0.0, psnr=math.inf))
    report.add(FrameRow(2, "inter", 250, 2.2, target_bpp=2.0, mse=0.02, psnr=50.0))
    return report


def test_aggregates_come_from_rows():
    report = sample_report()
    assert report.total_bytes == 750
    assert report.mean_bpp == pytest.approx((1.545 + 1.455 + 2.2) / 3)
    assert report.bitrate_error == pytest.approx((0.03 + 0.03 + 0.1) / 3)
    assert report.peak_bitrate_error == pytest.approx(0.1)
    assert report.mean_mse == pytest.approx(0.01)
    assert report.mean_psnr == pytest.approx(55.0)
    assert report.mode_counts() == {"intra": 1, "inter": 2}
    assert report.aggregates()["frames"] == 3


def test_report_without_targets():
    report = RunReport("encode", [FrameRow(0, "intra", 10, 0.5)])
    assert report.bitrate_error is None
    assert report.peak_bitrate_error is None
    assert report.mean_psnr is None
    assert RunReport("empty").mean_bpp == 0.0


def test_all_identical_frames_have_infinite_psnr():
    report = RunReport("encode", [FrameRow(0, "intra", 10, 0.5, psnr=math.inf)])
    assert report.mean_psnr == math.inf


def test_format_value():
    assert format_value(None) == ""
    assert format_value(math.inf) == "inf"
    assert format_value(1.0) == "1.000000"
    assert format_value(7) == "7"


def test_csv_is_deterministic_and_readable(tmp_path):
    first = tmp_path / "a" / "report.csv"
    second = tmp_path / "b.csv"
    sample_report().write_csv(str(first))
    sample_report().write_csv(str(second))
    assert first.read_bytes() == second.read_bytes()

    text = first.read_text()
    assert text.splitlines()[0] == "index,mode,bytes,bpp,target_bpp,mse,psnr"
    assert "# bitrate_error," in text

    rows = read_frame_rows(str(first))
    assert [row.mode for row in rows] == ["intra", "inter", "inter"]
    assert rows[1].psnr == math.inf
    assert rows[2].target_bpp == pytest.approx(2.0)


def test_timing_columns(tmp_path):
    path = tmp_path / "timed.csv"
    report = RunReport("encode", [FrameRow(0, "intra", 10, 0.5, encode_ms=3.5, decode_ms=1.25)])
    report.write_csv(str(path), timing=True)
    assert path.read_text().splitlines()[0].endswith("encode_ms,decode_ms")
    assert read_frame_rows(str(path))[0].decode_ms == pytest.approx(1.25)


def test_write_table(tmp_path):
    path = tmp_path / "rd.csv"
    write_table(str(path), ("q", "bpp"), [[0.1, 2.0], [0.2, 1.5]], {"a_D": 0.01})
    lines = path.read_text().splitlines()
    assert lines == ["q,bpp", "0.100000,2.000000", "0.200000,1.500000", "# a_D,0.010000"]
