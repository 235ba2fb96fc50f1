# -*- coding: utf-8 -*-

import os

import numpy as np
import pytest

from lidarcodec.core.bitstream import decode_stream, encode_stream
from lidarcodec.core.codec_manager import CodecOptions, FrameEncoder
from lidarcodec.evaluation import experiments
from lidarcodec.evaluation.synthetic import EvaluationError
from lidarcodec.modules.pointcloud_io import dump_point_cloud
from lidarcodec.modules.prediction import PredictionMode
from lidarcodec.modules.rangecoder import BACKEND
from lidarcodec.modules.ratecontrol import InsufficientSamplesError, parse_schedule
from lidarcodec.utils.config_manager import (
    CodecSettings,
    ConfigError,
    PredictionSettings,
    ProjectionSettings,
)


@pytest.fixture
def settings():
    return CodecSettings(
        projection=ProjectionSettings(rows=16, cols=256, elev_min_deg=-16.0, elev_max_deg=2.0),
        prediction=PredictionSettings(pose_source="none"),
    )


@pytest.fixture
def params(settings):
    return experiments.projection_from_settings(settings)


def encode_synthetic(settings, params, n, output=None, schedule=None, verify=False):
    pose_source = experiments.build_pose_source_from_settings(settings, params)
    source = experiments.open_source(f"synthetic:{n}", params, seed=0)
    return experiments.run_encode(settings, source, params, pose_source, output, schedule, verify=verify)


def test_projection_from_settings(params, small_params):
    assert params.shape == (16, 256)
    assert params.elevation_min == pytest.approx(small_params.elevation_min)


def test_encode_decode_info(settings, params, tmp_path):
    container = str(tmp_path / "seq.dcmp")
    report = encode_synthetic(settings, params, 10, output=container, verify=True)
    assert len(report) == 10
    assert report.rows[0].mode == "intra"
    assert report.bitrate_error is None

    reference = experiments.open_source("synthetic:10", params, seed=0)
    decoded = experiments.run_decode(container, str(tmp_path / "out"), reference=reference)
    assert len(decoded) == 10
    assert decoded.metadata["skipped"] == 0
    assert [row.bytes for row in decoded.rows] == [row.bytes for row in report.rows]
    for encoded_row, decoded_row in zip(report.rows, decoded.rows):
        assert decoded_row.mse == pytest.approx(encoded_row.mse)
    assert len(os.listdir(tmp_path / "out")) == 10

    info = experiments.run_info(container)
    assert info["summary"]["frames"] == 10
    assert info["summary"]["bytes"] == os.path.getsize(container)
    assert info["header"]["rows"] == 16
    assert info["packets"][0]["mode"] == "intra"
    assert info["host"]["Backend"] == BACKEND.info


def test_decode_to_ply(settings, params, tmp_path):
    container = str(tmp_path / "seq.dcmp")
    encode_synthetic(settings, params, 2, output=container)
    experiments.run_decode(container, str(tmp_path / "ply"), fmt="ply-ascii")
    assert sorted(os.listdir(tmp_path / "ply")) == ["frame_000000.ply", "frame_000001.ply"]
    with pytest.raises(EvaluationError):
        experiments.run_decode(container, fmt="pcd")


def test_decode_skips_until_keyframe(static_sequence, tmp_path):
    encoder = FrameEncoder(static_sequence.params, CodecOptions(keyframe_interval=64))
    packets = [encoder.encode(cloud).packet for cloud in static_sequence]
    path = tmp_path / "cut.dcmp"
    path.write_bytes(encode_stream(encoder.header, packets[1:]))

    report = experiments.run_decode(str(path))
    assert report.metadata["skipped"] == 3
    assert len(report) == 0


def test_decode_skips_corrupted_last_packet(settings, params, tmp_path):
    container = tmp_path / "seq.dcmp"
    encode_synthetic(settings, params, 6, output=str(container))
    data = bytearray(container.read_bytes())
    data[-3] ^= 0xFF
    container.write_bytes(bytes(data))

    decoded = experiments.run_decode(str(container))
    assert [row.index for row in decoded.rows] == [0, 1, 2, 3, 4]
    assert decoded.metadata["packets"] == 6
    assert decoded.metadata["skipped"] == 1


def test_decode_resumes_after_corrupted_packet(settings, params, tmp_path):
    container = tmp_path / "seq.dcmp"
    encode_synthetic(settings, params, 6, output=str(container))
    data = bytearray(container.read_bytes())
    header, packets = decode_stream(bytes(data))
    offset = len(header.to_bytes()) + packets[0].size_bytes + packets[1].size_bytes
    data[offset + 20] ^= 0xFF
    container.write_bytes(bytes(data))

    decoded = experiments.run_decode(str(container))
    expected = [0, 1]
    for packet in packets[3:]:
        # Tras el dañado sólo vuelve a decodificarse a partir de una trama intra
        if packet.mode == PredictionMode.INTRA or len(expected) > 2:
            expected.append(packet.frame_index)
    assert [row.index for row in decoded.rows] == expected
    assert decoded.metadata["packets"] == 6
    assert decoded.metadata["skipped"] == 6 - len(expected)


def test_schedule_switches_targets(settings, params):
    schedule = parse_schedule("0,1.0\n5,3.0")
    report = encode_synthetic(settings, params, 10, schedule=schedule, verify=True)
    assert [row.target_bpp for row in report.rows] == [1.0] * 5 + [3.0] * 5
    early = np.mean([row.bpp for row in report.rows[:5]])
    late = np.mean([row.bpp for row in report.rows[5:]])
    assert late > early
    assert report.bitrate_error is not None


def test_stream_sim_uses_dataset_schedule(settings, params):
    pose_source = experiments.build_pose_source_from_settings(settings, params)
    source = experiments.open_source("synthetic:10", params)
    report = experiments.run_stream_sim(settings, source, params, pose_source)
    assert report.name == "stream-sim"
    assert report.metadata["schedule"] == [(0, 1.5), (3, 1.3), (7, 1.7)]
    assert report.rows[4].target_bpp == 1.3


def test_rd_curve(settings, params):
    clouds = experiments.open_source("synthetic:2", params).load_all()
    pose_source = experiments.build_pose_source_from_settings(settings, params)
    with pytest.raises(InsufficientSamplesError):
        experiments.run_rd_curve(settings, clouds, params, pose_source, [0.05, 0.1, 0.1])

    curve = experiments.run_rd_curve(settings, clouds, params, pose_source, [0.05, 0.1, 0.2])
    assert curve.a_d > 0
    assert curve.points[0]["bpp"] > curve.points[2]["bpp"]
    assert curve.points[0]["mse"] < curve.points[2]["mse"]
    assert set(curve.fits()) == {"a_D", "CoD_D", "a_R", "b_R", "CoD_R", "log_a", "log_b", "CoD_log"}


def test_pose_file_must_exist(settings, params, tmp_path):
    with pytest.raises(ConfigError):
        experiments.build_pose_source_from_settings(settings, params, "file", str(tmp_path / "poses.txt"))
    with pytest.raises(ConfigError):
        experiments.build_pose_source_from_settings(settings, params, "file")


def test_open_source_from_files(params, moving_sequence, tmp_path):
    with pytest.raises(EvaluationError):
        experiments.open_source(str(tmp_path / "missing"), params)
    with pytest.raises(EvaluationError):
        experiments.open_source(str(tmp_path), params)

    for index in range(2):
        data = dump_point_cloud(moving_sequence.frame(index), "kitti-bin")
        (tmp_path / f"{index:06d}.bin").write_bytes(data)
    (tmp_path / "notes.txt").write_text("ignorado")

    source = experiments.open_source(str(tmp_path), params, prefetch=2)
    assert len(source) == 2
    clouds = source.load_all()
    assert len(clouds[1]) == len(moving_sequence.frame(1))
    assert len(experiments.open_source(str(tmp_path / "*.bin"), params)) == 2
