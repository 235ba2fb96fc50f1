# -*- coding: utf-8 -*-

"""
Pruebas largas a escala de secuencia completa. Se ejecutan con
`pytest -m acceptance`.
"""

import math
import os
import time

import numpy as np
import pytest

from lidarcodec.core.codec_manager import CodecOptions, FrameDecoder, FrameEncoder
from lidarcodec.evaluation import experiments
from lidarcodec.evaluation.ablation import psnr_table, run_ablation
from lidarcodec.evaluation.synthetic import SceneSettings, SyntheticSequence
from lidarcodec.modules.pointcloud_io import ProjectionParams
from lidarcodec.modules.pose_estimation import estimate_pose
from lidarcodec.utils.config_manager import CodecSettings, PredictionSettings, ProjectionSettings

pytestmark = pytest.mark.acceptance


@pytest.fixture
def settings():
    return CodecSettings(
        projection=ProjectionSettings(rows=32, cols=512, elev_min_deg=-24.8, elev_max_deg=2.0),
        prediction=PredictionSettings(pose_source="none"),
    )


def test_closed_loop_sync_over_long_sequence(small_params):
    sequence = SyntheticSequence(small_params, 200, seed=21)
    encoder = FrameEncoder(small_params, CodecOptions(keyframe_interval=16))
    decoder = FrameDecoder(encoder.header)
    for cloud in sequence:
        encoded = encoder.encode(cloud)
        assert decoder.decode(encoded.packet).image.equals(encoded.reconstruction)


def test_rd_models_fit_constant_q_sweep(settings):
    params = experiments.projection_from_settings(settings)
    clouds = experiments.open_source("synthetic:5", params).load_all()
    pose_source = experiments.build_pose_source_from_settings(settings, params)
    curve = experiments.run_rd_curve(settings, clouds, params, pose_source, [0.02, 0.05, 0.1, 0.2, 0.5])
    assert curve.cod_d >= 0.95
    assert curve.cod_r >= 0.90


def test_ablation_ordering(settings):
    params = experiments.projection_from_settings(settings)
    clouds = experiments.open_source("synthetic:2", params).load_all()
    table = psnr_table(run_ablation(clouds, params, [1.0, 1.8]))
    for bpp in (1.0, 1.8):
        assert table["adwt"][bpp] > table["dwt"][bpp] > table["dct"][bpp]
    assert table["adwt"][1.0] - table["dwt"][1.0] >= 3.0


def test_rate_control_bitrate_error(settings):
    params = experiments.projection_from_settings(settings)
    source = experiments.open_source("synthetic:100", params)
    pose_source = experiments.build_pose_source_from_settings(settings, params)
    report = experiments.run_stream_sim(settings, source, params, pose_source)
    assert report.bitrate_error <= 0.06
    assert report.peak_bitrate_error <= 0.15


def test_pose_recovery_rate():
    params = ProjectionParams()
    rng = np.random.default_rng(77)
    recovered = 0
    for trial in range(100):
        scene = SceneSettings(
            speed=float(rng.uniform(0.0, 1.0)),
            yaw_rate=float(rng.uniform(-5.0, 5.0)),
            moving_fraction=0.0,
            noise=0.01,
        )
        sequence = SyntheticSequence(params, 2, seed=trial, settings=scene)
        truth = sequence.relative_pose(1)
        pose = estimate_pose(sequence.frame(0), sequence.frame(1), params)
        relative = pose.rotation.T @ truth.rotation
        angle = math.degrees(math.acos(np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)))
        if angle <= 0.2 and np.linalg.norm(pose.translation - truth.translation) <= 0.05:
            recovered += 1
    assert recovered >= 95


@pytest.mark.skipif(not os.environ.get("LIDARCODEC_KITTI_DIR"), reason="LIDARCODEC_KITTI_DIR no definido")
def test_kitti_quality_floor():
    settings = CodecSettings(prediction=PredictionSettings(pose_source="icp"))
    params = experiments.projection_from_settings(settings)
    source = experiments.open_source(os.environ["LIDARCODEC_KITTI_DIR"], params)
    source.paths = source.paths[:10]
    pose_source = experiments.build_pose_source_from_settings(settings, params)
    schedule = experiments.BitrateSchedule.constant(1.5)
    report = experiments.run_encode(settings, source, params, pose_source, schedule=schedule)
    assert report.mean_psnr >= 60.0


def test_full_frame_throughput():
    params = ProjectionParams()
    cloud = SyntheticSequence(params, 1, seed=4).frame(0)
    encoder = FrameEncoder(params, CodecOptions())
    decoder = FrameDecoder(encoder.header)
    # Primera pasada fuera de la medida (compilación JIT)
    decoder.decode(encoder.encode(cloud).packet)

    encoder = FrameEncoder(params, CodecOptions())
    decoder = FrameDecoder(encoder.header)
    start = time.perf_counter()
    decoder.decode(encoder.encode(cloud).packet)
    assert (time.perf_counter() - start) * 1000.0 < 250.0
