# -*- coding: utf-8 -*-

import math

import numpy as np
import pytest

from lidarcodec.evaluation.synthetic import (
    EvaluationError,
    SyntheticSequence,
    parse_synthetic_source,
    static_settings,
)
from lidarcodec.modules.pointcloud_io import project


def test_frames_are_deterministic(small_params):
    a = SyntheticSequence(small_params, 3, seed=9).frame(2)
    b = SyntheticSequence(small_params, 3, seed=9).frame(2)
    np.testing.assert_array_equal(a.points, b.points)
    c = SyntheticSequence(small_params, 3, seed=10).frame(2)
    assert len(c) != len(a) or not np.array_equal(c.points, a.points)


def test_frames_fit_the_projection(moving_sequence, small_params):
    cloud = moving_sequence.frame(0)
    ranges = np.linalg.norm(cloud.points, axis=1)
    assert len(cloud) > 0.5 * small_params.rows * small_params.cols
    assert np.all(ranges > 0.5) and np.all(ranges < small_params.range_max)
    assert project(cloud, small_params).occupied > 0.5 * small_params.rows * small_params.cols


def test_static_scene_repeats(static_sequence):
    np.testing.assert_array_equal(static_sequence.frame(0).points, static_sequence.frame(3).points)
    assert all(pose.rotation_angle() == pytest.approx(0.0, abs=1e-6) for pose in static_sequence.poses())


def test_relative_pose_of_moving_sensor(moving_sequence):
    pose = moving_sequence.relative_pose(1)
    settings = moving_sequence.settings
    assert pose.rotation_angle() == pytest.approx(math.radians(settings.yaw_rate))
    assert np.linalg.norm(pose.translation) == pytest.approx(settings.speed)
    assert moving_sequence.relative_pose(0).rotation_angle() == 0.0
    assert len(moving_sequence.poses()) == len(moving_sequence)


def test_iteration_and_bounds(small_params):
    sequence = SyntheticSequence(small_params, 2, seed=1)
    assert len(list(sequence)) == 2
    with pytest.raises(EvaluationError):
        sequence.frame(2)
    with pytest.raises(EvaluationError):
        SyntheticSequence(small_params, 0)


def test_parse_synthetic_source():
    assert parse_synthetic_source("synthetic:12") == 12
    assert parse_synthetic_source("/data/kitti/00") is None
    with pytest.raises(EvaluationError):
        parse_synthetic_source("synthetic:abc")
    with pytest.raises(EvaluationError):
        parse_synthetic_source("synthetic:0")


def test_noise_free_settings():
    settings = static_settings()
    assert settings.speed == 0.0 and settings.noise == 0.0 and settings.jitter == 0.0
