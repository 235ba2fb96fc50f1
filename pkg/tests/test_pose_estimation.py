# -*- coding: utf-8 -*-

import math

import numpy as np
import pytest

from lidarcodec.modules.pointcloud_io import PointCloud, ProjectionParams, RangeImage, back_project, project
from lidarcodec.modules.pose_estimation import (
    FewKeypointsError,
    IdentityPoseSource,
    NonConvergentError,
    Pose,
    PoseEstimationError,
    PoseFileError,
    build_pose_source,
    estimate_pose,
    extract_keypoints,
    inter_predict,
    inter_reconstruct,
    load_pose_file,
    predict_inter_image,
    save_pose_file,
    select_mode,
)
from lidarcodec.modules.prediction import PredictionMode
from lidarcodec.evaluation.synthetic import SyntheticSequence, static_settings

from conftest import random_image


def yaw_pose(degrees: float, translation=(0.0, 0.0, 0.0)) -> Pose:
    a = math.radians(degrees)
    rotation = np.array([[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0], [0.0, 0.0, 1.0]])
    return Pose(rotation, np.asarray(translation))


def scattered_cloud(rng, n=300) -> PointCloud:
    """Puntos dispersos a 5-20 m bajo el horizonte: todos son puntos clave."""
    elevation = np.radians(rng.uniform(-20.0, -2.0, n))
    azimuth = rng.uniform(-math.pi, math.pi, n)
    r = rng.uniform(5.0, 20.0, n)
    return PointCloud(np.stack([
        r * np.cos(elevation) * np.cos(azimuth),
        r * np.cos(elevation) * np.sin(azimuth),
        r * np.sin(elevation),
    ], axis=1))


def test_pose_validation():
    with pytest.raises(PoseEstimationError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(PoseEstimationError):
        Pose(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(PoseEstimationError):
        Pose.from_values([1.0] * 11)


def test_pose_values_round_trip():
    pose = yaw_pose(3.0, (0.5, -0.2, 0.1))
    quantized = pose.quantized()
    np.testing.assert_array_equal(quantized.to_values(), pose.to_values())
    assert quantized.rotation_angle() == pytest.approx(math.radians(3.0), abs=1e-6)


def test_identical_clouds_give_identity(rng):
    cloud = scattered_cloud(rng)
    pose = estimate_pose(cloud, cloud)
    np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(pose.translation, np.zeros(3), atol=1e-9)


def test_recovers_rigid_transform(rng):
    prev = scattered_cloud(rng)
    truth = yaw_pose(2.0, (0.5, 0.0, 0.0))
    cur = PointCloud(truth.transform(prev.points))
    pose = estimate_pose(prev, cur)
    relative = pose.rotation.T @ truth.rotation
    assert math.acos(np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)) < 1e-3
    np.testing.assert_allclose(pose.translation, truth.translation, atol=1e-3)


def test_too_few_points(rng):
    prev = scattered_cloud(rng, 10)
    cur = scattered_cloud(rng, 10)
    with pytest.raises((FewKeypointsError, NonConvergentError)):
        estimate_pose(prev, cur)


def test_keypoints_are_depth_edges():
    params = ProjectionParams(rows=4, cols=64, elevation_min=-0.1, elevation_max=0.1)
    image_values = np.full(params.shape, 10.0, np.float32)
    image_values[:, 20:30] = 20.0
    mask = np.ones(params.shape, bool)
    cloud = back_project(RangeImage(image_values, mask, params))
    keypoints = extract_keypoints(cloud, params, kappa=0.5)
    # Dos columnas de borde a cada lado del escalón, en las 4 filas
    assert len(keypoints) == 4 * 4


def test_identity_inter_prediction_is_exact(small_params, rng):
    cur = random_image(small_params, rng)
    residual = inter_predict(back_project(cur), Pose.identity(), small_params, cur)
    assert residual.mode == PredictionMode.INTER
    assert not np.any(residual.values)


def test_empty_reference_gives_raw_values(small_params, rng):
    cur = random_image(small_params, rng)
    residual = inter_predict(PointCloud.empty(), Pose.identity(), small_params, cur)
    np.testing.assert_array_equal(residual.values, cur.values.astype(np.float64))


def test_inter_reconstruct_inverts_residual(small_params, rng):
    cur = random_image(small_params, rng)
    reference = back_project(random_image(small_params, rng))
    pose = yaw_pose(1.0, (0.3, 0.0, 0.0))
    predicted = predict_inter_image(reference, pose, small_params)
    residual = inter_predict(reference, pose, small_params, cur)
    recon = inter_reconstruct(residual, predicted, small_params)
    np.testing.assert_allclose(recon.values, cur.values, atol=1e-5)
    np.testing.assert_array_equal(recon.mask, cur.mask)


def test_correct_pose_predicts_exactly(small_params):
    sequence = SyntheticSequence(small_params, 2, seed=1, settings=static_settings())
    cloud = sequence.frame(0)
    shift = Pose(np.eye(3), np.array([-0.3, 0.0, 0.0]))
    cur = project(PointCloud(shift.transform(cloud.points)), small_params)
    residual = inter_predict(cloud, shift, small_params, cur)
    assert not np.any(residual.values)


def test_select_mode_first_frame_is_intra(small_params, rng):
    cur = random_image(small_params, rng)
    decision = select_mode(cur, None, IdentityPoseSource())
    assert decision.mode == PredictionMode.INTRA


def test_select_mode_static_scene_is_inter(small_params, rng):
    cur = random_image(small_params, rng)
    decision = select_mode(cur, back_project(cur), IdentityPoseSource(), frame_index=1, t_key=0.5)
    assert decision.mode == PredictionMode.INTER
    assert isinstance(decision.side_info, Pose)


def test_select_mode_unrelated_reference_is_intra(small_params):
    near = SyntheticSequence(small_params, 1, seed=11).frame(0)
    far = PointCloud(near.points * 3.0)
    cur = project(near, small_params)
    decision = select_mode(cur, far, IdentityPoseSource(), frame_index=1, t_key=0.5)
    assert decision.mode == PredictionMode.INTRA


def test_select_mode_compares_mean_abs_residual(small_params):
    cloud = SyntheticSequence(small_params, 1, seed=11).frame(0)
    cur = project(cloud, small_params)
    ranges = np.linalg.norm(cloud.points, axis=1, keepdims=True)
    # Misma dirección, 0.3 m más lejos: residuo medio de 0.3 m en los píxeles comunes
    shifted = PointCloud(cloud.points * (ranges + 0.3) / ranges)
    source = IdentityPoseSource()
    assert select_mode(cur, shifted, source, frame_index=1, t_key=0.35).mode == PredictionMode.INTER
    assert select_mode(cur, shifted, source, frame_index=1, t_key=0.25).mode == PredictionMode.INTRA


def test_pose_file_round_trip(tmp_path):
    poses = [Pose.identity(), yaw_pose(1.5, (0.5, 0.1, 0.0))]
    path = tmp_path / "poses.txt"
    save_pose_file(poses, str(path))
    loaded = load_pose_file(str(path))
    assert len(loaded) == 2
    np.testing.assert_allclose(loaded[1].rotation, poses[1].rotation, atol=1e-12)
    np.testing.assert_allclose(loaded[1].translation, poses[1].translation)


def test_pose_file_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 0 0 0 1 0 0 0 1 0 0\n")
    with pytest.raises(PoseFileError, match=":1:"):
        load_pose_file(str(path))
    with pytest.raises(PoseFileError):
        load_pose_file(str(tmp_path / "missing.txt"))


def test_build_pose_source(small_params, tmp_path):
    assert isinstance(build_pose_source("none", small_params), IdentityPoseSource)
    with pytest.raises(PoseEstimationError):
        build_pose_source("file", small_params)
    with pytest.raises(PoseEstimationError):
        build_pose_source("gps", small_params)
    path = tmp_path / "poses.txt"
    save_pose_file([Pose.identity()], str(path))
    source = build_pose_source("file", small_params, str(path))
    cloud = PointCloud.empty()
    assert source(0, cloud, cloud) is not None
    assert source(5, cloud, cloud) is None
