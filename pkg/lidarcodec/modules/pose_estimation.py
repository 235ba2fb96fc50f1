#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo PoseEstimation
---------------------
Predicción inter por transformación rígida: estimación de pose con ICP
recortado sobre puntos de discontinuidad de profundidad, proyección de la
reconstrucción anterior y selección de modo intra/inter.
"""

import os
import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from lidarcodec.modules.pointcloud_io import (
    PointCloud,
    ProjectionParams,
    RangeImage,
    back_project,
    project,
    project_detailed,
)
from lidarcodec.modules.prediction import (
    DEFAULT_G_MIN,
    DEFAULT_TAU,
    IntraSideInfo,
    PredictionMode,
    ResidualImage,
    intra_predict,
    to_range_image,
)

logger = logging.getLogger("lidarcodec.pose_estimation")

ORTHONORMAL_TOLERANCE = 1e-6
DEFAULT_KAPPA = 0.5
DEFAULT_T_KEY = 0.5
DEFAULT_MAX_ITERATIONS = 20
DEFAULT_TRIM_RATIO = 0.8
DEFAULT_MIN_PAIRS = 30
DEFAULT_TOLERANCE = 1e-6

# Crecimiento del error medio (respecto a la primera iteración) considerado divergencia
DIVERGENCE_FACTOR = 4.0


class PoseEstimationError(Exception):
    """Excepción específica para errores de estimación de pose."""
    pass


class FewKeypointsError(PoseEstimationError):
    """No hay suficientes correspondencias para estimar la pose."""
    pass


class NonConvergentError(PoseEstimationError):
    """El ICP diverge."""
    pass


class PoseFileError(PoseEstimationError):
    """Archivo de poses mal formado."""
    pass


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Transformación rígida p' = R·p + t del frame anterior al actual.

    Attributes:
        rotation: Matriz 3x3 ortonormal con det = +1
        translation: Vector de 3 elementos (metros)
    """
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise PoseEstimationError("Pose con valores no finitos")
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0.0, atol=ORTHONORMAL_TOLERANCE):
            raise PoseEstimationError("La rotación no es ortonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise PoseEstimationError("La rotación no tiene determinante +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def nearest(cls, matrix: np.ndarray, translation: np.ndarray) -> "Pose":
        """Pose con la rotación más cercana (SVD) a una matriz 3x3 arbitraria."""
        u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64).reshape(3, 3))
        d = np.sign(np.linalg.det(u @ vt)) or 1.0
        return cls(u @ np.diag([1.0, 1.0, d]) @ vt, translation)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Pose":
        """Pose a partir de 12 valores (R por filas y después t)."""
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != 12:
            raise PoseEstimationError(f"Se esperaban 12 valores de pose, hay {flat.size}")
        return cls(flat[:9].reshape(3, 3), flat[9:])

    def to_values(self) -> np.ndarray:
        """Los 12 valores de la pose como float32 (formato del bitstream)."""
        return np.concatenate([self.rotation.ravel(), self.translation]).astype(np.float32)

    def quantized(self) -> "Pose":
        """Pose redondeada a float32, idéntica a la que verá el decodificador."""
        return Pose.from_values(self.to_values().astype(np.float64))

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def rotation_angle(self) -> float:
        """Ángulo de rotación en radianes."""
        cos_angle = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))

    def __repr__(self) -> str:
        return (
            f"Pose(angle={np.degrees(self.rotation_angle()):.4f}deg, "
            f"t=({self.translation[0]:.4f}, {self.translation[1]:.4f}, {self.translation[2]:.4f}))"
        )


def extract_keypoints(
    cloud: PointCloud, params: ProjectionParams, kappa: float = DEFAULT_KAPPA
) -> np.ndarray:
    """
    Puntos de discontinuidad de profundidad.

    Un píxel ocupado es punto clave si su rango difiere en más de kappa del
    de alguno de sus vecinos horizontales (los píxeles vacíos cuentan con
    rango 0; el acimut es circular).

    Returns:
        Array (K, 3) con los puntos originales de la nube
    """
    image, index_grid, _ = project_detailed(cloud, params)
    values = image.values.astype(np.float64)
    left = np.abs(values - np.roll(values, 1, axis=1)) > kappa
    right = np.abs(values - np.roll(values, -1, axis=1)) > kappa
    selected = image.mask & (left | right)
    return cloud.points[index_grid[selected]]


def _kabsch(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotación y traslación de mínimos cuadrados que llevan source a target."""
    source_centroid = source.mean(axis=0)
    target_centroid = target.mean(axis=0)
    covariance = (source - source_centroid).T @ (target - target_centroid)
    u, _, vt = np.linalg.svd(covariance)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rotation, target_centroid - rotation @ source_centroid


def estimate_pose(
    prev: PointCloud,
    cur: PointCloud,
    params: Optional[ProjectionParams] = None,
    kappa: float = DEFAULT_KAPPA,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    trim_ratio: float = DEFAULT_TRIM_RATIO,
    min_pairs: int = DEFAULT_MIN_PAIRS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> Pose:
    """
    ICP punto a punto recortado entre los puntos clave de dos nubes.

    Args:
        prev: Nube del frame anterior (normalmente la reconstrucción)
        cur: Nube del frame actual
        params: Geometría usada para detectar los puntos clave
        kappa: Umbral de discontinuidad (m)
        max_iterations: Iteraciones máximas
        trim_ratio: Fracción de correspondencias conservadas (las más cercanas)
        min_pairs: Correspondencias mínimas
        tolerance: Mejora relativa mínima del error medio para seguir iterando

    Returns:
        Pose que lleva prev a cur

    Raises:
        FewKeypointsError: Si hay menos de min_pairs correspondencias
        NonConvergentError: Si el error medio diverge
    """
    params = params or ProjectionParams()
    source = extract_keypoints(prev, params, kappa)
    target = extract_keypoints(cur, params, kappa)
    keep = int(np.ceil(trim_ratio * len(source)))
    if keep < min_pairs or len(target) < min_pairs:
        raise FewKeypointsError(
            f"Correspondencias insuficientes: {min(keep, len(target))} < {min_pairs}"
        )

    tree = cKDTree(target)
    rotation, translation = np.eye(3), np.zeros(3)
    first_error: Optional[float] = None
    previous_error = np.inf

    for iteration in range(max_iterations):
        moved = source @ rotation.T + translation
        distances, indices = tree.query(moved)
        order = np.argsort(distances, kind="stable")[:keep]
        error = float(np.mean(distances[order]))

        if not np.isfinite(error):
            raise NonConvergentError("Error medio no finito en el ICP")
        if first_error is None:
            first_error = error
        elif error > DIVERGENCE_FACTOR * max(first_error, 1e-12):
            raise NonConvergentError(
                f"El ICP diverge: error medio {error:.4f} m frente a {first_error:.4f} m inicial"
            )
        if np.isfinite(previous_error) and previous_error - error <= tolerance * previous_error:
            break

        rotation, translation = _kabsch(source[order], target[indices[order]])
        previous_error = error

    logger.debug(
        f"ICP: {len(source)}/{len(target)} puntos clave, {iteration + 1} iteraciones, "
        f"error medio {error:.4f} m"
    )
    return Pose(rotation, translation)


def predict_inter_image(prev_recon: PointCloud, pose: Pose, params: ProjectionParams) -> RangeImage:
    """Imagen predicha: reconstrucción anterior transformada y reproyectada."""
    if len(prev_recon) == 0:
        return RangeImage.empty(params)
    return project(PointCloud(pose.transform(prev_recon.points)), params)


def inter_residual(cur: RangeImage, predicted: RangeImage) -> ResidualImage:
    """
    Residuo inter: cur - predicho donde ambos están ocupados y el valor en
    bruto donde sólo cur lo está.
    """
    current = cur.values.astype(np.float64)
    prediction = np.where(predicted.mask, predicted.values.astype(np.float64), 0.0)
    values = np.where(cur.mask, current - prediction, 0.0)
    return ResidualImage(values, cur.mask, PredictionMode.INTER)


def inter_predict(
    prev_recon: PointCloud, pose: Pose, params: ProjectionParams, cur: RangeImage
) -> ResidualImage:
    """
    Predicción inter de la imagen actual.

    Args:
        prev_recon: Reconstrucción (del lado del decodificador) del frame anterior
        pose: Transformación del frame anterior al actual
        params: Geometría de proyección
        cur: Imagen actual

    Returns:
        ResidualImage en modo INTER
    """
    return inter_residual(cur, predict_inter_image(prev_recon, pose, params))


def inter_reconstruct(residual: ResidualImage, predicted: RangeImage, params: ProjectionParams) -> RangeImage:
    """Suma la predicción al residuo (recortado igual que la reconstrucción intra)."""
    prediction = np.where(predicted.mask, predicted.values.astype(np.float64), 0.0)
    return to_range_image(residual.values + prediction, residual.mask, params)


# Fuentes de pose: (índice de frame, reconstrucción anterior, nube actual) -> Pose o None
PoseSource = Callable[[int, PointCloud, PointCloud], Optional[Pose]]


class IcpPoseSource:
    """Pose estimada con ICP; None si la estimación falla."""

    def __init__(
        self,
        params: ProjectionParams,
        kappa: float = DEFAULT_KAPPA,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        trim_ratio: float = DEFAULT_TRIM_RATIO,
        min_pairs: int = DEFAULT_MIN_PAIRS,
        tolerance: float = DEFAULT_TOLERANCE,
    ):
        self.params = params
        self.kappa = kappa
        self.max_iterations = max_iterations
        self.trim_ratio = trim_ratio
        self.min_pairs = min_pairs
        self.tolerance = tolerance

    def __call__(self, frame_index: int, prev_recon: PointCloud, cur_cloud: PointCloud) -> Optional[Pose]:
        try:
            return estimate_pose(
                prev_recon, cur_cloud, self.params, self.kappa,
                self.max_iterations, self.trim_ratio, self.min_pairs, self.tolerance,
            )
        except PoseEstimationError as e:
            logger.info(f"Frame {frame_index}: estimación de pose fallida ({e}), se usa intra")
            return None


class FilePoseSource:
    """Poses externas, una por frame (p. ej. de una IMU)."""

    def __init__(self, poses: Sequence[Pose]):
        self.poses = list(poses)

    @classmethod
    def from_file(cls, path: str) -> "FilePoseSource":
        return cls(load_pose_file(path))

    def __call__(self, frame_index: int, prev_recon: PointCloud, cur_cloud: PointCloud) -> Optional[Pose]:
        if frame_index >= len(self.poses):
            logger.warning(f"Sin pose en el archivo para el frame {frame_index}")
            return None
        return self.poses[frame_index]


class IdentityPoseSource:
    """Sensor estático."""

    def __call__(self, frame_index: int, prev_recon: PointCloud, cur_cloud: PointCloud) -> Optional[Pose]:
        return Pose.identity()


def build_pose_source(
    kind: str,
    params: ProjectionParams,
    pose_file: Optional[str] = None,
    **icp_options: Union[int, float],
) -> PoseSource:
    """
    Crea la fuente de pose configurada.

    Args:
        kind: "icp", "file" o "none"
        params: Geometría de proyección
        pose_file: Ruta del archivo de poses (kind == "file")
        icp_options: Parámetros de IcpPoseSource

    Raises:
        PoseEstimationError: Si el tipo no es válido o falta el archivo
    """
    if kind == "icp":
        return IcpPoseSource(params, **icp_options)
    if kind == "file":
        if not pose_file:
            raise PoseEstimationError("La fuente de pose 'file' requiere un archivo")
        return FilePoseSource.from_file(pose_file)
    if kind == "none":
        return IdentityPoseSource()
    raise PoseEstimationError(f"Fuente de pose no reconocida: {kind}")


def load_pose_file(path: str) -> List[Pose]:
    """
    Carga un archivo de poses: una línea por frame con 12 valores separados
    por espacios (R por filas y después t). Las líneas vacías o que empiezan
    por '#' se ignoran.

    Raises:
        PoseFileError: Con el número de línea si hay un error de formato
    """
    if not os.path.exists(path):
        raise PoseFileError(f"Archivo de poses no encontrado: {path}")
    poses: List[Pose] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values = [float(v) for v in line.split()]
            except ValueError:
                raise PoseFileError(f"{path}:{line_number}: valor no numérico")
            if len(values) != 12:
                raise PoseFileError(f"{path}:{line_number}: se esperaban 12 valores, hay {len(values)}")
            try:
                poses.append(Pose.nearest(np.reshape(values[:9], (3, 3)), values[9:]))
            except (PoseEstimationError, np.linalg.LinAlgError) as e:
                raise PoseFileError(f"{path}:{line_number}: {e}")
    logger.info(f"{len(poses)} poses cargadas desde {path}")
    return poses


def save_pose_file(poses: Sequence[Pose], path: str) -> None:
    """Escribe poses en el formato de load_pose_file."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for pose in poses:
            values = np.concatenate([pose.rotation.ravel(), pose.translation])
            f.write(" ".join(repr(float(v)) for v in values) + "\n")


class ModeDecision(NamedTuple):
    """Resultado de select_mode."""
    mode: PredictionMode
    residual: ResidualImage
    side_info: Union[IntraSideInfo, Pose]
    predicted: Optional[RangeImage] = None


def select_mode(
    cur: RangeImage,
    prev_recon: Optional[PointCloud],
    pose_source: PoseSource,
    frame_index: int = 0,
    cur_cloud: Optional[PointCloud] = None,
    t_key: float = DEFAULT_T_KEY,
    tau: float = DEFAULT_TAU,
    g_min: float = DEFAULT_G_MIN,
) -> ModeDecision:
    """
    Decide entre predicción intra e inter.

    Es intra si no hay frame previo, si la pose no está disponible o si el
    residuo inter medio en valor absoluto sobre los píxeles ocupados en
    ambas imágenes supera t_key.

    Args:
        cur: Imagen actual
        prev_recon: Reconstrucción del frame anterior (None en el primer frame)
        pose_source: Fuente de pose
        frame_index: Índice del frame en la secuencia
        cur_cloud: Nube original del frame actual (por defecto, back_project(cur))
        t_key: Umbral de trama clave (m)
        tau: Cuota del bin dominante para intra
        g_min: Gradiente mínimo para intra

    Returns:
        ModeDecision; en modo inter la pose ya está redondeada a float32
    """
    def intra() -> ModeDecision:
        residual, side = intra_predict(cur, tau=tau, g_min=g_min)
        return ModeDecision(PredictionMode.INTRA, residual, side)

    if prev_recon is None or len(prev_recon) == 0:
        return intra()

    pose = pose_source(frame_index, prev_recon, cur_cloud if cur_cloud is not None else back_project(cur))
    if pose is None:
        return intra()

    pose = pose.quantized()
    predicted = predict_inter_image(prev_recon, pose, cur.params)
    residual = inter_residual(cur, predicted)
    co_masked = cur.mask & predicted.mask
    if not np.any(co_masked):
        logger.debug(f"Frame {frame_index}: sin píxeles comunes con la referencia, se usa intra")
        return intra()

    mean_abs = float(np.mean(np.abs(residual.values[co_masked])))
    if mean_abs > t_key:
        logger.info(f"Frame {frame_index}: residuo inter medio {mean_abs:.3f} m > {t_key} m, trama clave")
        return intra()
    return ModeDecision(PredictionMode.INTER, residual, pose, predicted)
