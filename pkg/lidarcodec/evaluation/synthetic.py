#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Synthetic
----------------
Generador de secuencias LiDAR sintéticas: un recinto con suelo, paredes y
cajas (algunas en movimiento) trazado con rayos desde un sensor que avanza
y gira. Incluye ruido de rango, pérdidas de retorno y las poses relativas
reales, y es determinista para una semilla.
"""

import math
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from lidarcodec.modules.pointcloud_io import PointCloud, ProjectionParams, bin_directions
from lidarcodec.modules.pose_estimation import Pose

logger = logging.getLogger("lidarcodec.synthetic")

SOURCE_PREFIX = "synthetic:"


class EvaluationError(Exception):
    """Excepción específica para errores del arnés de evaluación."""
    pass


@dataclass(frozen=True)
class Box:
    """Caja alineada con los ejes apoyada en el suelo."""
    center: Tuple[float, float]
    size: Tuple[float, float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)

    def bounds(self, frame: int) -> Tuple[np.ndarray, np.ndarray]:
        cx = self.center[0] + self.velocity[0] * frame
        cy = self.center[1] + self.velocity[1] * frame
        half = np.array([self.size[0] / 2.0, self.size[1] / 2.0])
        low = np.array([cx - half[0], cy - half[1], 0.0])
        high = np.array([cx + half[0], cy + half[1], self.size[2]])
        return low, high


@dataclass(frozen=True)
class SceneSettings:
    """
    Parámetros de la escena.

    Attributes:
        half_length: Semilongitud del recinto en x (m)
        half_width: Semianchura del recinto en y (m)
        sensor_height: Altura del sensor sobre el suelo (m)
        n_boxes: Número de cajas
        moving_fraction: Fracción de cajas en movimiento
        speed: Avance del sensor por frame (m)
        yaw_rate: Giro del sensor por frame (grados)
        noise: Desviación típica del ruido de rango (m)
        dropout: Probabilidad de perder un retorno
        jitter: Desplazamiento angular del rayo dentro de su bin (fracción del bin)
    """
    half_length: float = 60.0
    half_width: float = 25.0
    sensor_height: float = 1.73
    n_boxes: int = 14
    moving_fraction: float = 0.3
    speed: float = 0.5
    yaw_rate: float = 0.5
    noise: float = 0.01
    dropout: float = 0.02
    jitter: float = 0.3


def _yaw(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class SyntheticSequence:
    """
    Secuencia sintética de n_frames nubes.

    Ejemplo:
    ```
    sequence = SyntheticSequence(ProjectionParams(), 10, seed=0)
    for cloud in sequence:
        ...
    ```
    """

    def __init__(
        self,
        params: ProjectionParams,
        n_frames: int,
        seed: int = 0,
        settings: Optional[SceneSettings] = None,
    ):
        if n_frames < 1:
            raise EvaluationError(f"La secuencia necesita al menos un frame: {n_frames}")
        self.params = params
        self.n_frames = n_frames
        self.seed = seed
        self.settings = settings or SceneSettings()
        self.boxes = self._place_boxes(np.random.default_rng(seed))
        logger.debug(f"Escena sintética: {len(self.boxes)} cajas, {n_frames} frames, semilla {seed}")

    def _place_boxes(self, rng: np.random.Generator) -> List[Box]:
        s = self.settings
        boxes: List[Box] = []
        while len(boxes) < s.n_boxes:
            x = rng.uniform(-s.half_length + 4.0, s.half_length - 4.0)
            y = rng.uniform(-s.half_width + 3.0, s.half_width - 3.0)
            # Fuera del pasillo central que recorre el sensor
            if abs(y) < 3.5:
                continue
            size = (rng.uniform(1.0, 4.5), rng.uniform(1.0, 4.5), rng.uniform(1.0, 3.5))
            velocity = (0.0, 0.0)
            if rng.random() < s.moving_fraction:
                velocity = (rng.uniform(-0.3, 0.3), 0.0)
            boxes.append(Box((x, y), size, velocity))
        return boxes

    def sensor_pose(self, frame: int) -> Tuple[np.ndarray, np.ndarray]:
        """Rotación y posición del sensor en el mundo en un frame."""
        s = self.settings
        yaw = math.radians(s.yaw_rate) * frame
        # Trayectoria integrada con el rumbo del frame anterior
        position = np.array([0.0, 0.0, s.sensor_height])
        for k in range(frame):
            heading = math.radians(s.yaw_rate) * k
            position[0] += s.speed * math.cos(heading)
            position[1] += s.speed * math.sin(heading)
        return _yaw(yaw), position

    def relative_pose(self, frame: int) -> Pose:
        """Pose que lleva las coordenadas del sensor del frame anterior al actual."""
        if frame == 0:
            return Pose.identity()
        r_prev, p_prev = self.sensor_pose(frame - 1)
        r_cur, p_cur = self.sensor_pose(frame)
        return Pose.nearest(r_cur.T @ r_prev, r_cur.T @ (p_prev - p_cur))

    def poses(self) -> List[Pose]:
        """Pose relativa real de cada frame (identidad en el primero)."""
        return [self.relative_pose(k) for k in range(self.n_frames)]

    def _ray_directions(self, rng: np.random.Generator) -> np.ndarray:
        params = self.params
        jitter = self.settings.jitter
        if jitter <= 0:
            return bin_directions(params).reshape(-1, 3)
        row_step = params.row_height
        if params.row_elevations is not None and params.rows > 1:
            row_step = float(np.min(np.abs(np.diff(params.row_centers()))))
        shape = params.shape
        elevation = params.row_centers()[:, None] + rng.uniform(-0.5, 0.5, shape) * jitter * row_step
        azimuth = params.col_centers()[None, :] + rng.uniform(-0.5, 0.5, shape) * jitter * params.col_width
        cos_el = np.cos(elevation)
        return np.stack(
            [cos_el * np.cos(azimuth), cos_el * np.sin(azimuth), np.sin(elevation) * np.ones(shape)],
            axis=-1,
        ).reshape(-1, 3)

    def _cast(self, origin: np.ndarray, directions: np.ndarray, frame: int) -> np.ndarray:
        s = self.settings
        hit = np.full(len(directions), np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            # Suelo z = 0
            t = -origin[2] / directions[:, 2]
            hit = np.where((t > 0) & (t < hit), t, hit)
            # Paredes del recinto
            for axis, bound in ((0, s.half_length), (0, -s.half_length), (1, s.half_width), (1, -s.half_width)):
                t = (bound - origin[axis]) / directions[:, axis]
                hit = np.where((t > 0) & (t < hit), t, hit)
            # Cajas por el método de las losas
            for box in self.boxes:
                low, high = box.bounds(frame)
                t1 = (low - origin) / directions
                t2 = (high - origin) / directions
                near = np.nanmax(np.minimum(t1, t2), axis=1)
                far = np.nanmin(np.maximum(t1, t2), axis=1)
                inside = (near <= far) & (near > 0)
                hit = np.where(inside & (near < hit), near, hit)
        return hit

    def frame(self, index: int) -> PointCloud:
        """Nube del frame index en coordenadas del sensor."""
        if not 0 <= index < self.n_frames:
            raise EvaluationError(f"Frame fuera de la secuencia: {index}")
        rng = np.random.default_rng((self.seed, index))
        directions = self._ray_directions(rng)
        rotation, position = self.sensor_pose(index)
        ranges = self._cast(position, directions @ rotation.T, index)

        s = self.settings
        if s.noise > 0:
            ranges = ranges + rng.normal(0.0, s.noise, ranges.shape)
        keep = np.isfinite(ranges) & (ranges > 0.5) & (ranges < self.params.range_max * 0.98)
        if s.dropout > 0:
            keep &= rng.random(ranges.shape) >= s.dropout
        return PointCloud(directions[keep] * ranges[keep, None])

    def __len__(self) -> int:
        return self.n_frames

    def __iter__(self) -> Iterator[PointCloud]:
        for index in range(self.n_frames):
            yield self.frame(index)


def static_settings(noise: float = 0.0, dropout: float = 0.0) -> SceneSettings:
    """Escena sin movimiento del sensor ni de las cajas."""
    return SceneSettings(speed=0.0, yaw_rate=0.0, moving_fraction=0.0, noise=noise, dropout=dropout, jitter=0.0)


def parse_synthetic_source(source: str) -> Optional[int]:
    """Número de frames de una fuente `synthetic:N`, o None si no es sintética."""
    if not source.startswith(SOURCE_PREFIX):
        return None
    try:
        n = int(source[len(SOURCE_PREFIX):])
    except ValueError:
        raise EvaluationError(f"Fuente sintética no válida: {source}")
    if n < 1:
        raise EvaluationError(f"La fuente sintética necesita al menos un frame: {source}")
    return n
