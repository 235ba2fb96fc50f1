#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo PointCloudIO
-------------------
Carga de nubes de puntos LiDAR (kitti-bin, pcd/ply ASCII), geometría de
proyección y conversión entre nubes e imágenes de rango.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

logger = logging.getLogger("lidarcodec.pointcloud_io")

SUPPORTED_FORMATS = ("kitti-bin", "pcd-ascii", "ply-ascii")
_EXTENSION_FORMATS = {".bin": "kitti-bin", ".pcd": "pcd-ascii", ".ply": "ply-ascii"}


class PointCloudError(Exception):
    """Excepción específica para errores de lectura o geometría de nubes de puntos."""
    pass


class TruncatedRecordError(PointCloudError):
    """El buffer termina a mitad de un registro."""
    pass


class UnknownFormatError(PointCloudError):
    """Formato de nube de puntos no soportado."""
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    Nube de puntos en el sistema del sensor (metros).

    Attributes:
        points: Array (N, 3) float64
        intensity: Intensidad por punto (opcional, el códec la ignora)
        rejected: Registros descartados al cargar por coordenadas no finitas
    """
    points: np.ndarray
    intensity: Optional[np.ndarray] = None
    rejected: int = 0

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise PointCloudError("La nube contiene coordenadas no finitas")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


@dataclass(frozen=True)
class ProjectionParams:
    """
    Geometría de la imagen de rango.

    Las filas cubren [elevation_min, elevation_max] de arriba (fila 0, mayor
    elevación) a abajo; las columnas cubren el acimut [-pi, pi).
    Con row_elevations se usa una tabla por fila (radianes, fila 0 primero)
    en lugar de filas uniformes.
    """
    rows: int = 64
    cols: int = 2048
    elevation_min: float = math.radians(-24.8)
    elevation_max: float = math.radians(2.0)
    range_max: float = 120.0
    row_elevations: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise PointCloudError(f"Dimensiones de proyección no válidas: {self.rows}x{self.cols}")
        if not self.elevation_min < self.elevation_max:
            raise PointCloudError("elevation_min debe ser menor que elevation_max")
        if not self.range_max > 0:
            raise PointCloudError("range_max debe ser positivo")
        if self.row_elevations is not None:
            table = tuple(float(v) for v in self.row_elevations)
            if len(table) != self.rows:
                raise PointCloudError(
                    f"La tabla de elevaciones tiene {len(table)} filas, se esperaban {self.rows}"
                )
            if any(a <= b for a, b in zip(table, table[1:])):
                raise PointCloudError("La tabla de elevaciones debe ser estrictamente decreciente")
            object.__setattr__(self, "row_elevations", table)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def row_height(self) -> float:
        return (self.elevation_max - self.elevation_min) / self.rows

    @property
    def col_width(self) -> float:
        return 2.0 * math.pi / self.cols

    def row_centers(self) -> np.ndarray:
        """Elevación (radianes) del centro de cada fila."""
        if self.row_elevations is not None:
            return np.asarray(self.row_elevations, dtype=np.float64)
        return self.elevation_max - (np.arange(self.rows) + 0.5) * self.row_height

    def col_centers(self) -> np.ndarray:
        """Acimut (radianes) del centro de cada columna."""
        return -math.pi + (np.arange(self.cols) + 0.5) * self.col_width

    def row_index(self, elevation: np.ndarray) -> np.ndarray:
        """Fila de cada elevación; -1 fuera del campo de visión."""
        elevation = np.asarray(elevation, dtype=np.float64)
        if self.row_elevations is not None:
            centers = self.row_centers()
            # Fronteras en el punto medio entre centros consecutivos
            edges = np.concatenate((
                [self.elevation_max],
                (centers[:-1] + centers[1:]) / 2.0,
                [self.elevation_min],
            ))
            rows = np.searchsorted(-edges, -elevation, side="right") - 1
            rows = np.where(elevation == self.elevation_min, self.rows - 1, rows)
        else:
            rows = np.floor((self.elevation_max - elevation) / self.row_height).astype(np.int64)
            rows = np.where(elevation == self.elevation_min, self.rows - 1, rows)
        inside = (elevation >= self.elevation_min) & (elevation <= self.elevation_max)
        return np.where(inside, np.clip(rows, 0, self.rows - 1), -1).astype(np.int64)

    def col_index(self, azimuth: np.ndarray) -> np.ndarray:
        cols = np.floor((np.asarray(azimuth) + math.pi) / self.col_width).astype(np.int64)
        return np.mod(cols, self.cols)

    def half_angle(self) -> float:
        """Semiángulo máximo de un bin (radianes), cota de error de la reproyección."""
        if self.row_elevations is not None:
            edges = np.concatenate(([self.elevation_max], self.row_centers(), [self.elevation_min]))
            row_span = float(np.max(np.abs(np.diff(edges))))
        else:
            row_span = self.row_height / 2.0
        return math.hypot(row_span, self.col_width / 2.0)


@dataclass(frozen=True, eq=False)
class RangeImage:
    """
    Imagen de rango: valores float32 en metros (0 fuera de la máscara).

    Attributes:
        values: Array (rows, cols) float32
        mask: Ocupación (rows, cols) bool
        params: Geometría de la proyección
    """
    values: np.ndarray
    mask: np.ndarray
    params: ProjectionParams

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != self.params.shape or mask.shape != self.params.shape:
            raise PointCloudError(
                f"Dimensiones {values.shape}/{mask.shape} no coinciden con {self.params.shape}"
            )
        if np.any(values[~mask] != 0):
            raise PointCloudError("Píxeles fuera de la máscara con valor distinto de cero")
        masked = values[mask]
        if np.any(masked <= 0) or np.any(masked > np.float32(self.params.range_max)):
            raise PointCloudError("Valores enmascarados fuera de (0, range_max]")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.params.shape

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.mask))

    def equals(self, other: "RangeImage") -> bool:
        """Igualdad exacta de máscara y valores."""
        return (
            self.params == other.params
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def empty(cls, params: ProjectionParams) -> "RangeImage":
        return cls(np.zeros(params.shape, np.float32), np.zeros(params.shape, bool), params)


@dataclass(frozen=True)
class ProjectionStats:
    """Contadores de la proyección."""
    total: int
    landed: int
    out_of_fov: int
    out_of_range: int
    collisions: int


def load_point_cloud(data: bytes, fmt: str) -> PointCloud:
    """
    Decodifica una nube de puntos desde bytes.

    Args:
        data: Contenido del archivo
        fmt: Uno de "kitti-bin", "pcd-ascii", "ply-ascii"

    Returns:
        Nube con los puntos finitos; los registros no finitos se cuentan en `rejected`

    Raises:
        TruncatedRecordError: Si un registro está incompleto
        UnknownFormatError: Si el formato no está soportado
    """
    if fmt == "kitti-bin":
        if len(data) % 16 != 0:
            raise TruncatedRecordError(f"Tamaño kitti-bin no múltiplo de 16: {len(data)} bytes")
        records = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
        xyz, intensity = records[:, :3], records[:, 3]
    elif fmt == "pcd-ascii":
        xyz, intensity = _parse_pcd_ascii(data)
    elif fmt == "ply-ascii":
        xyz, intensity = _parse_ply_ascii(data)
    else:
        raise UnknownFormatError(f"Formato de nube de puntos no soportado: {fmt}")

    finite = np.all(np.isfinite(xyz), axis=1)
    rejected = int(xyz.shape[0] - np.count_nonzero(finite))
    if rejected:
        logger.warning(f"Descartados {rejected} registros con coordenadas no finitas")
    intensity_kept = None if intensity is None else intensity[finite]
    return PointCloud(xyz[finite], intensity_kept, rejected)


def load_point_cloud_file(path: str) -> PointCloud:
    """Lee una nube de un archivo deduciendo el formato por la extensión."""
    fmt = format_from_path(path)
    with open(path, "rb") as f:
        data = f.read()
    return load_point_cloud(data, fmt)


def format_from_path(path: str) -> str:
    suffix = path[path.rfind("."):].lower() if "." in path else ""
    if suffix not in _EXTENSION_FORMATS:
        raise UnknownFormatError(f"Extensión no reconocida: {path}")
    return _EXTENSION_FORMATS[suffix]


def dump_point_cloud(cloud: PointCloud, fmt: str) -> bytes:
    """
    Serializa una nube de puntos.

    Args:
        cloud: Nube a escribir
        fmt: "kitti-bin" (intensidad 0 si no hay) o "ply-ascii"

    Returns:
        Bytes del archivo
    """
    if fmt == "kitti-bin":
        records = np.zeros((len(cloud), 4), dtype="<f4")
        records[:, :3] = cloud.points
        if cloud.intensity is not None:
            records[:, 3] = cloud.intensity
        return records.tobytes()
    if fmt == "ply-ascii":
        header = (
            "ply\nformat ascii 1.0\n"
            f"element vertex {len(cloud)}\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
        )
        body = "".join(f"{x:.6f} {y:.6f} {z:.6f}\n" for x, y, z in cloud.points)
        return (header + body).encode("ascii")
    raise UnknownFormatError(f"Formato de escritura no soportado: {fmt}")


def _parse_table(lines, n_expected: Optional[int], columns: Dict[str, int]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    rows = [line.split() for line in lines if line.strip()]
    if n_expected is not None and len(rows) < n_expected:
        raise TruncatedRecordError(f"Se esperaban {n_expected} puntos y hay {len(rows)}")
    if n_expected is not None:
        rows = rows[:n_expected]
    width = max(columns.values()) + 1
    if any(len(r) < width for r in rows):
        raise TruncatedRecordError("Registro ASCII con menos campos que la cabecera")
    if not rows:
        return np.zeros((0, 3)), None
    try:
        table = np.array([[float(r[i]) for i in range(width)] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise PointCloudError(f"Valor numérico no válido: {e}")
    xyz = table[:, [columns["x"], columns["y"], columns["z"]]]
    intensity = table[:, columns["intensity"]] if "intensity" in columns else None
    return xyz, intensity


def _parse_pcd_ascii(data: bytes) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    lines = data.decode("ascii", errors="replace").splitlines()
    fields: Dict[str, int] = {}
    n_points: Optional[int] = None
    for i, line in enumerate(lines):
        parts = line.strip().split()
        if not parts or parts[0].startswith("#"):
            continue
        key = parts[0].upper()
        if key == "FIELDS":
            fields = {name.lower(): idx for idx, name in enumerate(parts[1:])}
        elif key == "POINTS":
            n_points = int(parts[1])
        elif key == "DATA":
            if len(parts) < 2 or parts[1].lower() != "ascii":
                raise UnknownFormatError("Solo se admite PCD con DATA ascii")
            if not {"x", "y", "z"} <= set(fields):
                raise PointCloudError("La cabecera PCD no declara x, y, z")
            columns = {k: v for k, v in fields.items() if k in ("x", "y", "z", "intensity")}
            return _parse_table(lines[i + 1:], n_points, columns)
    raise PointCloudError("Cabecera PCD sin línea DATA")


def _parse_ply_ascii(data: bytes) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    lines = data.decode("ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise UnknownFormatError("Falta la firma 'ply'")
    elements = []  # (nombre, cantidad, propiedades)
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.strip().split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise UnknownFormatError("Solo se admite PLY ascii")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            elements[-1][2].append(parts[-1].lower())
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if body_start is None:
        raise PointCloudError("Cabecera PLY sin end_header")

    offset = body_start
    for name, count, props in elements:
        if name == "vertex":
            if not {"x", "y", "z"} <= set(props):
                raise PointCloudError("El elemento vertex no declara x, y, z")
            columns = {p: idx for idx, p in enumerate(props) if p in ("x", "y", "z", "intensity")}
            return _parse_table(lines[offset:offset + count], count, columns)
        offset += count
    raise PointCloudError("El PLY no contiene elemento vertex")


def load_projection_file(path: str) -> ProjectionParams:
    """
    Lee un archivo clave=valor de proyección.

    Claves: rows, cols, elev_min_deg, elev_max_deg, range_max_m y
    opcionalmente row_table (ruta a un archivo con una elevación en grados
    por línea, fila superior primero).

    Raises:
        PointCloudError: Si falta una clave o un valor no es válido
    """
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PointCloudError(f"{path}:{number}: se esperaba clave=valor")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value

    try:
        table = None
        if "row_table" in values:
            with open(values["row_table"], "r", encoding="utf-8") as f:
                table = tuple(math.radians(float(v)) for v in f.read().split())
        return ProjectionParams(
            rows=int(values.get("rows", 64)),
            cols=int(values.get("cols", 2048)),
            elevation_min=math.radians(float(values.get("elev_min_deg", -24.8))),
            elevation_max=math.radians(float(values.get("elev_max_deg", 2.0))),
            range_max=float(values.get("range_max_m", 120.0)),
            row_elevations=table,
        )
    except (ValueError, OSError) as e:
        raise PointCloudError(f"Archivo de proyección no válido {path}: {e}")


def project_detailed(cloud: PointCloud, params: ProjectionParams) -> Tuple[RangeImage, np.ndarray, ProjectionStats]:
    """
    Proyecta una nube y devuelve además el índice del punto que ocupa cada píxel.

    Returns:
        (imagen, índices (rows, cols) con -1 en píxeles vacíos, contadores)
    """
    points = cloud.points
    n = points.shape[0]
    values = np.zeros(params.shape, np.float32)
    index_grid = np.full(params.shape, -1, dtype=np.int64)
    if n == 0:
        image = RangeImage(values, np.zeros(params.shape, bool), params)
        return image, index_grid, ProjectionStats(0, 0, 0, 0, 0)

    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    rng64 = np.sqrt(x * x + y * y + z * z)
    rng = rng64.astype(np.float32)
    elevation = np.arctan2(z, np.hypot(x, y))
    azimuth = np.arctan2(y, x)

    rows = params.row_index(elevation)
    in_fov = rows >= 0
    in_range = (rng > 0) & (rng <= np.float32(params.range_max))
    keep = in_fov & in_range

    cols = params.col_index(azimuth)
    pixel = rows * params.cols + cols
    candidates = np.flatnonzero(keep)

    # Más cercano gana: ordenar por píxel y luego por rango
    order = candidates[np.lexsort((rng[candidates], pixel[candidates]))]
    unique_pixels, first = np.unique(pixel[order], return_index=True)
    winners = order[first]

    values.reshape(-1)[unique_pixels] = rng[winners]
    index_grid.reshape(-1)[unique_pixels] = winners
    mask = np.zeros(params.shape, bool)
    mask.reshape(-1)[unique_pixels] = True

    stats = ProjectionStats(
        total=n,
        landed=int(unique_pixels.size),
        out_of_fov=int(np.count_nonzero(~in_fov)),
        out_of_range=int(np.count_nonzero(in_fov & ~in_range)),
        collisions=int(candidates.size - unique_pixels.size),
    )
    if stats.out_of_fov or stats.out_of_range:
        logger.debug(
            f"Proyección: {stats.out_of_fov} puntos fuera del FOV, "
            f"{stats.out_of_range} fuera de rango, {stats.collisions} colisiones"
        )
    return RangeImage(values, mask, params), index_grid, stats


def project(cloud: PointCloud, params: ProjectionParams) -> RangeImage:
    """
    Proyección esférica de una nube a imagen de rango.

    En colisiones se conserva el punto más cercano; los puntos fuera del
    campo de elevación o con rango mayor que range_max se descartan.
    """
    image, _, _ = project_detailed(cloud, params)
    return image


def bin_directions(params: ProjectionParams) -> np.ndarray:
    """Vectores unitarios (rows, cols, 3) de los centros de bin."""
    elevation = params.row_centers()[:, None]
    azimuth = params.col_centers()[None, :]
    cos_el = np.cos(elevation)
    return np.stack(
        np.broadcast_arrays(cos_el * np.cos(azimuth), cos_el * np.sin(azimuth), np.sin(elevation)),
        axis=-1,
    )


def back_project(image: RangeImage) -> PointCloud:
    """Un punto por píxel enmascarado, en la dirección del centro del bin."""
    directions = bin_directions(image.params)[image.mask]
    ranges = image.values[image.mask].astype(np.float64)
    return PointCloud(directions * ranges[:, None])
