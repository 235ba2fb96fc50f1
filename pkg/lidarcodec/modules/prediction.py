#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Prediction
-----------------
Tipos comunes de la predicción y predicción intra por gradientes: cada
macrobloque de 16x16 se divide en quadtree (mínimo 4x4) y cada hoja se
codifica en delta a lo largo de la dirección ortogonal al gradiente
dominante.
"""

import math
import logging
from enum import IntEnum
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from lidarcodec.modules.pointcloud_io import ProjectionParams, RangeImage

logger = logging.getLogger("lidarcodec.prediction")

MACROBLOCK = 16
MIN_LEAF = 4
LEAF_SIZES = (16, 8, 4)

DEFAULT_TAU = 0.6
DEFAULT_G_MIN = 0.05

# Rango mínimo de un píxel ocupado tras una reconstrucción con pérdidas
MIN_RANGE = 1e-3


class PredictionError(Exception):
    """Excepción específica para errores de predicción."""
    pass


class MalformedSideInfoError(PredictionError):
    """Las hojas del quadtree no teselan los macrobloques."""
    pass


class Direction(IntEnum):
    """Dirección de codificación delta (código de 2 bits)."""
    HORIZONTAL = 0
    VERTICAL = 1
    DIAGONAL_DOWN = 2
    DIAGONAL_UP = 3


class PredictionMode(IntEnum):
    INTRA = 0
    INTER = 1


# Bin de orientación del gradiente (0, 45, 90, 135 grados) -> dirección ortogonal
_ORTHOGONAL = (
    Direction.VERTICAL,
    Direction.DIAGONAL_UP,
    Direction.HORIZONTAL,
    Direction.DIAGONAL_DOWN,
)


@dataclass(frozen=True)
class QuadLeaf:
    """Hoja del quadtree en coordenadas absolutas de píxel."""
    row: int
    col: int
    size: int
    direction: Direction


@dataclass(frozen=True)
class IntraSideInfo:
    """
    Quadtrees de todos los macrobloques.

    Las hojas se guardan en orden raster de macrobloques y, dentro de cada
    uno, en recorrido en profundidad (superior izquierda, superior derecha,
    inferior izquierda, inferior derecha).
    """
    mb_rows: int
    mb_cols: int
    leaves: Tuple[QuadLeaf, ...]

    @property
    def padded_shape(self) -> Tuple[int, int]:
        return self.mb_rows * MACROBLOCK, self.mb_cols * MACROBLOCK

    def validate(self) -> None:
        """
        Comprueba que las hojas teselan exactamente todos los macrobloques.

        Raises:
            MalformedSideInfoError: Si hay huecos, solapes o tamaños no válidos
        """
        height, width = self.padded_shape
        coverage = np.zeros((height, width), dtype=np.int32)
        for leaf in self.leaves:
            if leaf.size not in LEAF_SIZES or leaf.row % leaf.size or leaf.col % leaf.size:
                raise MalformedSideInfoError(f"Hoja no válida: {leaf}")
            if leaf.row + leaf.size > height or leaf.col + leaf.size > width:
                raise MalformedSideInfoError(f"Hoja fuera de la imagen: {leaf}")
            coverage[leaf.row:leaf.row + leaf.size, leaf.col:leaf.col + leaf.size] += 1
        if not np.all(coverage == 1):
            raise MalformedSideInfoError("Las hojas del quadtree no teselan los macrobloques")

    def raw_bit_count(self) -> int:
        """Bits antes de la codificación entrópica (banderas de división + 2 bits por hoja)."""
        split_flags = 0
        for leaf in self.leaves:
            if leaf.size > MIN_LEAF:
                split_flags += 1  # bandera "no dividir" de la propia hoja
        internal = 0
        for size in (MACROBLOCK, MACROBLOCK // 2):
            covered = sum(leaf.size * leaf.size for leaf in self.leaves if leaf.size < size)
            internal += covered // (size * size)
        return split_flags + internal + 2 * len(self.leaves)


@dataclass(frozen=True, eq=False)
class ResidualImage:
    """Residuo con signo (metros, float64); cero fuera de la máscara."""
    values: np.ndarray
    mask: np.ndarray
    mode: PredictionMode

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape:
            raise PredictionError("Residuo y máscara con dimensiones distintas")
        if np.any(values[~mask] != 0):
            raise PredictionError("Residuo distinto de cero fuera de la máscara")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def with_values(self, values: np.ndarray) -> "ResidualImage":
        """Mismo modo y máscara con otros valores (se anulan fuera de la máscara)."""
        return ResidualImage(np.where(self.mask, values, 0.0), self.mask, self.mode)


def pixel_gradients(image: RangeImage) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradiente por píxel (dI/du por filas, dI/dv por columnas).

    Diferencias centrales donde ambos vecinos están ocupados, laterales en el
    borde de la imagen y cero cuando falta un vecino necesario.

    Returns:
        (gu, gv) arrays float64 con la forma de la imagen
    """
    values = image.values.astype(np.float64)
    mask = image.mask
    return _axis_gradient(values, mask, axis=0), _axis_gradient(values, mask, axis=1)


def _axis_gradient(values: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    v = np.moveaxis(values, axis, 0)
    m = np.moveaxis(mask, axis, 0)
    g = np.zeros_like(v)
    n = v.shape[0]
    if n >= 3:
        ok = m[1:-1] & m[:-2] & m[2:]
        g[1:-1] = np.where(ok, (v[2:] - v[:-2]) / 2.0, 0.0)
    if n >= 2:
        g[0] = np.where(m[0] & m[1], v[1] - v[0], 0.0)
        g[-1] = np.where(m[-1] & m[-2], v[-1] - v[-2], 0.0)
    return np.moveaxis(g, 0, axis)


def _orientation_bins(gu: np.ndarray, gv: np.ndarray, g_min: float) -> Tuple[np.ndarray, np.ndarray]:
    """Bin de orientación (0..3, -1 si el gradiente es débil) y magnitud."""
    magnitude = np.hypot(gu, gv)
    theta = np.mod(np.arctan2(gu, gv), math.pi)
    bins = np.floor((theta + math.pi / 8.0) / (math.pi / 4.0)).astype(np.int64) % 4
    return np.where(magnitude > g_min, bins, -1), magnitude


def _direction_from_weights(weights: np.ndarray, tau: float) -> Optional[Direction]:
    total = float(np.sum(weights))
    if total <= 0.0:
        return None
    top = int(np.argmax(weights))
    if weights[top] / total >= tau:
        return _ORTHOGONAL[top]
    return None


def dominant_direction(
    gu: np.ndarray, gv: np.ndarray, g_min: float = DEFAULT_G_MIN, tau: float = DEFAULT_TAU
) -> Optional[Direction]:
    """
    Dirección de codificación delta de un bloque de gradientes.

    Las orientaciones (módulo pi) de los píxeles con magnitud > g_min se
    agrupan en cuatro bins centrados en 0, 45, 90 y 135 grados; si el bin
    dominante acumula al menos tau del peso (magnitud) se devuelve la
    dirección ortogonal a esa orientación.

    Returns:
        Direction o None si no hay dominante (o el bloque es plano)
    """
    bins, magnitude = _orientation_bins(np.asarray(gu, float), np.asarray(gv, float), g_min)
    strong = bins >= 0
    weights = np.bincount(bins[strong], weights=magnitude[strong], minlength=4)
    return _direction_from_weights(weights, tau)


class _BinIntegrals:
    """Imágenes integrales del peso por bin para clasificar bloques en O(1)."""

    def __init__(self, gu: np.ndarray, gv: np.ndarray, g_min: float):
        bins, magnitude = _orientation_bins(gu, gv, g_min)
        planes = np.zeros((5,) + gu.shape, dtype=np.float64)
        for b in range(4):
            planes[b] = np.where(bins == b, magnitude, 0.0)
        planes[4] = bins >= 0
        self.table = np.zeros((5, gu.shape[0] + 1, gu.shape[1] + 1), dtype=np.float64)
        self.table[:, 1:, 1:] = planes.cumsum(axis=1).cumsum(axis=2)

    def block(self, row: int, col: int, size: int) -> np.ndarray:
        t = self.table
        r2, c2 = row + size, col + size
        return t[:, r2, c2] - t[:, row, c2] - t[:, r2, col] + t[:, row, col]


def _pad_image(image: RangeImage) -> Tuple[np.ndarray, np.ndarray, int, int]:
    rows, cols = image.shape
    mb_rows = -(-rows // MACROBLOCK)
    mb_cols = -(-cols // MACROBLOCK)
    values = np.zeros((mb_rows * MACROBLOCK, mb_cols * MACROBLOCK), dtype=np.float64)
    mask = np.zeros(values.shape, dtype=bool)
    values[:rows, :cols] = image.values
    mask[:rows, :cols] = image.mask
    return values, mask, mb_rows, mb_cols


def _build_quadtree(
    integrals: _BinIntegrals, row: int, col: int, size: int, tau: float, leaves: List[QuadLeaf]
) -> None:
    weights = integrals.block(row, col, size)
    if weights[4] <= 0:
        # Bloque plano
        leaves.append(QuadLeaf(row, col, size, Direction.HORIZONTAL))
        return
    direction = _direction_from_weights(weights[:4], tau)
    if direction is not None:
        leaves.append(QuadLeaf(row, col, size, direction))
        return
    if size == MIN_LEAF:
        leaves.append(QuadLeaf(row, col, size, Direction.HORIZONTAL))
        return
    half = size // 2
    for dr, dc in ((0, 0), (0, half), (half, 0), (half, half)):
        _build_quadtree(integrals, row + dr, col + dc, half, tau, leaves)


@lru_cache(maxsize=None)
def _scan_table(size: int, direction: Direction) -> Tuple[np.ndarray, ...]:
    """
    Recorrido delta de una hoja: para cada píxel local su predecesor y su
    profundidad dentro de la línea de barrido.
    """
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    i, j = i.ravel(), j.ravel()
    if direction == Direction.HORIZONTAL:
        pi, pj, depth = i, j - 1, j
    elif direction == Direction.VERTICAL:
        pi, pj, depth = i - 1, j, i
    elif direction == Direction.DIAGONAL_DOWN:
        pi, pj, depth = i - 1, j - 1, np.minimum(i, j)
    else:
        pi, pj, depth = i + 1, j - 1, np.minimum(size - 1 - i, j)
    has_pred = depth > 0
    return i, j, np.where(has_pred, pi, 0), np.where(has_pred, pj, 0), has_pred, depth


class ScanGraph:
    """Predecesor global de cada píxel y niveles de profundidad para las sumas prefijo."""

    def __init__(self, side: IntraSideInfo):
        side.validate()
        height, width = side.padded_shape
        self.shape = (height, width)
        self.pred = np.full(height * width, -1, dtype=np.int64)
        depth = np.zeros(height * width, dtype=np.int64)

        groups: Dict[Tuple[int, Direction], List[Tuple[int, int]]] = {}
        for leaf in side.leaves:
            groups.setdefault((leaf.size, leaf.direction), []).append((leaf.row, leaf.col))

        for (size, direction), origins in groups.items():
            li, lj, pi, pj, has_pred, local_depth = _scan_table(size, direction)
            origin = np.asarray(origins, dtype=np.int64)
            r0, c0 = origin[:, 0:1], origin[:, 1:2]
            target = (r0 + li) * width + (c0 + lj)
            source = (r0 + pi) * width + (c0 + pj)
            self.pred[target] = np.where(has_pred, source, -1)
            depth[target] = local_depth

        order = np.argsort(depth, kind="stable")
        counts = np.bincount(depth, minlength=MACROBLOCK)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        self.levels = [order[bounds[k]:bounds[k + 1]] for k in range(1, len(counts))]
        self.levels = [level for level in self.levels if level.size]

    def forward(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Residuo delta; los píxeles vacíos heredan el valor previo de su línea."""
        x = values.ravel()
        m = mask.ravel()
        filled = np.where(m, x, 0.0)
        for idx in self.levels:
            filled[idx] = np.where(m[idx], x[idx], filled[self.pred[idx]])
        residual = filled.copy()
        has_pred = self.pred >= 0
        residual[has_pred] = filled[has_pred] - filled[self.pred[has_pred]]
        residual[~m] = 0.0
        return residual.reshape(self.shape)

    def inverse(self, residual: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Sumas prefijo a lo largo de cada línea de barrido."""
        r = residual.ravel()
        filled = r.copy()
        for idx in self.levels:
            filled[idx] = filled[self.pred[idx]] + r[idx]
        return np.where(mask.ravel(), filled, 0.0).reshape(self.shape)


def intra_predict(
    image: RangeImage, tau: float = DEFAULT_TAU, g_min: float = DEFAULT_G_MIN
) -> Tuple[ResidualImage, IntraSideInfo]:
    """
    Predicción intra por gradientes.

    Args:
        image: Imagen de rango (se rellena hasta múltiplos de 16 con píxeles vacíos)
        tau: Cuota mínima del bin dominante
        g_min: Magnitud mínima de gradiente (m/píxel)

    Returns:
        (residuo con las dimensiones de la imagen, quadtrees)
    """
    values, mask, mb_rows, mb_cols = _pad_image(image)
    gu = np.zeros(values.shape)
    gv = np.zeros(values.shape)
    rows, cols = image.shape
    gu[:rows, :cols], gv[:rows, :cols] = pixel_gradients(image)
    integrals = _BinIntegrals(gu, gv, g_min)

    leaves: List[QuadLeaf] = []
    for mb_r in range(mb_rows):
        for mb_c in range(mb_cols):
            _build_quadtree(integrals, mb_r * MACROBLOCK, mb_c * MACROBLOCK, MACROBLOCK, tau, leaves)
    side = IntraSideInfo(mb_rows, mb_cols, tuple(leaves))

    residual = ScanGraph(side).forward(values, mask)
    rows, cols = image.shape
    logger.debug(f"Predicción intra: {len(leaves)} hojas en {mb_rows * mb_cols} macrobloques")
    return ResidualImage(residual[:rows, :cols], image.mask, PredictionMode.INTRA), side


def reconstruct_values(residual: ResidualImage, side: IntraSideInfo) -> np.ndarray:
    """
    Inversa de la codificación delta sin recorte (float64).

    Raises:
        MalformedSideInfoError: Si el quadtree no cubre la imagen
    """
    rows, cols = residual.values.shape
    height, width = side.padded_shape
    if height < rows or width < cols or height - rows >= MACROBLOCK or width - cols >= MACROBLOCK:
        raise MalformedSideInfoError(
            f"Quadtree de {side.mb_rows}x{side.mb_cols} macrobloques para una imagen {rows}x{cols}"
        )
    r = np.zeros((height, width), dtype=np.float64)
    m = np.zeros((height, width), dtype=bool)
    r[:rows, :cols] = residual.values
    m[:rows, :cols] = residual.mask
    return ScanGraph(side).inverse(r, m)[:rows, :cols]


def to_range_image(values: np.ndarray, mask: np.ndarray, params: ProjectionParams) -> RangeImage:
    """Imagen de rango a partir de valores reconstruidos, recortados a [MIN_RANGE, range_max]."""
    clipped = np.clip(values, MIN_RANGE, params.range_max).astype(np.float32)
    clipped = np.minimum(clipped, np.float32(params.range_max))
    return RangeImage(np.where(mask, clipped, np.float32(0.0)), mask, params)


def intra_reconstruct(residual: ResidualImage, side: IntraSideInfo, params: ProjectionParams) -> RangeImage:
    """Imagen de rango reconstruida a partir del residuo intra y los quadtrees."""
    return to_range_image(reconstruct_values(residual, side), residual.mask, params)
