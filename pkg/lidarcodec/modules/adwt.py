#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo ADWT
-----------
DWT de Haar ortonormal de 3 niveles sobre bloques de residuo de 64x64 y
asignación adaptativa de pasos de cuantificación por subbanda a partir de
la energía de cada subbanda.

Los coeficientes se guardan en disposición de Mallat: LL3 en la esquina
superior izquierda (8x8) y, para cada nivel k de tamaño n = 64 >> k,
HL en [0:n, n:2n], LH en [n:2n, 0:n] y HH en [n:2n, n:2n].
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, Tuple

import numpy as np

BLOCK_SIZE = 64
LEVELS = 3
SQRT2 = math.sqrt(2.0)

DEFAULT_ADWT_ALPHA = 0.53
DEFAULT_Q_MIN = 0.001
DEFAULT_Q_MAX = 32.0

Subband = Tuple[str, int]

# Orden de transmisión de pasos y coeficientes
SUBBANDS: Tuple[Subband, ...] = (
    ("LL", 3), ("HL", 3), ("LH", 3), ("HH", 3),
    ("HL", 2), ("LH", 2), ("HH", 2),
    ("HL", 1), ("LH", 1), ("HH", 1),
)


def subband_slice(name: str, level: int) -> Tuple[slice, slice]:
    """Región (filas, columnas) de una subbanda en la disposición de Mallat."""
    n = BLOCK_SIZE >> level
    if name == "LL":
        return slice(0, n), slice(0, n)
    if name == "HL":
        return slice(0, n), slice(n, 2 * n)
    if name == "LH":
        return slice(n, 2 * n), slice(0, n)
    if name == "HH":
        return slice(n, 2 * n), slice(n, 2 * n)
    raise ValueError(f"Subbanda desconocida: {name}")


@dataclass(frozen=True, eq=False)
class SubbandPyramid:
    """Coeficientes reales de un bloque (64x64, disposición de Mallat)."""
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.shape != (BLOCK_SIZE, BLOCK_SIZE):
            raise ValueError(f"Pirámide con forma {coeffs.shape}, se esperaba 64x64")
        object.__setattr__(self, "coeffs", coeffs)

    def band(self, name: str, level: int) -> np.ndarray:
        rows, cols = subband_slice(name, level)
        return self.coeffs[rows, cols]


@dataclass(frozen=True, eq=False)
class QuantizedPyramid:
    """Índices enteros de cuantificación de un bloque."""
    indices: np.ndarray

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices)
        if indices.shape != (BLOCK_SIZE, BLOCK_SIZE):
            raise ValueError(f"Pirámide cuantificada con forma {indices.shape}")
        object.__setattr__(self, "indices", indices.astype(np.int64))

    def band(self, name: str, level: int) -> np.ndarray:
        rows, cols = subband_slice(name, level)
        return self.indices[rows, cols]

    def equals(self, other: "QuantizedPyramid") -> bool:
        return np.array_equal(self.indices, other.indices)

    @classmethod
    def zeros(cls) -> "QuantizedPyramid":
        return cls(np.zeros((BLOCK_SIZE, BLOCK_SIZE), dtype=np.int64))


@dataclass(frozen=True)
class SubbandEnergies:
    """
    Energías (suma de cuadrados) por subbanda.

    Solo LL3 se mide directamente; la energía de LL en los niveles 2 y 1 es
    la energía total del nivel inmediatamente inferior.
    """
    bands: Dict[Subband, float]

    def ll(self, level: int) -> float:
        if level == LEVELS:
            return self.bands[("LL", LEVELS)]
        return self.total(level + 1)

    def total(self, level: int) -> float:
        """E_sum del nivel: LL + HL + LH + HH."""
        return (
            self.ll(level)
            + self.bands[("HL", level)]
            + self.bands[("LH", level)]
            + self.bands[("HH", level)]
        )

    @classmethod
    def from_pyramid(cls, pyramid: SubbandPyramid) -> "SubbandEnergies":
        return cls({sb: float(np.sum(pyramid.band(*sb) ** 2)) for sb in SUBBANDS})


@dataclass(frozen=True)
class QuantMap:
    """Paso de cuantificación de cada una de las 10 subbandas codificadas."""
    steps: Dict[Subband, float]
    base: float
    adwt_alpha: float = DEFAULT_ADWT_ALPHA

    def __post_init__(self) -> None:
        missing = [sb for sb in SUBBANDS if sb not in self.steps]
        if missing:
            raise ValueError(f"Faltan pasos para las subbandas {missing}")
        if any(not step > 0 for step in self.steps.values()):
            raise ValueError("Todos los pasos deben ser positivos")

    def step(self, name: str, level: int) -> float:
        return self.steps[(name, level)]

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(self.steps[sb] for sb in SUBBANDS)

    def step_grid(self) -> np.ndarray:
        """Paso por coeficiente (64x64)."""
        grid = np.empty((BLOCK_SIZE, BLOCK_SIZE), dtype=np.float64)
        for sb in SUBBANDS:
            rows, cols = subband_slice(*sb)
            grid[rows, cols] = self.steps[sb]
        return grid

    @classmethod
    def from_steps(cls, steps: Iterable[float], adwt_alpha: float = DEFAULT_ADWT_ALPHA) -> "QuantMap":
        values = tuple(float(s) for s in steps)
        if len(values) != len(SUBBANDS):
            raise ValueError(f"Se esperaban {len(SUBBANDS)} pasos, hay {len(values)}")
        return cls(dict(zip(SUBBANDS, values)), values[0], adwt_alpha)


def uniform_quant_map(q: float) -> QuantMap:
    """Mismo paso en todas las subbandas (DWT sin adaptación)."""
    return QuantMap({sb: float(q) for sb in SUBBANDS}, float(q), 0.0)


def _haar_analysis(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    lo = (x[..., 0::2, :] + x[..., 1::2, :]) / SQRT2
    hi = (x[..., 0::2, :] - x[..., 1::2, :]) / SQRT2
    ll = (lo[..., 0::2] + lo[..., 1::2]) / SQRT2
    hl = (lo[..., 0::2] - lo[..., 1::2]) / SQRT2
    lh = (hi[..., 0::2] + hi[..., 1::2]) / SQRT2
    hh = (hi[..., 0::2] - hi[..., 1::2]) / SQRT2
    return ll, hl, lh, hh


def _haar_synthesis(ll: np.ndarray, hl: np.ndarray, lh: np.ndarray, hh: np.ndarray) -> np.ndarray:
    n = ll.shape[-1]
    lo = np.empty(ll.shape[:-1] + (2 * n,), dtype=np.float64)
    hi = np.empty_like(lo)
    lo[..., 0::2] = (ll + hl) / SQRT2
    lo[..., 1::2] = (ll - hl) / SQRT2
    hi[..., 0::2] = (lh + hh) / SQRT2
    hi[..., 1::2] = (lh - hh) / SQRT2
    out = np.empty(ll.shape[:-2] + (2 * n, 2 * n), dtype=np.float64)
    out[..., 0::2, :] = (lo + hi) / SQRT2
    out[..., 1::2, :] = (lo - hi) / SQRT2
    return out


def forward_dwt3_batch(blocks: np.ndarray) -> np.ndarray:
    """
    Análisis de Haar de 3 niveles sobre una pila de bloques.

    Args:
        blocks: Array (..., 64, 64)

    Returns:
        Coeficientes (..., 64, 64) en disposición de Mallat
    """
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.shape[-2:] != (BLOCK_SIZE, BLOCK_SIZE):
        raise ValueError(f"Bloques con forma {blocks.shape[-2:]}, se esperaba 64x64")
    coeffs = blocks.copy()
    size = BLOCK_SIZE
    for _ in range(LEVELS):
        ll, hl, lh, hh = _haar_analysis(coeffs[..., :size, :size])
        half = size // 2
        coeffs[..., :half, :half] = ll
        coeffs[..., :half, half:size] = hl
        coeffs[..., half:size, :half] = lh
        coeffs[..., half:size, half:size] = hh
        size = half
    return coeffs


def inverse_dwt3_batch(coeffs: np.ndarray) -> np.ndarray:
    """Síntesis exacta, inversa de forward_dwt3_batch."""
    out = np.array(coeffs, dtype=np.float64, copy=True)
    size = BLOCK_SIZE >> LEVELS
    for _ in range(LEVELS):
        ll = out[..., :size, :size]
        hl = out[..., :size, size:2 * size]
        lh = out[..., size:2 * size, :size]
        hh = out[..., size:2 * size, size:2 * size]
        out[..., :2 * size, :2 * size] = _haar_synthesis(ll, hl, lh, hh)
        size *= 2
    return out


def forward_dwt3(block: np.ndarray) -> SubbandPyramid:
    """DWT de Haar ortonormal de 3 niveles de un bloque de 64x64."""
    return SubbandPyramid(forward_dwt3_batch(np.asarray(block)[None])[0])


def inverse_dwt3(pyramid: SubbandPyramid) -> np.ndarray:
    """Bloque de 64x64 reconstruido a partir de su pirámide."""
    return inverse_dwt3_batch(pyramid.coeffs[None])[0]


def subband_energies(pyramid: SubbandPyramid) -> SubbandEnergies:
    return SubbandEnergies.from_pyramid(pyramid)


def _clamp(q: float, q_min: float, q_max: float) -> float:
    return min(max(q, q_min), q_max)


def hh_step(e_ll: float, e_hh: float, q_ll: float, adwt_alpha: float) -> float:
    """Paso de HH a partir de la relación de energías LL/HH del nivel."""
    if e_hh <= 0.0:
        return q_ll
    if e_ll <= 0.0:
        e_ll = np.finfo(np.float64).eps * e_hh
    return adwt_alpha * math.log2(e_ll / e_hh + 1.0) * q_ll


def mixed_steps(e_hl: float, e_lh: float, q_ll: float, q_hh: float) -> Tuple[float, float]:
    """Pasos de HL y LH como media ponderada por energía entre q_LL y q_HH."""
    denom = e_hl + e_lh
    if denom <= 0.0:
        mid = (q_ll + q_hh) / 2.0
        return mid, mid
    w_hl = e_hl / denom
    w_lh = e_lh / denom
    return w_hl * q_ll + (1.0 - w_hl) * q_hh, w_lh * q_ll + (1.0 - w_lh) * q_hh


def assign_quant_steps(
    energies: SubbandEnergies,
    q_ll3: float,
    adwt_alpha: float = DEFAULT_ADWT_ALPHA,
    q_min: float = DEFAULT_Q_MIN,
    q_max: float = DEFAULT_Q_MAX,
) -> QuantMap:
    """
    Asigna un paso a cada subbanda a partir de sus energías.

    En cada nivel q_HH depende de log2(E_LL/E_HH + 1), q_HL y q_LH mezclan
    q_LL y q_HH según su peso en E_HL + E_LH, y el q_LL del nivel siguiente
    es la media de los cuatro pasos ponderada por energía. Todos los pasos
    asignados se recortan a [q_min, q_max] antes de propagarse.

    Args:
        energies: Energías por subbanda del bloque
        q_ll3: Paso base de LL3
        adwt_alpha: Factor de la relación de energías
        q_min: Paso mínimo
        q_max: Paso máximo

    Returns:
        Mapa de pasos con q_LL3 = q_ll3

    Raises:
        ValueError: Si q_ll3 o adwt_alpha no son positivos
    """
    if not q_ll3 > 0 or not adwt_alpha > 0:
        raise ValueError("q_ll3 y adwt_alpha deben ser positivos")

    steps: Dict[Subband, float] = {("LL", LEVELS): float(q_ll3)}
    q_ll = float(q_ll3)
    for level in range(LEVELS, 0, -1):
        e_ll = energies.ll(level)
        e_hl = energies.bands[("HL", level)]
        e_lh = energies.bands[("LH", level)]
        e_hh = energies.bands[("HH", level)]

        q_hh = _clamp(hh_step(e_ll, e_hh, q_ll, adwt_alpha), q_min, q_max)
        q_hl, q_lh = mixed_steps(e_hl, e_lh, q_ll, q_hh)
        q_hl = _clamp(q_hl, q_min, q_max)
        q_lh = _clamp(q_lh, q_min, q_max)
        steps[("HL", level)] = q_hl
        steps[("LH", level)] = q_lh
        steps[("HH", level)] = q_hh

        if level > 1:
            e_sum = e_ll + e_hl + e_lh + e_hh
            if e_sum > 0.0:
                q_ll = (q_ll * e_ll + q_hl * e_hl + q_lh * e_lh + q_hh * e_hh) / e_sum
            else:
                q_ll = (q_ll + q_hl + q_lh + q_hh) / 4.0
            q_ll = _clamp(q_ll, q_min, q_max)

    return QuantMap(steps, float(q_ll3), adwt_alpha)


def quantize_array(coeffs: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """round(c / q) con redondeo de la mitad alejándose de cero."""
    ratio = np.abs(coeffs) / steps
    return (np.sign(coeffs) * np.floor(ratio + 0.5)).astype(np.int64)


def quantize(pyramid: SubbandPyramid, qmap: QuantMap) -> QuantizedPyramid:
    return QuantizedPyramid(quantize_array(pyramid.coeffs, qmap.step_grid()))


def dequantize(indices: QuantizedPyramid, qmap: QuantMap) -> SubbandPyramid:
    return SubbandPyramid(indices.indices * qmap.step_grid())


@lru_cache(maxsize=None)
def morton_order(n: int) -> np.ndarray:
    """Índices planos (fila*n + columna) de una cuadrícula n x n en orden Z."""
    idx = np.arange(n * n)
    rows = np.zeros_like(idx)
    cols = np.zeros_like(idx)
    bit = 0
    while (1 << (2 * bit)) < n * n:
        cols |= ((idx >> (2 * bit)) & 1) << bit
        rows |= ((idx >> (2 * bit + 1)) & 1) << bit
        bit += 1
    order = rows * n + cols
    order.setflags(write=False)
    return order


def padded_shape(shape: Tuple[int, int], block: int = BLOCK_SIZE) -> Tuple[int, int]:
    rows, cols = shape
    return -(-rows // block) * block, -(-cols // block) * block


def tile_blocks(values: np.ndarray, block: int = BLOCK_SIZE) -> Tuple[np.ndarray, Tuple[int, int]]:
    """
    Divide una imagen en bloques (rellenando con ceros).

    Returns:
        (bloques (N, block, block) en orden raster, (filas, columnas) de bloques)
    """
    rows, cols = values.shape
    prow, pcol = padded_shape((rows, cols), block)
    padded = np.zeros((prow, pcol), dtype=np.float64)
    padded[:rows, :cols] = values
    grid = (prow // block, pcol // block)
    blocks = padded.reshape(grid[0], block, grid[1], block).swapaxes(1, 2).reshape(-1, block, block)
    return blocks, grid


def untile_blocks(blocks: np.ndarray, grid: Tuple[int, int], shape: Tuple[int, int]) -> np.ndarray:
    block = blocks.shape[-1]
    padded = blocks.reshape(grid[0], grid[1], block, block).swapaxes(1, 2).reshape(
        grid[0] * block, grid[1] * block
    )
    return padded[:shape[0], :shape[1]].copy()
