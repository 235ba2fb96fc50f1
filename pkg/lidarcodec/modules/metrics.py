#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Metrics
--------------
Métricas de calidad y de precisión de tasa: MSE/PSNR sobre los píxeles
ocupados en ambas imágenes y error de bitrate medio y de pico.
"""

import math
from typing import Optional, Sequence

import numpy as np

from lidarcodec.modules.pointcloud_io import RangeImage

# Centinela de PSNR para reconstrucciones idénticas
PSNR_INF = math.inf


class MetricsError(Exception):
    """Excepción específica para errores en el cálculo de métricas."""
    pass


def mse(original: RangeImage, reconstructed: RangeImage) -> float:
    """
    Error cuadrático medio del rango (m²) sobre los píxeles ocupados en ambas.

    Raises:
        MetricsError: Si las dimensiones no coinciden
    """
    if original.shape != reconstructed.shape:
        raise MetricsError(f"Dimensiones distintas: {original.shape} y {reconstructed.shape}")
    common = original.mask & reconstructed.mask
    if not np.any(common):
        return 0.0
    diff = original.values[common].astype(np.float64) - reconstructed.values[common].astype(np.float64)
    return float(np.mean(diff * diff))


def psnr_from_mse(value: float, peak: float) -> float:
    if value <= 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / value)


def psnr(original: RangeImage, reconstructed: RangeImage, peak: Optional[float] = None) -> float:
    """
    PSNR = 10·log10(d_m² / MSE) en dB.

    Args:
        original: Imagen original
        reconstructed: Imagen reconstruida
        peak: Valor pico d_m (por defecto range_max de la proyección)

    Returns:
        PSNR en dB o PSNR_INF si las imágenes coinciden
    """
    return psnr_from_mse(mse(original, reconstructed), peak or original.params.range_max)


def _relative_errors(targets: Sequence[float], reals: Sequence[float]) -> np.ndarray:
    if len(targets) != len(reals):
        raise MetricsError(f"Longitudes distintas: {len(targets)} objetivos y {len(reals)} reales")
    if len(targets) == 0:
        raise MetricsError("Sin frames para calcular el error de bitrate")
    t = np.asarray(targets, dtype=np.float64)
    r = np.asarray(reals, dtype=np.float64)
    if np.any(t <= 0):
        raise MetricsError("Los objetivos de bitrate deben ser positivos")
    return np.abs(r - t) / t


def bitrate_error(targets: Sequence[float], reals: Sequence[float]) -> float:
    """e_R = media de |R_real - R_objetivo| / R_objetivo."""
    return float(np.mean(_relative_errors(targets, reals)))


def peak_bitrate_error(targets: Sequence[float], reals: Sequence[float]) -> float:
    """Máximo error relativo por frame."""
    return float(np.max(_relative_errors(targets, reals)))
