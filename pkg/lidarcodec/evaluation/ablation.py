#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Ablation
---------------
Comparación de transformadas a igual tasa: a-DWT, DWT con paso uniforme
y DCT 8x8 con paso uniforme. Las tres parten del mismo residuo intra y
usan el mismo codificador entrópico; el paso de cada una se busca por
bisección hasta acercarse al bpp objetivo.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.fft import dctn, idctn

from lidarcodec.core.bitstream import BlockPayload, FramePacket, code_to_step, step_to_code
from lidarcodec.core.codec_manager import CodecOptions, code_blocks, reconstruct_frame
from lidarcodec.evaluation.synthetic import EvaluationError
from lidarcodec.modules.adwt import (
    BLOCK_SIZE,
    SUBBANDS,
    QuantizedPyramid,
    forward_dwt3_batch,
    quantize_array,
    tile_blocks,
    untile_blocks,
)
from lidarcodec.modules.entropy import encode_block, encode_mask, encode_side_info
from lidarcodec.modules.metrics import mse, psnr_from_mse
from lidarcodec.modules.pointcloud_io import PointCloud, ProjectionParams, RangeImage, project
from lidarcodec.modules.prediction import IntraSideInfo, PredictionMode, ResidualImage, intra_predict, intra_reconstruct

logger = logging.getLogger("lidarcodec.ablation")

TRANSFORMS = ("adwt", "dwt", "dct")
DCT_SIZE = 8
MAX_SEARCH_STEPS = 40


@dataclass
class PreparedFrame:
    """Datos de un frame que no dependen del paso: residuo intra, máscara y quadtrees."""
    image: RangeImage
    residual: ResidualImage
    side_info: IntraSideInfo
    mask_data: bytes
    side_data: bytes
    n_points: int
    blocks: np.ndarray
    points: np.ndarray
    wavelet: np.ndarray
    _dct: Optional[np.ndarray] = None

    @property
    def dct(self) -> np.ndarray:
        if self._dct is None:
            self._dct = forward_block_dct(self.blocks)
        return self._dct


@dataclass(frozen=True)
class AblationPoint:
    """Resultado de una transformada en un bpp objetivo."""
    transform: str
    target_bpp: float
    q: float
    bpp: float
    mse: float
    psnr: float
    converged: bool


def prepare_frame(cloud: PointCloud, params: ProjectionParams, options: CodecOptions) -> PreparedFrame:
    image = project(cloud, params)
    residual, side = intra_predict(image, options.tau, options.g_min)
    blocks, _ = tile_blocks(residual.values)
    mask_blocks, _ = tile_blocks(image.mask.astype(np.float64))
    return PreparedFrame(
        image=image,
        residual=residual,
        side_info=side,
        mask_data=encode_mask(image.mask),
        side_data=encode_side_info(side),
        n_points=len(cloud),
        blocks=blocks,
        points=mask_blocks.sum(axis=(1, 2)).astype(np.int64),
        wavelet=forward_dwt3_batch(blocks),
    )


def forward_block_dct(blocks: np.ndarray) -> np.ndarray:
    """
    DCT-II ortonormal 8x8 de cada sub-bloque de los bloques de 64x64.

    Los coeficientes se reagrupan por frecuencia: la frecuencia (u, v) de
    todos los sub-bloques ocupa el plano 8x8 en (u*8, v*8), de forma que la
    componente continua cae en la posición de LL3.
    """
    n = len(blocks)
    sub = BLOCK_SIZE // DCT_SIZE
    tiles = blocks.reshape(n, sub, DCT_SIZE, sub, DCT_SIZE)
    coeffs = dctn(tiles, type=2, axes=(2, 4), norm="ortho")
    return coeffs.transpose(0, 2, 1, 4, 3).reshape(n, BLOCK_SIZE, BLOCK_SIZE)


def inverse_block_dct(coeffs: np.ndarray) -> np.ndarray:
    n = len(coeffs)
    sub = BLOCK_SIZE // DCT_SIZE
    planes = coeffs.reshape(n, DCT_SIZE, sub, DCT_SIZE, sub).transpose(0, 2, 1, 4, 3)
    return idctn(planes, type=2, axes=(2, 4), norm="ortho").reshape(n, BLOCK_SIZE, BLOCK_SIZE)


def _packet(frame: PreparedFrame, payloads: Sequence[BlockPayload]) -> FramePacket:
    return FramePacket(0, PredictionMode.INTRA, frame.n_points, frame.mask_data, frame.side_data, tuple(payloads))


def code_frame(frame: PreparedFrame, transform: str, q: float, options: CodecOptions) -> Tuple[float, float]:
    """
    Codifica un frame preparado con un paso base.

    Returns:
        (bpp, MSE de la imagen reconstruida)
    """
    params = frame.image.params
    if transform in ("adwt", "dwt"):
        coded = code_blocks(frame.wavelet, frame.points, q, replace(options, transform=transform))
        reconstruction, _ = reconstruct_frame(
            PredictionMode.INTRA, frame.image.mask, coded.indices, coded.steps, frame.side_info, None, params,
        )
        packet = _packet(frame, coded.payloads)
    elif transform == "dct":
        code = step_to_code(min(max(q, options.q_min), options.q_max), options.q_min)
        step = code_to_step(code, options.q_min)
        indices = quantize_array(frame.dct, np.full(frame.dct.shape, step))
        payloads = [
            BlockPayload((code,) * len(SUBBANDS), encode_block(QuantizedPyramid(block))) for block in indices
        ]
        _, grid = tile_blocks(np.zeros(params.shape))
        values = untile_blocks(inverse_block_dct(indices * step), grid, params.shape)
        residual = frame.residual.with_values(values)
        reconstruction = intra_reconstruct(residual, frame.side_info, params)
        packet = _packet(frame, payloads)
    else:
        raise EvaluationError(f"Transformada no soportada: {transform}")
    return packet.bpp(), mse(frame.image, reconstruction)


def evaluate(frames: Sequence[PreparedFrame], transform: str, q: float, options: CodecOptions) -> Tuple[float, float]:
    """bpp medio y MSE medio de un conjunto de frames con un paso."""
    results = [code_frame(frame, transform, q, options) for frame in frames]
    return float(np.mean([r[0] for r in results])), float(np.mean([r[1] for r in results]))


def match_bpp(
    frames: Sequence[PreparedFrame],
    transform: str,
    target_bpp: float,
    options: CodecOptions,
    tolerance: float = 0.02,
) -> AblationPoint:
    """
    Busca por bisección en log(q) el paso cuyo bpp medio queda a menos de
    tolerance (relativa) del objetivo.

    El bpp decrece con q; si el objetivo está fuera de alcance se devuelve
    el extremo más cercano con converged=False.
    """
    if not frames:
        raise EvaluationError("Sin frames para la ablación")
    lo, hi = math.log(options.q_min), math.log(options.q_max)
    peak = frames[0].image.params.range_max
    best: Optional[Tuple[float, float, float]] = None

    for _ in range(MAX_SEARCH_STEPS):
        q = math.exp(0.5 * (lo + hi))
        bpp, error = evaluate(frames, transform, q, options)
        if best is None or abs(bpp - target_bpp) < abs(best[1] - target_bpp):
            best = (q, bpp, error)
        if abs(bpp - target_bpp) <= tolerance * target_bpp:
            break
        if bpp > target_bpp:
            lo = math.log(q)
        else:
            hi = math.log(q)
        if hi - lo < 1e-6:
            break

    q, bpp, error = best
    converged = abs(bpp - target_bpp) <= tolerance * target_bpp
    if not converged:
        logger.warning(f"{transform}: bpp {bpp:.3f} no alcanza el objetivo {target_bpp:.3f}")
    return AblationPoint(transform, target_bpp, q, bpp, error, psnr_from_mse(error, peak), converged)


def run_ablation(
    clouds: Sequence[PointCloud],
    params: ProjectionParams,
    bpps: Sequence[float],
    transforms: Sequence[str] = TRANSFORMS,
    options: Optional[CodecOptions] = None,
    tolerance: float = 0.02,
) -> List[AblationPoint]:
    """
    PSNR de cada transformada en cada bpp objetivo.

    Args:
        clouds: Frames de prueba (cada uno se codifica como intra)
        params: Geometría de proyección
        bpps: bpp objetivo
        transforms: Subconjunto de TRANSFORMS
        options: Parámetros del códec
        tolerance: Error relativo de bpp admitido

    Returns:
        Un AblationPoint por (transformada, bpp) en ese orden
    """
    unknown = [t for t in transforms if t not in TRANSFORMS]
    if unknown:
        raise EvaluationError(f"Transformadas no soportadas: {unknown}")
    options = options or CodecOptions()
    frames = [prepare_frame(cloud, params, options) for cloud in clouds]
    points: List[AblationPoint] = []
    for transform in transforms:
        for target in bpps:
            point = match_bpp(frames, transform, target, options, tolerance)
            logger.info(
                f"Ablación {transform} @ {target:.2f} bpp: q={point.q:.4f}, "
                f"bpp={point.bpp:.3f}, PSNR={point.psnr:.2f} dB"
            )
            points.append(point)
    return points


def psnr_table(points: Sequence[AblationPoint]) -> Dict[str, Dict[float, float]]:
    """PSNR por transformada y bpp objetivo."""
    table: Dict[str, Dict[float, float]] = {}
    for point in points:
        table.setdefault(point.transform, {})[point.target_bpp] = point.psnr
    return table
