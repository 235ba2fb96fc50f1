#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo CodecManager
-------------------
Orquesta el códec completo: proyección, selección de modo, a-DWT por
bloques, cuantificación con o sin control de tasa, codificación entrópica
y reconstrucción local en lazo cerrado. El decodificador comparte la
misma función de reconstrucción, por lo que ambos lados evolucionan igual.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from lidarcodec.core.bitstream import (
    BLOCK_OVERHEAD_BITS,
    BlockPayload,
    FramePacket,
    MissingReferenceError,
    StreamHeader,
    blocks_per_frame,
    code_to_step,
    step_to_code,
)
from lidarcodec.modules.adwt import (
    BLOCK_SIZE,
    QuantizedPyramid,
    QuantMap,
    SubbandEnergies,
    SubbandPyramid,
    assign_quant_steps,
    forward_dwt3_batch,
    inverse_dwt3_batch,
    quantize_array,
    tile_blocks,
    uniform_quant_map,
    untile_blocks,
)
from lidarcodec.modules.entropy import (
    CorruptStreamError,
    decode_block,
    decode_mask,
    decode_side_info,
    encode_block,
    encode_mask,
    encode_side_info,
)
from lidarcodec.modules.pointcloud_io import PointCloud, ProjectionParams, RangeImage, back_project, project
from lidarcodec.modules.pose_estimation import (
    IdentityPoseSource,
    Pose,
    PoseEstimationError,
    PoseSource,
    inter_reconstruct,
    predict_inter_image,
    select_mode,
)
from lidarcodec.modules.prediction import (
    MACROBLOCK,
    IntraSideInfo,
    PredictionMode,
    ResidualImage,
    intra_reconstruct,
)
from lidarcodec.modules.ratecontrol import RateController
from lidarcodec.utils.config_manager import CodecSettings, RateControlSettings
from lidarcodec.utils.logger import LoggingContext

logger = logging.getLogger("lidarcodec.codec")

# Cabecera de paquete (índice, modo, tamaño, CRC) + n_points + longitud de la máscara
_PACKET_FIXED_BITS = (13 + 4 + 4) * 8
_POSE_BITS = 12 * 32
CALIBRATION_PASSES = 2


@dataclass(frozen=True)
class CodecOptions:
    """Parámetros del códec compartidos por codificador y decodificador."""
    tau: float = 0.6
    g_min: float = 0.05
    t_key: float = 0.5
    adwt_alpha: float = 0.53
    q_min: float = 0.001
    q_max: float = 32.0
    constant_q: float = 0.05
    keyframe_interval: int = 64
    calibrate_first_frame: bool = True
    transform: str = "adwt"

    def __post_init__(self) -> None:
        if self.transform not in ("adwt", "dwt"):
            raise ValueError(f"Transformada no soportada: {self.transform}")

    @classmethod
    def from_settings(cls, settings: CodecSettings, transform: str = "adwt") -> "CodecOptions":
        return cls(
            tau=settings.prediction.tau,
            g_min=settings.prediction.g_min,
            t_key=settings.prediction.t_key,
            adwt_alpha=settings.adwt.alpha,
            q_min=settings.adwt.q_min,
            q_max=settings.adwt.q_max,
            constant_q=settings.ratecontrol.constant_q,
            keyframe_interval=settings.bitstream.keyframe_interval,
            calibrate_first_frame=settings.ratecontrol.calibrate_first_frame,
            transform=transform,
        )


@dataclass
class CodecState:
    """
    Estado de un stream.

    Attributes:
        params: Geometría de proyección
        prev_recon: Reconstrucción anterior como nube (referencia inter)
        prev_image: Reconstrucción anterior como imagen
        frame_counter: Frames procesados
        frames_since_keyframe: Frames desde la última trama intra
        rate_controller: Control de tasa (sólo codificador)
        awaiting_keyframe: El decodificador perdió la referencia y espera una trama intra
    """
    params: ProjectionParams
    prev_recon: Optional[PointCloud] = None
    prev_image: Optional[RangeImage] = None
    frame_counter: int = 0
    frames_since_keyframe: int = 0
    rate_controller: Optional[RateController] = None
    awaiting_keyframe: bool = False

    @property
    def carryover_bits(self) -> int:
        return self.rate_controller.carryover_bits if self.rate_controller else 0

    def commit(self, reconstruction: RangeImage, mode: PredictionMode) -> None:
        self.prev_image = reconstruction
        self.prev_recon = back_project(reconstruction)
        self.frame_counter += 1
        self.frames_since_keyframe = 0 if mode == PredictionMode.INTRA else self.frames_since_keyframe + 1
        self.awaiting_keyframe = False


def step_grids(codes: np.ndarray, q_min: float) -> np.ndarray:
    """Paso por coeficiente (N, 64, 64) a partir de los códigos de paso (N, 10)."""
    grids = np.empty((len(codes), BLOCK_SIZE, BLOCK_SIZE), dtype=np.float64)
    for i, block_codes in enumerate(codes):
        grids[i] = QuantMap.from_steps([code_to_step(int(c), q_min) for c in block_codes]).step_grid()
    return grids


def reconstruct_frame(
    mode: PredictionMode,
    mask: np.ndarray,
    indices: np.ndarray,
    steps: np.ndarray,
    side_info: Optional[IntraSideInfo],
    predicted: Optional[RangeImage],
    params: ProjectionParams,
) -> Tuple[RangeImage, ResidualImage]:
    """
    Reconstrucción común a codificador y decodificador.

    Args:
        mode: Modo del frame
        mask: Máscara de ocupación
        indices: Índices cuantificados (N, 64, 64)
        steps: Pasos por coeficiente (N, 64, 64)
        side_info: Quadtrees (intra)
        predicted: Imagen predicha (inter)
        params: Geometría

    Returns:
        (imagen reconstruida, residuo decodificado)
    """
    _, grid = tile_blocks(np.zeros(params.shape))
    blocks = inverse_dwt3_batch(indices * steps)
    values = untile_blocks(blocks, grid, params.shape)
    residual = ResidualImage(np.where(mask, values, 0.0), mask, mode)
    if mode == PredictionMode.INTRA:
        if side_info is None:
            raise CorruptStreamError("Frame intra sin quadtree")
        return intra_reconstruct(residual, side_info, params), residual
    if predicted is None:
        raise MissingReferenceError("Frame inter sin imagen predicha")
    return inter_reconstruct(residual, predicted, params), residual


@dataclass
class CodedBlocks:
    payloads: List[BlockPayload]
    indices: np.ndarray
    steps: np.ndarray
    bits: int


def block_quant_map(coeffs: np.ndarray, q: float, options: CodecOptions) -> QuantMap:
    """Pasos de un bloque: a-DWT según sus energías o uniforme para la DWT simple."""
    q = min(max(q, options.q_min), options.q_max)
    if options.transform == "dwt":
        return uniform_quant_map(q)
    energies = SubbandEnergies.from_pyramid(SubbandPyramid(coeffs))
    return assign_quant_steps(energies, q, options.adwt_alpha, options.q_min, options.q_max)


def code_block(coeffs: np.ndarray, q: float, options: CodecOptions) -> Tuple[BlockPayload, np.ndarray, np.ndarray]:
    """
    Cuantifica y codifica un bloque.

    Los pasos se redondean a su código de 16 bits antes de cuantificar, de
    modo que el decodificador usa exactamente los mismos.

    Returns:
        (carga del bloque, índices (64, 64), pasos por coeficiente (64, 64))
    """
    codes = [step_to_code(s, options.q_min) for s in block_quant_map(coeffs, q, options).as_tuple()]
    steps = step_grids(np.asarray([codes]), options.q_min)[0]
    indices = quantize_array(coeffs, steps)
    payload = BlockPayload(tuple(codes), encode_block(QuantizedPyramid(indices)))
    return payload, indices, steps


def code_blocks(
    coeffs: np.ndarray,
    points: np.ndarray,
    q: float,
    options: CodecOptions,
    controller: Optional[RateController] = None,
) -> CodedBlocks:
    """
    Codifica los bloques de un frame en orden raster.

    Con controlador (ya abierto con begin_frame) el paso de cada bloque se
    elige y se contabiliza uno a uno; sin él todos usan q.
    """
    payloads: List[BlockPayload] = []
    indices = np.zeros(coeffs.shape, dtype=np.int64)
    steps = np.zeros(coeffs.shape, dtype=np.float64)
    bits = 0
    for i in range(len(coeffs)):
        decision = None
        block_q = q
        if controller is not None:
            decision = controller.choose_step(i, int(points[i]), BLOCK_OVERHEAD_BITS)
            block_q = decision.q
        payload, indices[i], steps[i] = code_block(coeffs[i], block_q, options)
        payloads.append(payload)
        block_bits = payload.size_bytes * 8
        bits += block_bits
        if decision is not None:
            error = coeffs[i] - indices[i] * steps[i]
            controller.finish_block(decision, block_bits, len(payload.data) * 8, float(np.mean(error * error)))
    return CodedBlocks(payloads, indices, steps, bits)


@dataclass
class EncodedFrame:
    """Resultado de codificar un frame."""
    packet: FramePacket
    image: RangeImage
    reconstruction: RangeImage
    target_bpp: Optional[float] = None
    encode_ms: float = 0.0
    residual: Optional[ResidualImage] = field(default=None, repr=False)

    @property
    def bpp(self) -> float:
        return self.packet.bpp()


class FrameEncoder:
    """Codificador de un stream de nubes de puntos."""

    def __init__(
        self,
        params: ProjectionParams,
        options: Optional[CodecOptions] = None,
        pose_source: Optional[PoseSource] = None,
        rate_control: Optional[RateControlSettings] = None,
    ):
        """
        Args:
            params: Geometría de proyección del stream
            options: Parámetros del códec
            pose_source: Fuente de pose para la predicción inter (por defecto identidad)
            rate_control: Configuración del control de tasa; None para Q constante
        """
        self.params = params
        self.options = options or CodecOptions()
        self.pose_source = pose_source or IdentityPoseSource()
        controller = None
        if rate_control is not None:
            controller = RateController(rate_control, self.options.q_min, self.options.q_max)
        self.state = CodecState(params, rate_controller=controller)
        self._calibrated = False

    @property
    def header(self) -> StreamHeader:
        return StreamHeader(self.params, self.options.q_min, self.state.rate_controller is not None)

    def encode(
        self,
        cloud: PointCloud,
        target_bpp: Optional[float] = None,
        q: Optional[float] = None,
    ) -> EncodedFrame:
        """
        Codifica un frame.

        Args:
            cloud: Nube de puntos original
            target_bpp: bpp objetivo (requiere control de tasa); None para Q constante
            q: Paso base constante (por defecto options.constant_q)

        Returns:
            EncodedFrame con el paquete y la reconstrucción local
        """
        state = self.state
        frame_index = state.frame_counter
        with LoggingContext(logger, f"codificar frame {frame_index}") as ctx:
            image = project(cloud, self.params)
            n_points = len(cloud)

            force_key = state.frames_since_keyframe + 1 >= self.options.keyframe_interval
            reference = None if force_key else state.prev_recon
            decision = select_mode(
                image, reference, self.pose_source, frame_index, cloud,
                self.options.t_key, self.options.tau, self.options.g_min,
            )
            mode = decision.mode
            mask_data = encode_mask(image.mask)
            if mode == PredictionMode.INTRA:
                side_data = encode_side_info(decision.side_info)
                side_bits = (4 + len(side_data)) * 8
            else:
                side_data = decision.side_info.to_values()
                side_bits = _POSE_BITS

            blocks, _ = tile_blocks(decision.residual.values)
            coeffs = forward_dwt3_batch(blocks)
            mask_blocks, _ = tile_blocks(image.mask.astype(np.float64))
            points = mask_blocks.sum(axis=(1, 2)).astype(np.int64)

            controller = state.rate_controller
            if controller is not None and target_bpp is not None:
                energies = np.sum(blocks * blocks, axis=(1, 2))
                frame_target = controller.frame_target_bits(target_bpp, n_points)
                overhead = _PACKET_FIXED_BITS + len(mask_data) * 8 + side_bits
                block_bits = frame_target - overhead
                if self.options.calibrate_first_frame and not self._calibrated:
                    self._calibrate(coeffs, points, energies, block_bits, mode)
                controller.begin_frame(block_bits, energies, int(mode))
                coded = code_blocks(coeffs, points, self.options.q_max, self.options, controller)
            else:
                coded = code_blocks(coeffs, points, q if q is not None else self.options.constant_q, self.options)

            packet = FramePacket(frame_index, mode, n_points, mask_data, side_data, tuple(coded.payloads))
            side_info = decision.side_info if mode == PredictionMode.INTRA else None
            reconstruction, residual = reconstruct_frame(
                mode, image.mask, coded.indices, coded.steps, side_info, decision.predicted, self.params,
            )
            if controller is not None and target_bpp is not None:
                controller.end_frame(packet.size_bytes * 8, int(round(target_bpp * n_points)))
            state.commit(reconstruction, mode)

        logger.debug(
            f"Frame {frame_index} codificado: {mode.name.lower()}, {packet.size_bytes} bytes",
            extra={"frame": {"index": frame_index, "mode": mode.name, "bytes": packet.size_bytes}},
        )
        return EncodedFrame(packet, image, reconstruction, target_bpp, ctx.elapsed_ms, residual)

    def _calibrate(
        self,
        coeffs: np.ndarray,
        points: np.ndarray,
        energies: np.ndarray,
        block_bits: int,
        mode: PredictionMode,
    ) -> None:
        """Pasadas de prueba del primer frame con control de tasa para fijar el sesgo inicial."""
        controller = self.state.rate_controller
        for _ in range(CALIBRATION_PASSES):
            trial = copy.deepcopy(controller)
            trial.begin_frame(block_bits, energies, int(mode))
            code_blocks(coeffs, points, self.options.q_max, self.options, trial)
            controller.calibrate(trial)
        self._calibrated = True


@dataclass
class DecodedFrame:
    """Resultado de decodificar un paquete."""
    cloud: PointCloud
    image: RangeImage
    mode: PredictionMode
    decode_ms: float = 0.0


class FrameDecoder:
    """Decodificador de un stream; sigue sólo las reconstrucciones."""

    def __init__(self, header: StreamHeader):
        self.header = header
        self.params = header.params
        self.state = CodecState(header.params)
        self.n_blocks = blocks_per_frame(header.params)

    def mark_lost(self, frame_index: int) -> None:
        """Registra un paquete perdido; los inter siguientes esperan a una trama clave."""
        logger.warning(f"Paquete {frame_index} perdido, esperando trama clave")
        self.state.awaiting_keyframe = True

    def decode(self, packet: FramePacket) -> DecodedFrame:
        """
        Decodifica un paquete y actualiza la referencia.

        Raises:
            MissingReferenceError: Paquete inter sin referencia válida
            CorruptStreamError: Datos no decodificables (el estado no cambia)
        """
        state = self.state
        if packet.mode == PredictionMode.INTER and (state.prev_recon is None or state.awaiting_keyframe):
            state.awaiting_keyframe = True
            raise MissingReferenceError(
                f"Paquete inter {packet.frame_index} sin referencia, esperando trama clave"
            )
        if len(packet.blocks) != self.n_blocks:
            raise CorruptStreamError(
                f"El paquete {packet.frame_index} tiene {len(packet.blocks)} bloques, se esperaban {self.n_blocks}"
            )

        with LoggingContext(logger, f"decodificar frame {packet.frame_index}") as ctx:
            rows, cols = self.params.shape
            mask = decode_mask(packet.mask_data, (rows, cols))
            side_info = None
            predicted = None
            if packet.mode == PredictionMode.INTRA:
                mb_rows = -(-rows // MACROBLOCK)
                mb_cols = -(-cols // MACROBLOCK)
                side_info = decode_side_info(packet.side_data, mb_rows, mb_cols)
            else:
                try:
                    pose = Pose.from_values(packet.pose_values.astype(np.float64))
                except PoseEstimationError as e:
                    raise CorruptStreamError(f"Pose no válida en el paquete {packet.frame_index}: {e}")
                predicted = predict_inter_image(state.prev_recon, pose, self.params)

            codes = np.asarray([block.step_codes for block in packet.blocks], dtype=np.int64)
            indices = np.stack([decode_block(block.data).indices for block in packet.blocks]) if packet.blocks \
                else np.zeros((0, BLOCK_SIZE, BLOCK_SIZE), dtype=np.int64)
            steps = step_grids(codes.reshape(-1, 10), self.header.q_min)
            reconstruction, _ = reconstruct_frame(
                packet.mode, mask, indices, steps, side_info, predicted, self.params,
            )
            state.commit(reconstruction, packet.mode)

        return DecodedFrame(state.prev_recon, reconstruction, packet.mode, ctx.elapsed_ms)


def encode_frame(
    encoder: FrameEncoder, cloud: PointCloud, target_bpp: Optional[float] = None
) -> FramePacket:
    """Codifica un frame con el estado del codificador y devuelve su paquete."""
    return encoder.encode(cloud, target_bpp).packet


def decode_frame(decoder: FrameDecoder, packet: FramePacket) -> PointCloud:
    """Decodifica un paquete con el estado del decodificador y devuelve la nube."""
    return decoder.decode(packet).cloud
