#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Bitstream
----------------
Contenedor .dcmp: cabecera de stream seguida de paquetes de frame
autodelimitados. Todos los enteros multibyte son little-endian y cada
paquete lleva el CRC-32 de su carga.
"""

import math
import zlib
import struct
import logging
from dataclasses import dataclass
from typing import BinaryIO, Iterator, List, Tuple, Union

import numpy as np

from lidarcodec.modules.adwt import SUBBANDS
from lidarcodec.modules.entropy import CorruptStreamError
from lidarcodec.modules.pointcloud_io import PointCloudError, ProjectionParams
from lidarcodec.modules.prediction import PredictionMode

logger = logging.getLogger("lidarcodec.bitstream")

MAGIC = b"DCMP"
VERSION = 1

FLAG_RATE_CONTROL = 0x01
FLAG_ROW_TABLE = 0x02

# Pasos de cuantificación en escala logarítmica: step = q_min·2^(code/STEP_CODE_SCALE)
STEP_CODE_SCALE = 2048
STEP_CODE_MAX = 0xFFFF

_HEADER = struct.Struct("<4sBBHHdddd")
_PACKET = struct.Struct("<IBII")
_STEPS = struct.Struct("<" + "H" * len(SUBBANDS))
_POSE = struct.Struct("<12f")
_U32 = struct.Struct("<I")


class BitstreamError(Exception):
    """Excepción específica para errores del contenedor."""
    pass


class MissingReferenceError(BitstreamError):
    """Paquete inter sin reconstrucción previa; hay que esperar a una trama clave."""
    pass


def step_to_code(step: float, q_min: float) -> int:
    """Código de 16 bits más cercano a un paso."""
    code = int(round(STEP_CODE_SCALE * math.log2(max(step, q_min) / q_min)))
    return min(max(code, 0), STEP_CODE_MAX)


def code_to_step(code: int, q_min: float) -> float:
    return q_min * 2.0 ** (code / STEP_CODE_SCALE)


@dataclass(frozen=True)
class StreamHeader:
    """
    Cabecera del stream.

    Attributes:
        params: Geometría de proyección (con tabla de filas opcional)
        q_min: Paso mínimo, referencia de los códigos de paso
        rate_control: El stream se codificó con control de tasa
        version: Versión del formato
    """
    params: ProjectionParams
    q_min: float = 0.001
    rate_control: bool = False
    version: int = VERSION

    def to_bytes(self) -> bytes:
        p = self.params
        flags = FLAG_RATE_CONTROL if self.rate_control else 0
        if p.row_elevations is not None:
            flags |= FLAG_ROW_TABLE
        out = bytearray(_HEADER.pack(
            MAGIC, self.version, flags, p.rows, p.cols,
            p.elevation_min, p.elevation_max, p.range_max, self.q_min,
        ))
        if p.row_elevations is not None:
            out.extend(np.asarray(p.row_elevations, dtype="<f8").tobytes())
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> Tuple["StreamHeader", int]:
        """
        Lee la cabecera.

        Returns:
            (cabecera, desplazamiento tras la cabecera)

        Raises:
            BitstreamError: Si la firma o la versión no son válidas
        """
        if len(data) - offset < _HEADER.size:
            raise BitstreamError("Cabecera de stream truncada")
        magic, version, flags, rows, cols, e_min, e_max, r_max, q_min = _HEADER.unpack_from(data, offset)
        if magic != MAGIC:
            raise BitstreamError(f"Firma no válida: {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"Versión de formato no soportada: {version}")
        offset += _HEADER.size
        table = None
        if flags & FLAG_ROW_TABLE:
            size = rows * 8
            if len(data) - offset < size:
                raise BitstreamError("Tabla de elevaciones truncada")
            table = tuple(np.frombuffer(data, dtype="<f8", count=rows, offset=offset).tolist())
            offset += size
        try:
            params = ProjectionParams(rows, cols, e_min, e_max, r_max, table)
        except PointCloudError as e:
            raise BitstreamError(f"Geometría de proyección no válida: {e}")
        return cls(params, q_min, bool(flags & FLAG_RATE_CONTROL), version), offset


@dataclass(frozen=True)
class BlockPayload:
    """Códigos de paso (10 subbandas) y coeficientes codificados de un bloque."""
    step_codes: Tuple[int, ...]
    data: bytes

    @property
    def size_bytes(self) -> int:
        return _STEPS.size + _U32.size + len(self.data)


BLOCK_OVERHEAD_BITS = (_STEPS.size + _U32.size) * 8


@dataclass(frozen=True, eq=False)
class FramePacket:
    """
    Paquete de un frame.

    Attributes:
        frame_index: Índice del frame en el stream
        mode: INTRA o INTER
        n_points: Puntos de la nube original (para el cálculo de bpp)
        mask_data: Máscara de ocupación codificada
        side_data: Quadtrees codificados (intra) o 12 float32 de pose (inter)
        blocks: Un BlockPayload por bloque de 64x64 en orden raster
    """
    frame_index: int
    mode: PredictionMode
    n_points: int
    mask_data: bytes
    side_data: Union[bytes, np.ndarray]
    blocks: Tuple[BlockPayload, ...]

    def payload(self) -> bytes:
        out = bytearray(_U32.pack(self.n_points))
        out.extend(_U32.pack(len(self.mask_data)))
        out.extend(self.mask_data)
        if self.mode == PredictionMode.INTRA:
            out.extend(_U32.pack(len(self.side_data)))
            out.extend(self.side_data)
        else:
            out.extend(_POSE.pack(*np.asarray(self.side_data, dtype=np.float32).tolist()))
        for block in self.blocks:
            out.extend(_STEPS.pack(*block.step_codes))
            out.extend(_U32.pack(len(block.data)))
            out.extend(block.data)
        return bytes(out)

    def to_bytes(self) -> bytes:
        payload = self.payload()
        header = _PACKET.pack(self.frame_index, int(self.mode), len(payload), zlib.crc32(payload))
        return header + payload

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())

    def bpp(self) -> float:
        """Bits por punto de la nube original."""
        return self.size_bytes * 8.0 / max(self.n_points, 1)

    @property
    def pose_values(self) -> np.ndarray:
        if self.mode != PredictionMode.INTER:
            raise BitstreamError("Sólo los paquetes inter llevan pose")
        return np.asarray(self.side_data, dtype=np.float32)

    @classmethod
    def from_bytes(cls, data: bytes, offset: int, n_blocks: int) -> Tuple["FramePacket", int]:
        """
        Lee un paquete.

        Args:
            data: Bytes del contenedor
            offset: Posición del paquete
            n_blocks: Bloques por frame (según la geometría de la cabecera)

        Returns:
            (paquete, desplazamiento tras el paquete)

        Raises:
            CorruptStreamError: Si el paquete está truncado, el CRC no coincide
                o la carga no se consume exactamente
        """
        if len(data) - offset < _PACKET.size:
            raise CorruptStreamError("Cabecera de paquete truncada")
        frame_index, mode, size, crc = _PACKET.unpack_from(data, offset)
        start = offset + _PACKET.size
        payload = bytes(data[start:start + size])
        if len(payload) != size:
            raise CorruptStreamError(f"Paquete {frame_index} truncado")
        if zlib.crc32(payload) != crc:
            raise CorruptStreamError(f"CRC no válido en el paquete {frame_index}")
        try:
            mode = PredictionMode(mode)
        except ValueError:
            raise CorruptStreamError(f"Modo de predicción desconocido: {mode}")
        packet = cls._parse_payload(frame_index, mode, payload, n_blocks)
        return packet, start + size

    @classmethod
    def _parse_payload(cls, frame_index: int, mode: PredictionMode, payload: bytes, n_blocks: int) -> "FramePacket":
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if n < 0 or pos + n > len(payload):
                raise CorruptStreamError(f"Carga del paquete {frame_index} truncada")
            chunk = payload[pos:pos + n]
            pos += n
            return chunk

        def take_u32() -> int:
            return _U32.unpack(take(_U32.size))[0]

        n_points = take_u32()
        mask_data = take(take_u32())
        side_data: Union[bytes, np.ndarray]
        if mode == PredictionMode.INTRA:
            side_data = take(take_u32())
        else:
            side_data = np.asarray(_POSE.unpack(take(_POSE.size)), dtype=np.float32)
        blocks: List[BlockPayload] = []
        for _ in range(n_blocks):
            codes = _STEPS.unpack(take(_STEPS.size))
            blocks.append(BlockPayload(tuple(codes), take(take_u32())))
        if pos != len(payload):
            raise CorruptStreamError(f"Bytes sobrantes en el paquete {frame_index}")
        return cls(frame_index, mode, n_points, mask_data, side_data, tuple(blocks))


def blocks_per_frame(params: ProjectionParams, block: int = 64) -> int:
    return (-(-params.rows // block)) * (-(-params.cols // block))


def encode_stream(header: StreamHeader, packets: List[FramePacket]) -> bytes:
    return header.to_bytes() + b"".join(packet.to_bytes() for packet in packets)


def iter_packets(data: bytes, offset: int, header: StreamHeader) -> Iterator[FramePacket]:
    """Recorre los paquetes a partir de offset hasta el final de los datos."""
    n_blocks = blocks_per_frame(header.params)
    while offset < len(data):
        packet, offset = FramePacket.from_bytes(data, offset, n_blocks)
        yield packet


@dataclass(frozen=True)
class DamagedPacket:
    """Paquete con cabecera legible cuya carga no se pudo leer."""
    frame_index: int
    size_bytes: int
    error: CorruptStreamError


def scan_packets(data: bytes, offset: int, header: StreamHeader) -> Iterator[Union[FramePacket, DamagedPacket]]:
    """
    Recorre los paquetes sin detenerse en los dañados.

    Un paquete cuya cabecera se lee pero cuya carga falla (CRC, modo o
    formato) se entrega como DamagedPacket y se salta su tamaño declarado.
    Si la carga declarada sobrepasa el final de los datos, el recorrido
    termina tras entregarlo.

    Raises:
        CorruptStreamError: Si quedan bytes sin una cabecera de paquete completa
    """
    n_blocks = blocks_per_frame(header.params)
    while offset < len(data):
        if len(data) - offset < _PACKET.size:
            raise CorruptStreamError("Cabecera de paquete truncada")
        frame_index, _, size, _ = _PACKET.unpack_from(data, offset)
        end = offset + _PACKET.size + size
        try:
            packet, offset = FramePacket.from_bytes(data, offset, n_blocks)
        except CorruptStreamError as e:
            logger.warning(f"Paquete {frame_index} dañado, se salta: {e}")
            yield DamagedPacket(frame_index, min(end, len(data)) - offset, e)
            if end >= len(data):
                return
            offset = end
            continue
        yield packet


def decode_stream(data: bytes) -> Tuple[StreamHeader, List[FramePacket]]:
    """Divide un contenedor completo en cabecera y paquetes."""
    header, offset = StreamHeader.from_bytes(data)
    return header, list(iter_packets(data, offset, header))


class StreamWriter:
    """Escritura incremental de un contenedor."""

    def __init__(self, stream: BinaryIO, header: StreamHeader):
        self.stream = stream
        self.header = header
        self.bytes_written = 0
        self._write(header.to_bytes())

    def _write(self, data: bytes) -> None:
        self.stream.write(data)
        self.bytes_written += len(data)

    def write(self, packet: FramePacket) -> int:
        """Escribe un paquete y devuelve su tamaño en bytes."""
        data = packet.to_bytes()
        self._write(data)
        return len(data)


def read_stream_file(path: str) -> Tuple[StreamHeader, List[FramePacket]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise BitstreamError(f"No se pudo leer el contenedor {path}: {e}")
    return decode_stream(data)


def open_stream_file(path: str) -> Tuple[StreamHeader, Iterator[Union[FramePacket, DamagedPacket]]]:
    """Lee la cabecera de un contenedor y devuelve un recorrido tolerante de sus paquetes."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise BitstreamError(f"No se pudo leer el contenedor {path}: {e}")
    header, offset = StreamHeader.from_bytes(data)
    return header, scan_packets(data, offset, header)


def describe_packet(packet: FramePacket) -> str:
    """Resumen de una línea para logs y para `info`."""
    return (
        f"frame {packet.frame_index}: {packet.mode.name.lower()}, {packet.size_bytes} bytes, "
        f"{packet.n_points} puntos, {len(packet.blocks)} bloques"
    )
