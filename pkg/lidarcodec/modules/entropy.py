#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Entropy
--------------
Codificación sin pérdidas de los índices cuantificados (por subbanda, en
orden Morton), de la máscara de ocupación y de los quadtrees intra, todo
sobre el codificador de rango binario adaptativo.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np

from lidarcodec.modules.adwt import BLOCK_SIZE, SUBBANDS, QuantizedPyramid, morton_order, subband_slice
from lidarcodec.modules.prediction import (
    MACROBLOCK,
    MIN_LEAF,
    Direction,
    IntraSideInfo,
    MalformedSideInfoError,
    QuadLeaf,
)
from lidarcodec.modules.rangecoder import (
    BitDecoder,
    SymbolStream,
    decode_runs,
    decode_segments,
    encode_runs,
    encode_segments,
    encode_symbol_stream,
)

logger = logging.getLogger("lidarcodec.entropy")


class EntropyError(Exception):
    """Excepción específica para errores de codificación entrópica."""
    pass


class CorruptStreamError(EntropyError):
    """El flujo de bytes no es decodificable."""
    pass


def _build_scan() -> Tuple[np.ndarray, List[int]]:
    grid = np.arange(BLOCK_SIZE * BLOCK_SIZE).reshape(BLOCK_SIZE, BLOCK_SIZE)
    parts = []
    bounds = [0]
    for name, level in SUBBANDS:
        rows, cols = subband_slice(name, level)
        band = grid[rows, cols]
        parts.append(band.ravel()[morton_order(band.shape[0])])
        bounds.append(bounds[-1] + band.size)
    return np.concatenate(parts), bounds


# Posición plana de cada coeficiente en el orden de transmisión y límites de subbanda
_SCAN, _BOUNDS = _build_scan()


def encode_block(indices: QuantizedPyramid) -> bytes:
    """
    Codifica los índices de un bloque.

    Cada subbanda (en el orden de SUBBANDS) tiene su propio grupo de
    contextos: bandera de significancia, rachas de ceros y magnitudes en
    Exp-Golomb y bit de signo.
    """
    values = indices.indices.ravel()[_SCAN]
    return encode_segments(values, _BOUNDS)


def decode_block(data: bytes) -> QuantizedPyramid:
    """
    Inversa de encode_block.

    Raises:
        CorruptStreamError: Si el flujo está truncado o es inconsistente
    """
    try:
        values = decode_segments(data, _BOUNDS)
    except ValueError as e:
        raise CorruptStreamError(f"Bloque corrupto: {e}")
    flat = np.zeros(BLOCK_SIZE * BLOCK_SIZE, dtype=np.int64)
    flat[_SCAN] = values
    return QuantizedPyramid(flat.reshape(BLOCK_SIZE, BLOCK_SIZE))


def mask_runs(mask: np.ndarray) -> List[int]:
    """Rachas alternas (vacío, ocupado, vacío, ...) en orden raster; la primera puede ser 0."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def encode_mask(mask: np.ndarray) -> bytes:
    """Codifica la máscara de ocupación por rachas."""
    return encode_runs(mask_runs(mask))


def decode_mask(data: bytes, shape: Tuple[int, int]) -> np.ndarray:
    """
    Inversa de encode_mask.

    Raises:
        CorruptStreamError: Si el flujo no describe exactamente rows*cols píxeles
    """
    try:
        flat = decode_runs(data, int(shape[0]) * int(shape[1]))
    except ValueError as e:
        raise CorruptStreamError(f"Máscara corrupta: {e}")
    return flat.reshape(shape)


# Contextos del quadtree
_CTX_SPLIT_16 = 0
_CTX_SPLIT_8 = 1
_CTX_DIR_HIGH = 2
_CTX_DIR_LOW = 3  # + bit alto
_SIDE_CONTEXTS = 5


def _side_symbols(side: IntraSideInfo) -> SymbolStream:
    side.validate()
    by_origin: Dict[Tuple[int, int], QuadLeaf] = {(leaf.row, leaf.col): leaf for leaf in side.leaves}
    contexts: List[int] = []
    symbols: List[int] = []

    def emit(ctx: int, bit: int) -> None:
        contexts.append(ctx)
        symbols.append(bit)

    def node(row: int, col: int, size: int) -> None:
        leaf = by_origin.get((row, col))
        is_leaf = leaf is not None and leaf.size == size
        if size > MIN_LEAF:
            emit(_CTX_SPLIT_16 if size == MACROBLOCK else _CTX_SPLIT_8, 0 if is_leaf else 1)
        if is_leaf:
            code = int(leaf.direction)
            emit(_CTX_DIR_HIGH, code >> 1)
            emit(_CTX_DIR_LOW + (code >> 1), code & 1)
            return
        half = size // 2
        for dr, dc in ((0, 0), (0, half), (half, 0), (half, half)):
            node(row + dr, col + dc, half)

    for mb_r in range(side.mb_rows):
        for mb_c in range(side.mb_cols):
            node(mb_r * MACROBLOCK, mb_c * MACROBLOCK, MACROBLOCK)
    return SymbolStream(contexts, symbols)


def encode_side_info(side: IntraSideInfo) -> bytes:
    """Codifica los quadtrees: bandera de división por nodo > 4x4 y 2 bits por hoja."""
    return encode_symbol_stream(_side_symbols(side), _SIDE_CONTEXTS)


def decode_side_info(data: bytes, mb_rows: int, mb_cols: int) -> IntraSideInfo:
    """
    Inversa de encode_side_info.

    Raises:
        CorruptStreamError: Si el flujo no se consume exactamente
    """
    decoder = BitDecoder(data, _SIDE_CONTEXTS)
    leaves: List[QuadLeaf] = []

    def node(row: int, col: int, size: int) -> None:
        split = 0
        if size > MIN_LEAF:
            split = decoder.decode(_CTX_SPLIT_16 if size == MACROBLOCK else _CTX_SPLIT_8)
        if not split:
            high = decoder.decode(_CTX_DIR_HIGH)
            low = decoder.decode(_CTX_DIR_LOW + high)
            leaves.append(QuadLeaf(row, col, size, Direction((high << 1) | low)))
            return
        half = size // 2
        for dr, dc in ((0, 0), (0, half), (half, 0), (half, half)):
            node(row + dr, col + dc, half)

    for mb_r in range(mb_rows):
        for mb_c in range(mb_cols):
            node(mb_r * MACROBLOCK, mb_c * MACROBLOCK, MACROBLOCK)
            if decoder.failed:
                raise CorruptStreamError("Quadtree intra corrupto")

    if not decoder.finished_cleanly():
        raise CorruptStreamError("Quadtree intra corrupto: bytes sobrantes o faltantes")
    side = IntraSideInfo(mb_rows, mb_cols, tuple(leaves))
    try:
        side.validate()
    except MalformedSideInfoError as e:
        raise CorruptStreamError(str(e))
    return side


def side_info_symbol_stream(side: IntraSideInfo) -> SymbolStream:
    """Bits del quadtree antes de la codificación de rango (para medir su coste)."""
    return _side_symbols(side)
