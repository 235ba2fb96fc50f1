#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo RangeCoder
-----------------
Codificador de rango binario adaptativo sin acarreo (32 bits, normalización
por bytes) con binarización Exp-Golomb de orden 0 y contextos adaptativos.

Los núcleos operan sobre arrays de estado para poder compilarse con numba;
si numba no está disponible (o LIDARCODEC_JIT=0) se ejecutan en Python puro
sobre listas y bytearray, con salida idéntica byte a byte.
"""

import logging
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

logger = logging.getLogger("lidarcodec.rangecoder")

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE >> 1
ADAPT_SHIFT = 4

TOP = 1 << 24
BOT = 1 << 16
MASK32 = 0xFFFFFFFF

# Número de contextos distintos por posición de bit en prefijos/sufijos
CTX_SPAN = 16
MAX_PREFIX = 40

# Índices del vector de estado
LOW, RANGE, POS, CODE, ERR = 0, 1, 2, 3, 4


class SymbolStream(NamedTuple):
    """Secuencia ordenada de pares (contexto, bit)."""
    contexts: List[int]
    symbols: List[int]


def _put_byte(st, out, byte):
    pos = st[POS]
    if pos < len(out):
        out[pos] = byte & 0xFF
    else:
        st[ERR] = 1
    st[POS] = pos + 1


def _get_byte(st, data):
    pos = st[POS]
    st[POS] = pos + 1
    if pos < len(data):
        return int(data[pos])
    st[ERR] = 1
    return 0


def _enc_normalize(st, out):
    while True:
        low = st[LOW]
        rng = st[RANGE]
        if (low ^ (low + rng)) < TOP:
            pass
        elif rng < BOT:
            rng = (-low) & (BOT - 1)
        else:
            break
        _put_byte(st, out, (low >> 24) & 0xFF)
        st[RANGE] = (rng << 8) & MASK32
        st[LOW] = (low << 8) & MASK32


def _dec_normalize(st, data):
    while True:
        low = st[LOW]
        rng = st[RANGE]
        if (low ^ (low + rng)) < TOP:
            pass
        elif rng < BOT:
            rng = (-low) & (BOT - 1)
        else:
            break
        st[CODE] = ((st[CODE] << 8) | _get_byte(st, data)) & MASK32
        st[RANGE] = (rng << 8) & MASK32
        st[LOW] = (low << 8) & MASK32


def _enc_bit(st, out, probs, ctx, bit):
    p0 = probs[ctx]
    r = st[RANGE] >> PROB_BITS
    if bit == 0:
        st[RANGE] = r * p0
        probs[ctx] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
    else:
        st[LOW] = st[LOW] + r * p0
        st[RANGE] = r * (PROB_ONE - p0)
        probs[ctx] = p0 - (p0 >> ADAPT_SHIFT)
    _enc_normalize(st, out)


def _dec_bit(st, data, probs, ctx):
    p0 = probs[ctx]
    r = st[RANGE] >> PROB_BITS
    v = ((st[CODE] - st[LOW]) & MASK32) // r
    if v >= PROB_ONE:
        st[ERR] = 1
    if v < p0:
        bit = 0
        st[RANGE] = r * p0
        probs[ctx] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT)
    else:
        bit = 1
        st[LOW] = st[LOW] + r * p0
        st[RANGE] = r * (PROB_ONE - p0)
        probs[ctx] = p0 - (p0 >> ADAPT_SHIFT)
    _dec_normalize(st, data)
    return bit


def _enc_finish(st, out):
    for _ in range(4):
        _put_byte(st, out, (st[LOW] >> 24) & 0xFF)
        st[LOW] = (st[LOW] << 8) & MASK32


def _dec_start(st, data):
    for _ in range(4):
        st[CODE] = ((st[CODE] << 8) | _get_byte(st, data)) & MASK32


def _enc_ueg(st, out, probs, ctx_prefix, ctx_suffix, value):
    v1 = value + 1
    nbits = 0
    t = v1
    while t > 0:
        nbits += 1
        t >>= 1
    for i in range(nbits - 1):
        _enc_bit(st, out, probs, ctx_prefix + min(i, CTX_SPAN - 1), 1)
    _enc_bit(st, out, probs, ctx_prefix + min(nbits - 1, CTX_SPAN - 1), 0)
    for i in range(nbits - 2, -1, -1):
        _enc_bit(st, out, probs, ctx_suffix + min(i, CTX_SPAN - 1), (v1 >> i) & 1)


def _dec_ueg(st, data, probs, ctx_prefix, ctx_suffix):
    n = 0
    while _dec_bit(st, data, probs, ctx_prefix + min(n, CTX_SPAN - 1)) == 1:
        n += 1
        if n > MAX_PREFIX or st[ERR] != 0:
            st[ERR] = 1
            return 0
    v1 = 1
    for i in range(n - 1, -1, -1):
        v1 = (v1 << 1) | _dec_bit(st, data, probs, ctx_suffix + min(i, CTX_SPAN - 1))
    return v1 - 1


# Disposición de contextos de un grupo (una subbanda o una clase de rachas)
CTX_FLAG = 0
CTX_RUN_PREFIX = 1
CTX_RUN_SUFFIX = CTX_RUN_PREFIX + CTX_SPAN
CTX_MAG_PREFIX = CTX_RUN_SUFFIX + CTX_SPAN
CTX_MAG_SUFFIX = CTX_MAG_PREFIX + CTX_SPAN
CTX_SIGN = CTX_MAG_SUFFIX + CTX_SPAN
GROUP_SIZE = CTX_SIGN + 1


def _encode_runs_kernel(values, bounds, st, out, probs):
    """Codifica cada segmento [bounds[s], bounds[s+1]) con bandera + rachas de ceros."""
    for s in range(len(bounds) - 1):
        base = s * GROUP_SIZE
        a = bounds[s]
        b = bounds[s + 1]
        nonzero = 0
        for i in range(a, b):
            if values[i] != 0:
                nonzero = 1
                break
        _enc_bit(st, out, probs, base + CTX_FLAG, nonzero)
        if nonzero == 0:
            continue
        pos = a
        while pos < b:
            run = 0
            while pos + run < b and values[pos + run] == 0:
                run += 1
            _enc_ueg(st, out, probs, base + CTX_RUN_PREFIX, base + CTX_RUN_SUFFIX, run)
            pos += run
            if pos == b:
                break
            v = values[pos]
            mag = v if v > 0 else -v
            _enc_ueg(st, out, probs, base + CTX_MAG_PREFIX, base + CTX_MAG_SUFFIX, mag - 1)
            _enc_bit(st, out, probs, base + CTX_SIGN, 1 if v < 0 else 0)
            pos += 1
    _enc_finish(st, out)


def _decode_runs_kernel(data, bounds, st, probs, values):
    _dec_start(st, data)
    for s in range(len(bounds) - 1):
        base = s * GROUP_SIZE
        a = bounds[s]
        b = bounds[s + 1]
        if _dec_bit(st, data, probs, base + CTX_FLAG) == 0:
            continue
        pos = a
        while pos < b:
            run = _dec_ueg(st, data, probs, base + CTX_RUN_PREFIX, base + CTX_RUN_SUFFIX)
            if st[ERR] != 0 or run > b - pos:
                st[ERR] = 1
                return
            pos += run
            if pos == b:
                break
            mag = _dec_ueg(st, data, probs, base + CTX_MAG_PREFIX, base + CTX_MAG_SUFFIX) + 1
            sign = _dec_bit(st, data, probs, base + CTX_SIGN)
            if st[ERR] != 0:
                return
            values[pos] = -mag if sign == 1 else mag
            pos += 1


def _encode_mask_runs_kernel(runs, st, out, probs):
    for i in range(len(runs)):
        base = (i & 1) * GROUP_SIZE
        _enc_ueg(st, out, probs, base + CTX_RUN_PREFIX, base + CTX_RUN_SUFFIX, runs[i])
    _enc_finish(st, out)


def _decode_mask_runs_kernel(data, total, st, probs, flat):
    _dec_start(st, data)
    filled = 0
    parity = 0
    while filled < total:
        base = parity * GROUP_SIZE
        run = _dec_ueg(st, data, probs, base + CTX_RUN_PREFIX, base + CTX_RUN_SUFFIX)
        if st[ERR] != 0 or run > total - filled or (run == 0 and filled > 0):
            st[ERR] = 1
            return
        if parity == 1:
            for i in range(filled, filled + run):
                flat[i] = 1
        filled += run
        parity = 1 - parity


def _encode_bits_kernel(contexts, symbols, st, out, probs):
    for i in range(len(symbols)):
        _enc_bit(st, out, probs, contexts[i], symbols[i])
    _enc_finish(st, out)


_KERNEL_NAMES = (
    "_put_byte", "_get_byte", "_enc_normalize", "_dec_normalize", "_enc_bit", "_dec_bit",
    "_enc_finish", "_dec_start", "_enc_ueg", "_dec_ueg", "_encode_runs_kernel",
    "_decode_runs_kernel", "_encode_mask_runs_kernel", "_decode_mask_runs_kernel",
    "_encode_bits_kernel",
)
_PYTHON_KERNELS = {name: globals()[name] for name in _KERNEL_NAMES}


class _Backend:
    """Selección de núcleos: JIT de numba o Python puro."""

    def __init__(self) -> None:
        self.jit = False
        self.info = "python"

    def enable_jit(self) -> None:
        g = globals()
        try:
            from numba import njit
        except ImportError:
            self.info = "python (numba no disponible)"
            return
        try:
            for name in _KERNEL_NAMES:
                g[name] = njit(cache=False)(_PYTHON_KERNELS[name])
            self.jit = True
            if not self._self_check():
                raise RuntimeError("salida distinta de la referencia en Python")
            self.info = "numba JIT"
        except Exception as e:  # noqa: BLE001 - cualquier fallo de compilación vuelve a Python
            logger.warning(f"No se pudo activar numba, se usa Python puro: {e}")
            self.disable_jit()
            self.info = "python (fallo de numba)"

    def disable_jit(self) -> None:
        globals().update(_PYTHON_KERNELS)
        self.jit = False
        self.info = "python"

    def _self_check(self) -> bool:
        values = [0, 3, 0, 0, -1, 7, 0, 0, 0, 2]
        bounds = [0, 4, 10]
        jit_bytes = encode_segments(values, bounds)
        self.jit = False
        globals_backup = {name: globals()[name] for name in _KERNEL_NAMES}
        globals().update(_PYTHON_KERNELS)
        try:
            py_bytes = encode_segments(values, bounds)
        finally:
            globals().update(globals_backup)
            self.jit = True
        return jit_bytes == py_bytes and decode_segments(jit_bytes, bounds) == values

    def state(self) -> "np.ndarray | list":
        if self.jit:
            return np.array([0, MASK32, 0, 0, 0], dtype=np.int64)
        return [0, MASK32, 0, 0, 0]

    def probs(self, n: int) -> "np.ndarray | list":
        if self.jit:
            return np.full(n, PROB_INIT, dtype=np.int64)
        return [PROB_INIT] * n

    def out_buffer(self, n: int) -> "np.ndarray | bytearray":
        if self.jit:
            return np.zeros(n, dtype=np.uint8)
        return bytearray(n)

    def ints(self, values: Sequence[int]) -> "np.ndarray | list":
        if self.jit:
            return np.asarray(values, dtype=np.int64)
        if isinstance(values, np.ndarray):
            return values.astype(np.int64).tolist()
        return [int(v) for v in values]

    def data(self, data: bytes) -> "np.ndarray | bytes":
        if self.jit:
            return np.frombuffer(bytes(data), dtype=np.uint8)
        return bytes(data)


BACKEND = _Backend()


def configure_backend(use_jit: bool) -> str:
    """
    Activa o desactiva la compilación JIT de los núcleos.

    Returns:
        Descripción del backend en uso
    """
    if use_jit and not BACKEND.jit:
        BACKEND.enable_jit()
    elif not use_jit and BACKEND.jit:
        BACKEND.disable_jit()
    logger.debug(f"Backend del codificador de rango: {BACKEND.info}")
    return BACKEND.info


class RangeCoderOverflow(Exception):
    """El buffer de salida del codificador se ha quedado corto."""
    pass


def _capacity(n_symbols: int) -> int:
    # Cota holgada: cada decisión binaria cuesta como mucho PROB_BITS bits
    return 64 + n_symbols * (2 * MAX_PREFIX + 24) * PROB_BITS // 8


def encode_segments(values: Sequence[int], bounds: Sequence[int]) -> bytes:
    """Codifica enteros con signo agrupados en segmentos (cada segmento con sus contextos)."""
    n_groups = max(len(bounds) - 1, 1)
    st = BACKEND.state()
    out = BACKEND.out_buffer(_capacity(len(values)))
    probs = BACKEND.probs(n_groups * GROUP_SIZE)
    _encode_runs_kernel(BACKEND.ints(values), BACKEND.ints(bounds), st, out, probs)
    if st[ERR]:
        raise RangeCoderOverflow("Desbordamiento del buffer de salida")
    return bytes(out[:int(st[POS])])


def decode_segments(data: bytes, bounds: Sequence[int]) -> List[int]:
    """
    Inversa de encode_segments.

    Raises:
        ValueError: Si el flujo es inconsistente o no se consume exactamente
    """
    total = int(bounds[-1]) if len(bounds) else 0
    n_groups = max(len(bounds) - 1, 1)
    st = BACKEND.state()
    probs = BACKEND.probs(n_groups * GROUP_SIZE)
    values = BACKEND.ints([0] * total)
    _decode_runs_kernel(BACKEND.data(data), BACKEND.ints(bounds), st, probs, values)
    if st[ERR] or int(st[POS]) != len(data):
        raise ValueError("Flujo de coeficientes corrupto")
    return [int(v) for v in values]


def encode_runs(runs: Sequence[int]) -> bytes:
    """Codifica longitudes de racha alternas (clase par / impar)."""
    st = BACKEND.state()
    out = BACKEND.out_buffer(_capacity(len(runs)))
    probs = BACKEND.probs(2 * GROUP_SIZE)
    _encode_mask_runs_kernel(BACKEND.ints(runs), st, out, probs)
    if st[ERR]:
        raise RangeCoderOverflow("Desbordamiento del buffer de salida")
    return bytes(out[:int(st[POS])])


def decode_runs(data: bytes, total: int) -> np.ndarray:
    """Reconstruye un vector binario de longitud total a partir de rachas alternas."""
    st = BACKEND.state()
    probs = BACKEND.probs(2 * GROUP_SIZE)
    flat = BACKEND.ints([0] * total) if not BACKEND.jit else np.zeros(total, dtype=np.int64)
    if total == 0:
        if len(data) != 0:
            raise ValueError("Flujo de máscara corrupto")
        return np.zeros(0, dtype=bool)
    _decode_mask_runs_kernel(BACKEND.data(data), total, st, probs, flat)
    if st[ERR] or int(st[POS]) != len(data):
        raise ValueError("Flujo de máscara corrupto")
    return np.asarray(flat, dtype=bool)


def encode_symbol_stream(stream: SymbolStream, n_contexts: int) -> bytes:
    """Codifica una secuencia de bits con sus contextos."""
    st = BACKEND.state()
    out = BACKEND.out_buffer(64 + len(stream.symbols) * 2)
    probs = BACKEND.probs(n_contexts)
    _encode_bits_kernel(BACKEND.ints(stream.contexts), BACKEND.ints(stream.symbols), st, out, probs)
    if st[ERR]:
        raise RangeCoderOverflow("Desbordamiento del buffer de salida")
    return bytes(out[:int(st[POS])])


class BitDecoder:
    """
    Decodificador bit a bit para estructuras cuyo contexto depende de lo ya
    decodificado (p. ej. el quadtree de la predicción intra).
    """

    def __init__(self, data: bytes, n_contexts: int):
        self._data = BACKEND.data(data)
        self._length = len(data)
        self._st = BACKEND.state()
        self._probs = BACKEND.probs(n_contexts)
        _dec_start(self._st, self._data)

    def decode(self, ctx: int) -> int:
        return int(_dec_bit(self._st, self._data, self._probs, ctx))

    @property
    def failed(self) -> bool:
        return bool(self._st[ERR])

    def finished_cleanly(self) -> bool:
        """True si no hubo errores y se consumieron exactamente todos los bytes."""
        return not self.failed and int(self._st[POS]) == self._length


def empirical_cost_bits(stream: SymbolStream, n_contexts: int) -> Tuple[float, int]:
    """Coste ideal (bits) de una SymbolStream con el mismo modelo adaptativo."""
    probs = [PROB_INIT] * n_contexts
    cost = 0.0
    for ctx, bit in zip(stream.contexts, stream.symbols):
        p0 = probs[ctx]
        p = p0 / PROB_ONE if bit == 0 else 1.0 - p0 / PROB_ONE
        cost -= np.log2(p)
        probs[ctx] = p0 + ((PROB_ONE - p0) >> ADAPT_SHIFT) if bit == 0 else p0 - (p0 >> ADAPT_SHIFT)
    return cost, len(stream.symbols)
