#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Report
-------------
Informes de ejecución: una fila por frame (modo, tamaño, bpp, objetivo,
tiempos, MSE y PSNR) y agregados que se recalculan siempre a partir de
las filas. Salida en CSV determinista.
"""

import os
import csv
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from lidarcodec.modules.metrics import PSNR_INF, bitrate_error, peak_bitrate_error

logger = logging.getLogger("lidarcodec.report")

FRAME_COLUMNS = ("index", "mode", "bytes", "bpp", "target_bpp", "mse", "psnr")
TIMING_COLUMNS = ("encode_ms", "decode_ms")


def format_value(value: Any) -> str:
    """Formato estable para CSV: 6 decimales en flotantes, 'inf' y vacío para None."""
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6f}"
    return str(value)


@dataclass
class FrameRow:
    """Resultado de un frame."""
    index: int
    mode: str
    bytes: int
    bpp: float
    target_bpp: Optional[float] = None
    encode_ms: float = 0.0
    decode_ms: float = 0.0
    mse: Optional[float] = None
    psnr: Optional[float] = None

    def values(self, timing: bool = False) -> List[str]:
        columns = FRAME_COLUMNS + (TIMING_COLUMNS if timing else ())
        return [format_value(getattr(self, name)) for name in columns]


@dataclass
class RunReport:
    """
    Informe de una ejecución.

    Attributes:
        name: Subcomando o experimento
        rows: Filas por frame en orden
        metadata: Datos adicionales (configuración, ajustes de modelos...)
    """
    name: str
    rows: List[FrameRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def add(self, row: FrameRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def total_bytes(self) -> int:
        return sum(row.bytes for row in self.rows)

    @property
    def mean_bpp(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([row.bpp for row in self.rows]))

    def _targets(self) -> Optional[List[FrameRow]]:
        targeted = [row for row in self.rows if row.target_bpp is not None]
        return targeted or None

    @property
    def bitrate_error(self) -> Optional[float]:
        """e_R medio sobre los frames con objetivo; None sin control de tasa."""
        targeted = self._targets()
        if targeted is None:
            return None
        return bitrate_error([row.target_bpp for row in targeted], [row.bpp for row in targeted])

    @property
    def peak_bitrate_error(self) -> Optional[float]:
        targeted = self._targets()
        if targeted is None:
            return None
        return peak_bitrate_error([row.target_bpp for row in targeted], [row.bpp for row in targeted])

    @property
    def mean_mse(self) -> Optional[float]:
        values = [row.mse for row in self.rows if row.mse is not None]
        return float(np.mean(values)) if values else None

    @property
    def mean_psnr(self) -> Optional[float]:
        """Media de los PSNR finitos; PSNR_INF si todos los frames son idénticos."""
        values = [row.psnr for row in self.rows if row.psnr is not None]
        if not values:
            return None
        finite = [v for v in values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else PSNR_INF

    def aggregates(self) -> Dict[str, Any]:
        return {
            "frames": len(self.rows),
            "total_bytes": self.total_bytes,
            "mean_bpp": self.mean_bpp,
            "bitrate_error": self.bitrate_error,
            "peak_bitrate_error": self.peak_bitrate_error,
            "mean_mse": self.mean_mse,
            "mean_psnr": self.mean_psnr,
        }

    def mode_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for row in self.rows:
            counts[row.mode] = counts.get(row.mode, 0) + 1
        return counts

    def write_csv(self, path: str, timing: bool = False) -> None:
        """
        Escribe las filas y, como comentarios finales, los agregados.

        Args:
            path: Ruta del CSV
            timing: Incluir columnas de tiempo (hacen que la salida no sea reproducible)
        """
        header = list(FRAME_COLUMNS + (TIMING_COLUMNS if timing else ()))
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in self.rows:
                writer.writerow(row.values(timing))
            for key, value in self.aggregates().items():
                f.write(f"# {key},{format_value(value)}\n")
        logger.info(f"Informe {self.name} escrito en {path} ({len(self.rows)} frames)")


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_table(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]], notes: Optional[Dict[str, Any]] = None) -> None:
    """CSV genérico (curvas R-D, ablación) con notas finales opcionales."""
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])
        for key, value in (notes or {}).items():
            f.write(f"# {key},{format_value(value)}\n")
    logger.info(f"Tabla escrita en {path} ({len(rows)} filas)")


def read_frame_rows(path: str) -> List[FrameRow]:
    """Vuelve a leer las filas de un informe (ignora los agregados)."""
    rows: List[FrameRow] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    for record in csv.DictReader(lines):
        def number(key: str) -> Optional[float]:
            value = record.get(key, "")
            return float(value) if value not in ("", None) else None

        rows.append(FrameRow(
            index=int(record["index"]),
            mode=record["mode"],
            bytes=int(record["bytes"]),
            bpp=float(record["bpp"]),
            target_bpp=number("target_bpp"),
            encode_ms=number("encode_ms") or 0.0,
            decode_ms=number("decode_ms") or 0.0,
            mse=number("mse"),
            psnr=number("psnr"),
        ))
    return rows
