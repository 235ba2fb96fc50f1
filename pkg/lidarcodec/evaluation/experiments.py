#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo Experiments
------------------
Ejecución de los experimentos de la CLI: codificación y decodificación de
secuencias, curvas R-D con ajuste de modelos, ablación de transformadas,
simulación de streaming con calendario de tasas e inspección de
contenedores.
"""

import os
import glob
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence

from lidarcodec.core.bitstream import (
    DamagedPacket,
    FramePacket,
    MissingReferenceError,
    StreamWriter,
    blocks_per_frame,
    decode_stream,
    describe_packet,
    open_stream_file,
)
from lidarcodec.core.codec_manager import CodecOptions, FrameDecoder, FrameEncoder
from lidarcodec.evaluation.ablation import AblationPoint, TRANSFORMS, run_ablation
from lidarcodec.evaluation.report import FrameRow, RunReport, write_table
from lidarcodec.evaluation.synthetic import EvaluationError, SyntheticSequence, parse_synthetic_source
from lidarcodec.modules.entropy import CorruptStreamError
from lidarcodec.modules.metrics import mse, psnr, psnr_from_mse
from lidarcodec.modules.pointcloud_io import (
    SUPPORTED_FORMATS,
    PointCloud,
    ProjectionParams,
    dump_point_cloud,
    load_point_cloud_file,
    load_projection_file,
    project,
)
from lidarcodec.modules.pose_estimation import PoseSource, build_pose_source
from lidarcodec.modules.ratecontrol import (
    BitrateSchedule,
    InsufficientSamplesError,
    dataset_schedule,
    fit_dq_model,
    fit_rq_log_model,
    fit_rq_model,
)
from lidarcodec.utils.config_manager import CodecSettings, ConfigError
from lidarcodec.utils.frame_pipeline import FramePrefetcher
from lidarcodec.utils.system_info import SystemInfo

logger = logging.getLogger("lidarcodec.experiments")

_OUTPUT_EXTENSIONS = {"kitti-bin": ".bin", "ply-ascii": ".ply"}


def projection_from_settings(settings: CodecSettings) -> ProjectionParams:
    """Geometría de la configuración o del archivo de proyección indicado en ella."""
    projection = settings.projection
    if projection.file:
        return load_projection_file(projection.file)
    table = None
    if projection.row_table_file:
        try:
            with open(projection.row_table_file, "r", encoding="utf-8") as f:
                table = tuple(math.radians(float(v)) for v in f.read().split())
        except (OSError, ValueError) as e:
            raise ConfigError(f"Tabla de elevaciones no válida {projection.row_table_file}: {e}")
    return ProjectionParams(
        rows=projection.rows,
        cols=projection.cols,
        elevation_min=math.radians(projection.elev_min_deg),
        elevation_max=math.radians(projection.elev_max_deg),
        range_max=projection.range_max_m,
        row_elevations=table,
    )


@dataclass
class FrameSource:
    """
    Frames de entrada: una secuencia sintética o una lista de archivos.

    Attributes:
        name: Descripción de la fuente
        paths: Archivos de nube (vacío para fuentes sintéticas)
        synthetic: Secuencia sintética, si aplica
        prefetch: Frames leídos por adelantado en fuentes de archivo
    """
    name: str
    paths: List[str] = field(default_factory=list)
    synthetic: Optional[SyntheticSequence] = None
    prefetch: int = 4

    def __len__(self) -> int:
        return len(self.synthetic) if self.synthetic is not None else len(self.paths)

    def __iter__(self) -> Iterator[PointCloud]:
        if self.synthetic is not None:
            yield from self.synthetic
            return
        with FramePrefetcher(self.paths, load_point_cloud_file, self.prefetch) as frames:
            yield from frames

    def load_all(self) -> List[PointCloud]:
        return list(self)


def open_source(source: str, params: ProjectionParams, seed: int = 0, prefetch: int = 4) -> FrameSource:
    """
    Resuelve una entrada: `synthetic:N`, un directorio, un patrón glob o un archivo.

    Raises:
        EvaluationError: Si la entrada no contiene nubes legibles
    """
    n_synthetic = parse_synthetic_source(source)
    if n_synthetic is not None:
        return FrameSource(source, synthetic=SyntheticSequence(params, n_synthetic, seed))

    if os.path.isdir(source):
        candidates = [os.path.join(source, name) for name in os.listdir(source)]
    elif any(ch in source for ch in "*?["):
        candidates = glob.glob(source)
    elif os.path.isfile(source):
        candidates = [source]
    else:
        raise EvaluationError(f"Entrada no encontrada: {source}")

    suffixes = (".bin", ".pcd", ".ply")
    paths = sorted(path for path in candidates if path.lower().endswith(suffixes))
    if not paths:
        raise EvaluationError(f"La entrada no contiene nubes de puntos: {source}")
    logger.info(f"Entrada {source}: {len(paths)} archivos")
    return FrameSource(source, paths=paths, prefetch=prefetch)


def build_pose_source_from_settings(
    settings: CodecSettings,
    params: ProjectionParams,
    kind: Optional[str] = None,
    pose_file: Optional[str] = None,
) -> PoseSource:
    """
    Fuente de pose de la configuración (con posible sustitución desde la CLI).

    Raises:
        ConfigError: Si se pide la fuente 'file' sin archivo o el archivo no existe
    """
    prediction = settings.prediction
    kind = kind or prediction.pose_source
    pose_file = pose_file or prediction.pose_file
    if kind == "file":
        if not pose_file:
            raise ConfigError("--pose-source file requiere un archivo de poses")
        if not os.path.exists(pose_file):
            raise ConfigError(f"Archivo de poses no encontrado: {pose_file}")
    return build_pose_source(
        kind, params, pose_file,
        kappa=prediction.kappa,
        max_iterations=prediction.icp_max_iterations,
        trim_ratio=prediction.icp_trim_ratio,
        min_pairs=prediction.icp_min_pairs,
        tolerance=prediction.icp_tolerance,
    )


def build_encoder(
    settings: CodecSettings,
    params: ProjectionParams,
    pose_source: PoseSource,
    rate_control: bool = False,
    transform: str = "adwt",
) -> FrameEncoder:
    options = CodecOptions.from_settings(settings, transform)
    return FrameEncoder(params, options, pose_source, settings.ratecontrol if rate_control else None)


def _row(index: int, encoded, decode_ms: float = 0.0) -> FrameRow:
    error = mse(encoded.image, encoded.reconstruction)
    return FrameRow(
        index=index,
        mode=encoded.packet.mode.name.lower(),
        bytes=encoded.packet.size_bytes,
        bpp=encoded.bpp,
        target_bpp=encoded.target_bpp,
        encode_ms=encoded.encode_ms,
        decode_ms=decode_ms,
        mse=error,
        psnr=psnr_from_mse(error, encoded.image.params.range_max),
    )


def run_encode(
    settings: CodecSettings,
    source: FrameSource,
    params: ProjectionParams,
    pose_source: PoseSource,
    output: Optional[str] = None,
    schedule: Optional[BitrateSchedule] = None,
    q: Optional[float] = None,
    verify: bool = False,
    name: str = "encode",
) -> RunReport:
    """
    Codifica una secuencia.

    Args:
        settings: Configuración validada
        source: Frames de entrada
        params: Geometría de proyección
        pose_source: Fuente de pose
        output: Contenedor .dcmp de salida (None para no escribirlo)
        schedule: Calendario de bpp objetivo; None para Q constante
        q: Paso base constante (por defecto el de la configuración)
        verify: Decodificar cada paquete y comprobar la sincronía con el codificador

    Returns:
        RunReport con una fila por frame

    Raises:
        EvaluationError: Si verify detecta una desincronización
    """
    encoder = build_encoder(settings, params, pose_source, rate_control=schedule is not None)
    decoder = FrameDecoder(encoder.header) if verify else None
    report = RunReport(name, metadata={"source": source.name, "frames": len(source)})

    stream = open(output, "wb") if output else None
    try:
        writer = StreamWriter(stream, encoder.header) if stream else None
        for index, cloud in enumerate(source):
            target = schedule.target_for(index) if schedule is not None else None
            encoded = encoder.encode(cloud, target, q)
            if writer is not None:
                writer.write(encoded.packet)
            decode_ms = 0.0
            if decoder is not None:
                packet, _ = FramePacket.from_bytes(encoded.packet.to_bytes(), 0, blocks_per_frame(params))
                decoded = decoder.decode(packet)
                decode_ms = decoded.decode_ms
                if not decoded.image.equals(encoded.reconstruction):
                    raise EvaluationError(f"Codificador y decodificador desincronizados en el frame {index}")
            report.add(_row(index, encoded, decode_ms))
    finally:
        if stream is not None:
            stream.close()

    if output:
        logger.info(f"Contenedor escrito en {output}: {report.total_bytes} bytes de paquetes")
    return report


def run_decode(
    container: str,
    output_dir: Optional[str] = None,
    fmt: str = "kitti-bin",
    reference: Optional[FrameSource] = None,
) -> RunReport:
    """
    Decodifica un contenedor.

    Los paquetes dañados (CRC o formato) se saltan y los inter sin referencia
    se descartan hasta la siguiente trama intra; el número de descartes queda
    en metadata["skipped"].

    Args:
        container: Ruta del .dcmp
        output_dir: Directorio donde escribir las nubes (None para no escribirlas)
        fmt: Formato de salida ("kitti-bin" o "ply-ascii")
        reference: Frames originales para calcular MSE y PSNR

    Returns:
        RunReport con una fila por frame decodificado
    """
    if fmt not in _OUTPUT_EXTENSIONS:
        raise EvaluationError(f"Formato de salida no soportado: {fmt} (soportados: {SUPPORTED_FORMATS})")
    header, packets = open_stream_file(container)
    decoder = FrameDecoder(header)
    originals = list(reference) if reference is not None else None
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)

    report = RunReport("decode", metadata={"source": container})
    seen = 0
    skipped = 0
    for packet in packets:
        seen += 1
        if isinstance(packet, DamagedPacket):
            decoder.mark_lost(packet.frame_index)
            skipped += 1
            continue
        try:
            decoded = decoder.decode(packet)
        except MissingReferenceError as e:
            logger.warning(str(e))
            skipped += 1
            continue
        except CorruptStreamError as e:
            logger.warning(str(e))
            decoder.mark_lost(packet.frame_index)
            skipped += 1
            continue
        error = None
        quality = None
        if originals is not None and packet.frame_index < len(originals):
            original = project(originals[packet.frame_index], header.params)
            error = mse(original, decoded.image)
            quality = psnr(original, decoded.image)
        if output_dir:
            path = os.path.join(output_dir, f"frame_{packet.frame_index:06d}{_OUTPUT_EXTENSIONS[fmt]}")
            with open(path, "wb") as f:
                f.write(dump_point_cloud(decoded.cloud, fmt))
        report.add(FrameRow(
            index=packet.frame_index,
            mode=packet.mode.name.lower(),
            bytes=packet.size_bytes,
            bpp=packet.bpp(),
            decode_ms=decoded.decode_ms,
            mse=error,
            psnr=quality,
        ))
    report.metadata["packets"] = seen
    report.metadata["skipped"] = skipped
    return report


@dataclass
class RdCurve:
    """Barrido de Q constante y modelos ajustados."""
    points: List[Dict[str, float]]
    a_d: float
    cod_d: float
    a_r: float
    b_r: float
    cod_r: float
    log_a: float
    log_b: float
    cod_log: float

    def fits(self) -> Dict[str, float]:
        return {
            "a_D": self.a_d, "CoD_D": self.cod_d,
            "a_R": self.a_r, "b_R": self.b_r, "CoD_R": self.cod_r,
            "log_a": self.log_a, "log_b": self.log_b, "CoD_log": self.cod_log,
        }

    def write_csv(self, path: str) -> None:
        rows = [[p["q"], p["bpp"], p["mse"], p["psnr"]] for p in self.points]
        write_table(path, ("q", "bpp", "mse", "psnr"), rows, self.fits())


def run_rd_curve(
    settings: CodecSettings,
    clouds: Sequence[PointCloud],
    params: ProjectionParams,
    pose_source: PoseSource,
    q_values: Sequence[float],
) -> RdCurve:
    """
    Barrido de Q constante sobre los mismos frames y ajuste de los modelos
    D = a_D·Q², R = a_R·Q^(-b_R) y R = b - a·ln Q.

    Raises:
        InsufficientSamplesError: Con menos de tres valores de Q distintos
        DegenerateFitError: Desde los ajustes
    """
    if len(set(q_values)) < 3:
        raise InsufficientSamplesError(f"Se necesitan al menos 3 valores de Q distintos: {list(q_values)}")
    points: List[Dict[str, float]] = []
    for q in q_values:
        encoder = build_encoder(settings, params, pose_source)
        rows = [_row(i, encoder.encode(cloud, None, q)) for i, cloud in enumerate(clouds)]
        report = RunReport("rd", rows)
        mean_mse = report.mean_mse or 0.0
        points.append({
            "q": float(q),
            "bpp": report.mean_bpp,
            "mse": mean_mse,
            "psnr": psnr_from_mse(mean_mse, params.range_max),
        })
        logger.info(f"Q={q}: {report.mean_bpp:.3f} bpp, MSE {mean_mse:.6f}")

    a_d, cod_d = fit_dq_model([(p["q"], p["mse"]) for p in points])
    a_r, b_r, cod_r = fit_rq_model([(p["q"], p["bpp"]) for p in points])
    log_a, log_b, cod_log = fit_rq_log_model([(p["q"], p["bpp"]) for p in points])
    return RdCurve(points, a_d, cod_d, a_r, b_r, cod_r, log_a, log_b, cod_log)


def run_ablation_experiment(
    settings: CodecSettings,
    clouds: Sequence[PointCloud],
    params: ProjectionParams,
    bpps: Optional[Sequence[float]] = None,
    transforms: Sequence[str] = TRANSFORMS,
) -> List[AblationPoint]:
    bpps = list(bpps or settings.evaluation.ablation_bpps)
    options = CodecOptions.from_settings(settings)
    return run_ablation(clouds, params, bpps, transforms, options, settings.evaluation.bpp_tolerance)


def write_ablation_csv(points: Sequence[AblationPoint], path: str) -> None:
    rows = [[p.transform, p.target_bpp, p.q, p.bpp, p.mse, p.psnr, int(p.converged)] for p in points]
    write_table(path, ("transform", "target_bpp", "q", "bpp", "mse", "psnr", "converged"), rows)


def run_stream_sim(
    settings: CodecSettings,
    source: FrameSource,
    params: ProjectionParams,
    pose_source: PoseSource,
    schedule: Optional[BitrateSchedule] = None,
    verify: bool = False,
) -> RunReport:
    """
    Codificación con control de tasa siguiendo un calendario de bpp.

    Sin calendario se usa el escalonado 30/40/30 del conjunto de datos
    configurado.
    """
    if schedule is None:
        schedule = dataset_schedule(settings.ratecontrol.dataset, len(source))
    report = run_encode(settings, source, params, pose_source, schedule=schedule, verify=verify, name="stream-sim")
    report.metadata["schedule"] = list(schedule.steps)
    logger.info(
        f"Simulación: e_R medio {100 * (report.bitrate_error or 0):.2f} %, "
        f"pico {100 * (report.peak_bitrate_error or 0):.2f} %"
    )
    return report


def run_info(container: str) -> Dict[str, Any]:
    """
    Describe un contenedor: cabecera, paquetes y máquina.

    Returns:
        Diccionario con "header", "packets" (lista de dicts), "summary" y "host"
    """
    with open(container, "rb") as f:
        data = f.read()
    header, packets = decode_stream(data)
    params = header.params
    packet_rows = [
        {
            "index": p.frame_index,
            "mode": p.mode.name.lower(),
            "bytes": p.size_bytes,
            "points": p.n_points,
            "bpp": p.bpp(),
            "text": describe_packet(p),
        }
        for p in packets
    ]
    intra = sum(1 for p in packets if p.mode.name == "INTRA")
    return {
        "header": {
            "version": header.version,
            "rows": params.rows,
            "cols": params.cols,
            "elev_min_deg": math.degrees(params.elevation_min),
            "elev_max_deg": math.degrees(params.elevation_max),
            "range_max_m": params.range_max,
            "row_table": params.row_elevations is not None,
            "q_min": header.q_min,
            "rate_control": header.rate_control,
        },
        "packets": packet_rows,
        "summary": {
            "bytes": len(data),
            "frames": len(packets),
            "intra": intra,
            "inter": len(packets) - intra,
        },
        "host": SystemInfo().summary(),
    }

