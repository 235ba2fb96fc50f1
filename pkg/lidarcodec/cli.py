#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo CLI
----------
Interfaz de línea de comandos: encode, decode, rd-curve, ablation,
stream-sim e info. Los errores de configuración terminan con código 2 y
el resto de errores del códec con código 1.
"""

import argparse
import logging
import math
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.table import Table

from lidarcodec import __version__
from lidarcodec.core.bitstream import BitstreamError
from lidarcodec.evaluation import experiments
from lidarcodec.evaluation.ablation import TRANSFORMS, psnr_table
from lidarcodec.evaluation.report import RunReport
from lidarcodec.evaluation.synthetic import EvaluationError
from lidarcodec.modules.entropy import EntropyError
from lidarcodec.modules.metrics import MetricsError
from lidarcodec.modules.pointcloud_io import PointCloudError
from lidarcodec.modules.pose_estimation import PoseEstimationError, PoseFileError, save_pose_file
from lidarcodec.modules.prediction import PredictionError
from lidarcodec.modules.rangecoder import configure_backend
from lidarcodec.modules.ratecontrol import (
    BitrateSchedule,
    RateControlError,
    ScheduleError,
    load_schedule,
)
from lidarcodec.utils.config_manager import CodecSettings, ConfigError, ConfigManager
from lidarcodec.utils.logger import setup_logger

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2

CONFIG_ERRORS = (ConfigError, ScheduleError, PoseFileError)
CODEC_ERRORS = (
    PointCloudError,
    PredictionError,
    PoseEstimationError,
    EntropyError,
    RateControlError,
    BitstreamError,
    MetricsError,
    EvaluationError,
    OSError,
)

console = Console()
logger = logging.getLogger("lidarcodec.cli")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Lista de números no válida: {text}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Archivo de configuración JSON")
    common.add_argument("--seed", type=int, help="Semilla de las entradas sintéticas")
    common.add_argument("--report", help="CSV de salida con el informe")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Nivel de log")

    codec = argparse.ArgumentParser(add_help=False)
    codec.add_argument("--pose-source", choices=["file", "icp", "none"], help="Origen de la pose inter")
    codec.add_argument("--pose-file", help="Archivo de poses (12 valores por línea)")

    parser = argparse.ArgumentParser(
        prog="lidarcodec",
        description="Códec de imágenes de rango LiDAR con a-DWT y control de tasa",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[common, codec], help="Codifica una secuencia en un contenedor .dcmp")
    p.add_argument("input", help="Directorio, patrón glob, archivo o synthetic:N")
    p.add_argument("-o", "--output", required=True, help="Contenedor .dcmp de salida")
    p.add_argument("--q", type=float, help="Paso base constante")
    rate = p.add_mutually_exclusive_group()
    rate.add_argument("--target-bpp", type=float, help="bpp objetivo constante (activa el control de tasa)")
    rate.add_argument("--schedule", help="Calendario frame_index,target_bpp")
    p.add_argument("--timing", action="store_true", help="Incluir tiempos en el CSV")
    p.add_argument("--verify", action="store_true", help="Decodificar en paralelo y comprobar la sincronía")
    p.add_argument("--export-poses", help="Escribe las poses reales de una entrada sintética")

    p = sub.add_parser("decode", parents=[common], help="Decodifica un contenedor .dcmp")
    p.add_argument("input", help="Contenedor .dcmp")
    p.add_argument("-o", "--output", help="Directorio de salida de las nubes")
    p.add_argument("--format", default="kitti-bin", choices=["kitti-bin", "ply-ascii"])
    p.add_argument("--reference", help="Entrada original para calcular MSE y PSNR")
    p.add_argument("--timing", action="store_true", help="Incluir tiempos en el CSV")

    p = sub.add_parser("rd-curve", parents=[common, codec], help="Barrido de Q y ajuste de modelos R-D")
    p.add_argument("input")
    p.add_argument("--q", type=_float_list, help="Lista de pasos separada por comas")

    p = sub.add_parser("ablation", parents=[common], help="Comparación a-DWT / DWT / DCT a igual tasa")
    p.add_argument("input")
    p.add_argument("--bpp", type=_float_list, help="Lista de bpp objetivo separada por comas")
    p.add_argument("--transform", nargs="+", choices=TRANSFORMS, default=list(TRANSFORMS))

    p = sub.add_parser("stream-sim", parents=[common, codec], help="Streaming con control de tasa")
    p.add_argument("input")
    p.add_argument("--schedule", help="Calendario frame_index,target_bpp (por defecto el del conjunto de datos)")
    p.add_argument("--timing", action="store_true", help="Incluir tiempos en el CSV")
    p.add_argument("--verify", action="store_true", help="Decodificar en paralelo y comprobar la sincronía")

    p = sub.add_parser("info", parents=[common], help="Describe un contenedor .dcmp")
    p.add_argument("input")
    return parser


def _load_settings(args: argparse.Namespace) -> ConfigManager:
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("evaluation", {})["seed"] = args.seed
    if getattr(args, "log_level", None):
        overrides.setdefault("system", {})["log_level"] = args.log_level
    return ConfigManager(args.config, overrides)


def _fmt(value: Optional[float], digits: int = 3, scale: float = 1.0, suffix: str = "") -> str:
    if value is None:
        return "-"
    if math.isinf(value):
        return "inf"
    return f"{value * scale:.{digits}f}{suffix}"


def print_report(report: RunReport, max_rows: int = 20) -> None:
    table = Table(title=f"{report.name}: {len(report)} frames")
    for column in ("frame", "modo", "bytes", "bpp", "objetivo", "PSNR (dB)"):
        table.add_column(column, justify="right")
    for row in report.rows[:max_rows]:
        table.add_row(str(row.index), row.mode, str(row.bytes), _fmt(row.bpp), _fmt(row.target_bpp), _fmt(row.psnr, 2))
    if len(report) > max_rows:
        table.add_row("...", "", "", "", "", "")
    console.print(table)

    summary = Table(show_header=False, title="Resumen")
    summary.add_row("bpp medio", _fmt(report.mean_bpp))
    summary.add_row("PSNR medio", _fmt(report.mean_psnr, 2, suffix=" dB"))
    if report.bitrate_error is not None:
        summary.add_row("Error de bitrate medio", _fmt(report.bitrate_error, 2, 100.0, " %"))
        summary.add_row("Error de bitrate pico", _fmt(report.peak_bitrate_error, 2, 100.0, " %"))
    counts = report.mode_counts()
    summary.add_row("Frames intra / inter", f"{counts.get('intra', 0)} / {counts.get('inter', 0)}")
    if "skipped" in report.metadata:
        summary.add_row("Paquetes descartados", str(report.metadata["skipped"]))
    console.print(summary)


def _schedule(args: argparse.Namespace) -> Optional[BitrateSchedule]:
    if getattr(args, "schedule", None):
        return load_schedule(args.schedule)
    if getattr(args, "target_bpp", None) is not None:
        if not args.target_bpp > 0:
            raise ScheduleError(f"--target-bpp debe ser positivo: {args.target_bpp}")
        return BitrateSchedule.constant(args.target_bpp)
    return None


def cmd_encode(args: argparse.Namespace, settings: CodecSettings) -> RunReport:
    params = experiments.projection_from_settings(settings)
    pose_source = experiments.build_pose_source_from_settings(settings, params, args.pose_source, args.pose_file)
    source = experiments.open_source(args.input, params, settings.evaluation.seed, settings.evaluation.prefetch_frames)
    report = experiments.run_encode(
        settings, source, params, pose_source, args.output, _schedule(args), args.q, args.verify,
    )
    if args.export_poses:
        if source.synthetic is None:
            raise EvaluationError("--export-poses sólo está disponible para entradas sintéticas")
        save_pose_file(source.synthetic.poses(), args.export_poses)
    return report


def cmd_decode(args: argparse.Namespace, settings: CodecSettings) -> RunReport:
    reference = None
    if args.reference:
        header_params = experiments.projection_from_settings(settings)
        reference = experiments.open_source(args.reference, header_params, settings.evaluation.seed)
    return experiments.run_decode(args.input, args.output, args.format, reference)


def cmd_rd_curve(args: argparse.Namespace, settings: CodecSettings) -> None:
    params = experiments.projection_from_settings(settings)
    pose_source = experiments.build_pose_source_from_settings(settings, params, args.pose_source, args.pose_file)
    source = experiments.open_source(args.input, params, settings.evaluation.seed)
    q_values = args.q or settings.evaluation.rd_q_values
    curve = experiments.run_rd_curve(settings, source.load_all(), params, pose_source, q_values)

    table = Table(title="Curva R-D")
    for column in ("Q", "bpp", "MSE", "PSNR (dB)"):
        table.add_column(column, justify="right")
    for point in curve.points:
        table.add_row(_fmt(point["q"], 4), _fmt(point["bpp"]), _fmt(point["mse"], 6), _fmt(point["psnr"], 2))
    console.print(table)
    fits = Table(show_header=False, title="Modelos ajustados")
    fits.add_row("D = a_D·Q²", f"a_D={curve.a_d:.5f}", f"CoD={curve.cod_d:.3f}")
    fits.add_row("R = a_R·Q^-b_R", f"a_R={curve.a_r:.4f}, b_R={curve.b_r:.4f}", f"CoD={curve.cod_r:.3f}")
    fits.add_row("R = b - a·ln Q", f"a={curve.log_a:.4f}, b={curve.log_b:.4f}", f"CoD={curve.cod_log:.3f}")
    console.print(fits)
    if args.report:
        curve.write_csv(args.report)


def cmd_ablation(args: argparse.Namespace, settings: CodecSettings) -> None:
    params = experiments.projection_from_settings(settings)
    source = experiments.open_source(args.input, params, settings.evaluation.seed)
    points = experiments.run_ablation_experiment(settings, source.load_all(), params, args.bpp, args.transform)

    table = Table(title="PSNR (dB) a igual tasa")
    table.add_column("transformada")
    bpps = sorted({p.target_bpp for p in points})
    for bpp in bpps:
        table.add_column(f"{bpp:.1f} bpp", justify="right")
    for transform, values in psnr_table(points).items():
        table.add_row(transform, *[_fmt(values.get(bpp), 2) for bpp in bpps])
    console.print(table)
    if args.report:
        experiments.write_ablation_csv(points, args.report)


def cmd_stream_sim(args: argparse.Namespace, settings: CodecSettings) -> RunReport:
    params = experiments.projection_from_settings(settings)
    pose_source = experiments.build_pose_source_from_settings(settings, params, args.pose_source, args.pose_file)
    source = experiments.open_source(args.input, params, settings.evaluation.seed, settings.evaluation.prefetch_frames)
    return experiments.run_stream_sim(settings, source, params, pose_source, _schedule(args), args.verify)


def cmd_info(args: argparse.Namespace, settings: CodecSettings) -> None:
    info = experiments.run_info(args.input)
    header = Table(show_header=False, title=f"Contenedor {args.input}")
    for key, value in info["header"].items():
        header.add_row(key, str(value))
    for key, value in info["summary"].items():
        header.add_row(key, str(value))
    console.print(header)

    packets = Table(title="Paquetes")
    for column in ("frame", "modo", "bytes", "puntos", "bpp"):
        packets.add_column(column, justify="right")
    for row in info["packets"]:
        packets.add_row(str(row["index"]), row["mode"], str(row["bytes"]), str(row["points"]), _fmt(row["bpp"]))
    console.print(packets)

    host = Table(show_header=False, title="Máquina")
    for key, value in info["host"].items():
        host.add_row(key, value)
    console.print(host)


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "rd-curve": cmd_rd_curve,
    "ablation": cmd_ablation,
    "stream-sim": cmd_stream_sim,
    "info": cmd_info,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Punto de entrada de la CLI.

    Returns:
        0 si todo va bien, 2 en errores de configuración, 1 en el resto
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        manager = _load_settings(args)
        settings = manager.get_settings()
        setup_logger(manager.get_section("system"))
        configure_backend(settings.system.jit)

        result = COMMANDS[args.command](args, settings)
        if isinstance(result, RunReport):
            print_report(result)
            if args.report:
                result.write_csv(args.report, timing=getattr(args, "timing", False) or settings.evaluation.timing)
    except CONFIG_ERRORS as e:
        console.print(f"[bold red]Error de configuración:[/bold red] {e}")
        return EXIT_CONFIG
    except CODEC_ERRORS as e:
        logger.error(f"Error en {args.command}: {str(e)}", exc_info=True)
        console.print(f"[bold red]Error:[/bold red] {e}")
        return EXIT_ERROR
    return EXIT_OK
