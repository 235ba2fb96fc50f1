#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo RateControl
------------------
Control de tasa por optimización tasa-distorsión: reparto de bits por
energía entre bloques, estimación de lambda con los modelos D-Q cuadrático
y R-Q hiperbólico, resolución del paso óptimo y adaptación LMS de los
parámetros por posición de bloque.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lidarcodec.utils.config_manager import RateControlSettings

logger = logging.getLogger("lidarcodec.ratecontrol")

DEFAULT_Q_MIN = 0.001
DEFAULT_Q_MAX = 32.0
DEFAULT_LAMBDA_MIN = 1e-6
DEFAULT_LAMBDA_MAX = 1e6
DEFAULT_PARAM_MIN = 1e-4
DEFAULT_PARAM_MAX = 1e2
MIN_BLOCK_BITS = 64

# Ventana de muestras (Q, D, R) usada en los reajustes periódicos
SAMPLE_WINDOW = 512
BIAS_LIMITS = (0.05, 20.0)


class RateControlError(Exception):
    """Excepción específica para errores del control de tasa."""
    pass


class DegenerateFitError(RateControlError):
    """Todas las muestras tienen el mismo Q."""
    pass


class InsufficientSamplesError(RateControlError):
    """Menos de tres muestras para el ajuste."""
    pass


class ScheduleError(Exception):
    """Archivo de calendario de tasas mal formado."""
    pass


@dataclass(frozen=True)
class RDModel:
    """Constantes de los modelos D = a_D·Q² y R = a_R·Q^(-b_R)."""
    a_d: float
    a_r: float
    b_r: float
    rho: float = 1.0

    def __post_init__(self) -> None:
        if not (self.a_d > 0 and self.a_r > 0 and self.b_r > 0):
            raise RateControlError(f"Constantes del modelo no válidas: {self}")
        if not 0.0 <= self.rho <= 1.0:
            raise RateControlError(f"rho fuera de [0, 1]: {self.rho}")

    def rate(self, q: float) -> float:
        return self.a_r * q ** (-self.b_r)

    def distortion(self, q: float) -> float:
        return self.a_d * q * q

    def slope(self, q: float) -> float:
        """-dD/dR en Q (lambda del modelo)."""
        return 2.0 * self.a_d / (self.a_r * self.b_r) * q ** (self.b_r + 2.0)


DATASET_MODELS: Dict[str, RDModel] = {
    "kitti": RDModel(0.0100, 0.86, 0.277),
    "nuscenes": RDModel(0.0109, 1.82, 0.234),
    "waymo": RDModel(0.0101, 0.72, 0.243),
}

# Calendario por defecto de stream-sim: (fracción de frames, bpp)
DATASET_SCHEDULES: Dict[str, Tuple[Tuple[float, float], ...]] = {
    "kitti": ((0.3, 1.5), (0.4, 1.3), (0.3, 1.7)),
    "nuscenes": ((0.3, 1.5), (0.4, 2.5), (0.3, 2.0)),
    "waymo": ((0.3, 2.0), (0.4, 1.5), (0.3, 1.0)),
}


def dataset_model(name: str) -> RDModel:
    try:
        return DATASET_MODELS[name.lower()]
    except KeyError:
        raise RateControlError(f"Conjunto de datos no reconocido: {name}")


@dataclass
class BlockRCState:
    """Estado del control de tasa de una posición de bloque."""
    rc_alpha: float = 0.014
    rc_beta: float = 0.91
    last_lambda: Optional[float] = None
    last_qstar: Optional[float] = None
    last_bits: Optional[int] = None


class FrameBudget:
    """
    Presupuesto de bits de un frame repartido entre bloques.

    Attributes:
        target_bits: B_fTar
        energies: Energía espacial del residuo de cada bloque
        consumed: Bits consumidos por bloque (None si aún no se ha codificado)
    """

    def __init__(self, target_bits: int, energies: Sequence[float], min_block_bits: int = MIN_BLOCK_BITS):
        self.target_bits = int(target_bits)
        self.energies = np.asarray(energies, dtype=np.float64)
        if np.any(self.energies < 0):
            raise RateControlError("Energías de bloque negativas")
        self.min_block_bits = int(min_block_bits)
        self.consumed: List[Optional[int]] = [None] * len(self.energies)

    @property
    def remaining(self) -> int:
        """B_rem = B_fTar - bits consumidos (puede ser negativo)."""
        return self.target_bits - sum(bits for bits in self.consumed if bits is not None)

    def pending(self) -> List[int]:
        return [i for i, bits in enumerate(self.consumed) if bits is None]

    def consume(self, index: int, bits: int) -> None:
        if self.consumed[index] is not None:
            raise RateControlError(f"El bloque {index} ya se ha contabilizado")
        self.consumed[index] = int(bits)


def allocate_block_bits(budget: FrameBudget, index: int) -> int:
    """
    Bits objetivo del bloque actual: su parte del presupuesto restante en
    proporción a su energía entre los bloques pendientes.

    Args:
        budget: Presupuesto del frame
        index: Índice del bloque (debe estar pendiente)

    Returns:
        B_curTar en bits, nunca menor que el mínimo por bloque
    """
    pending = budget.pending()
    if index not in pending:
        raise RateControlError(f"El bloque {index} no está pendiente")
    remaining = budget.remaining
    if remaining <= 0:
        return budget.min_block_bits
    total = float(budget.energies[pending].sum())
    if total > 0:
        share = budget.energies[index] / total * remaining
    else:
        share = remaining / len(pending)
    return max(int(math.floor(share)), budget.min_block_bits)


def estimate_lambda(
    r_target: float,
    model: RDModel,
    lambda_min: float = DEFAULT_LAMBDA_MIN,
    lambda_max: float = DEFAULT_LAMBDA_MAX,
) -> float:
    """
    Lambda estimada para una tasa objetivo (bpp).

    Se invierte el modelo R-Q para obtener Q_hint y se evalúa en él la
    pendiente -dD/dR de los dos modelos ajustados.

    Raises:
        RateControlError: Si r_target no es positiva
    """
    if not r_target > 0:
        raise RateControlError(f"La tasa objetivo debe ser positiva: {r_target}")
    q_hint = (model.a_r / r_target) ** (1.0 / model.b_r)
    lam = model.slope(q_hint)
    if not math.isfinite(lam):
        lam = lambda_max
    return min(max(lam, lambda_min), lambda_max)


def solve_qstar(
    lam: float,
    rc_alpha: float,
    rc_beta: float,
    q_min: float = DEFAULT_Q_MIN,
    q_max: float = DEFAULT_Q_MAX,
) -> float:
    """
    Raíz de lambda = rc_alpha·Q·exp(rc_beta·Q) en [q_min, q_max].

    Bisección sobre ln(rc_alpha) + ln(Q) + rc_beta·Q - ln(lambda), creciente
    en Q, seguida de tres pasos de Newton.
    """
    if not (lam > 0 and rc_alpha > 0 and rc_beta > 0):
        raise RateControlError("lambda, rc_alpha y rc_beta deben ser positivos")
    offset = math.log(rc_alpha) - math.log(lam)

    def f(q: float) -> float:
        return offset + math.log(q) + rc_beta * q

    if f(q_min) >= 0:
        return q_min
    if f(q_max) <= 0:
        return q_max

    lo, hi = math.log(q_min), math.log(q_max)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(math.exp(mid)) < 0:
            lo = mid
        else:
            hi = mid
    q = math.exp(0.5 * (lo + hi))
    for _ in range(3):
        q -= f(q) / (1.0 / q + rc_beta)
    return min(max(q, q_min), q_max)


def update_model(
    state: BlockRCState,
    q_actual: float,
    q_estimate: float,
    delta_alpha: float = 0.4,
    delta_beta: float = 0.3,
    param_min: float = DEFAULT_PARAM_MIN,
    param_max: float = DEFAULT_PARAM_MAX,
) -> Tuple[float, float]:
    """
    Actualización LMS de (rc_alpha, rc_beta) con el error Q*_a - Q̂*.

    Ambos denominadores usan rc_beta anterior a la actualización. El estado
    se modifica en sitio.

    Returns:
        (rc_alpha, rc_beta) nuevos
    """
    alpha, beta = state.rc_alpha, state.rc_beta
    error = q_actual - q_estimate
    denominator = beta * q_actual + 1.0
    new_alpha = alpha + delta_alpha * alpha * q_actual * error / denominator
    new_beta = beta + delta_beta * q_actual * q_actual * error / denominator
    state.rc_alpha = min(max(new_alpha, param_min), param_max)
    state.rc_beta = min(max(new_beta, param_min), param_max)
    return state.rc_alpha, state.rc_beta


def _check_samples(samples: Sequence[Tuple[float, float]]) -> Tuple[np.ndarray, np.ndarray]:
    if len(samples) < 3:
        raise InsufficientSamplesError(f"Se necesitan al menos 3 muestras, hay {len(samples)}")
    data = np.asarray(samples, dtype=np.float64)
    q, y = data[:, 0], data[:, 1]
    if np.any(q <= 0):
        raise RateControlError("Los pasos Q deben ser positivos")
    if np.all(q == q[0]):
        raise DegenerateFitError("Todas las muestras tienen el mismo Q")
    return q, y


def _cod(y: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_dq_model(samples: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """
    Ajuste D = a_D·Q² por mínimos cuadrados a través del origen.

    Returns:
        (a_D, CoD)
    """
    q, d = _check_samples(samples)
    if np.any(d < 0):
        raise RateControlError("Distorsiones negativas")
    q2 = q * q
    a_d = float(np.sum(q2 * d) / np.sum(q2 * q2))
    return a_d, _cod(d, a_d * q2)


def fit_rq_model(samples: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """
    Ajuste R = a_R·Q^(-b_R) por regresión lineal de log R frente a log Q.

    Returns:
        (a_R, b_R, CoD en el espacio logarítmico)
    """
    q, r = _check_samples(samples)
    if np.any(r <= 0):
        raise RateControlError("Las tasas deben ser positivas")
    x, y = np.log(q), np.log(r)
    slope, intercept = np.polyfit(x, y, 1)
    return float(math.exp(intercept)), float(-slope), _cod(y, slope * x + intercept)


def fit_rq_log_model(samples: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """
    Ajuste alternativo R = b - a·ln Q.

    Returns:
        (a, b, CoD)
    """
    q, r = _check_samples(samples)
    x = np.log(q)
    slope, intercept = np.polyfit(x, r, 1)
    return float(-slope), float(intercept), _cod(r, slope * x + intercept)


@dataclass
class BlockDecision:
    """Paso elegido para un bloque y datos para su actualización posterior."""
    index: int
    target_bits: int
    q: float
    lam: Optional[float] = None
    points: int = 0


@dataclass
class _Samples:
    q: List[float] = field(default_factory=list)
    d: List[float] = field(default_factory=list)
    r: List[float] = field(default_factory=list)

    def add(self, q: float, d: float, r: float) -> None:
        self.q.append(q)
        self.d.append(d)
        self.r.append(r)
        if len(self.q) > SAMPLE_WINDOW:
            del self.q[0], self.d[0], self.r[0]


class RateController:
    """
    Control de tasa de un stream (sólo en el codificador).

    Secuencia por frame: begin_frame -> (choose_step, finish_block) por
    bloque en orden raster -> end_frame.
    """

    def __init__(
        self,
        settings: Optional[RateControlSettings] = None,
        q_min: float = DEFAULT_Q_MIN,
        q_max: float = DEFAULT_Q_MAX,
    ):
        self.settings = settings or RateControlSettings()
        self.q_min = q_min
        self.q_max = q_max
        self.model = dataset_model(self.settings.dataset)
        self.states: Dict[int, BlockRCState] = {}
        self.bias: Dict[int, float] = {}
        self.carryover_bits = 0
        self.frames = 0
        self._samples = _Samples()
        self._budget: Optional[FrameBudget] = None
        self._mode = 0
        self._coeff_target = 0

    def state(self, index: int) -> BlockRCState:
        if index not in self.states:
            self.states[index] = BlockRCState(self.settings.rc_alpha_init, self.settings.rc_beta_init)
        return self.states[index]

    def frame_target_bits(self, target_bpp: float, n_points: int) -> int:
        """B_fTar del frame con el descuento del exceso anterior."""
        if not target_bpp > 0:
            raise RateControlError(f"bpp objetivo no válido: {target_bpp}")
        return max(int(round(target_bpp * n_points)) - self.carryover_bits, 0)

    def begin_frame(self, block_bits: int, energies: Sequence[float], mode: int) -> FrameBudget:
        """
        Abre el presupuesto de bloques del frame.

        Args:
            block_bits: Bits disponibles para los bloques (objetivo menos cabeceras)
            energies: Energía del residuo de cada bloque
            mode: Modo de predicción del frame (sesgo independiente por modo)
        """
        self._budget = FrameBudget(max(block_bits, 0), energies, self.settings.min_block_bits)
        self._mode = int(mode)
        self._coeff_target = 0
        return self._budget

    def choose_step(self, index: int, points: int, overhead_bits: int) -> BlockDecision:
        """
        Paso base q_LL3 de un bloque.

        Args:
            index: Índice del bloque
            points: Píxeles ocupados del bloque
            overhead_bits: Bits fijos del bloque (pasos y longitud)
        """
        if self._budget is None:
            raise RateControlError("choose_step fuera de un frame")
        target = allocate_block_bits(self._budget, index)
        if points == 0 or self._budget.remaining <= 0:
            return BlockDecision(index, target, self.q_max, None, points)

        coeff_bits = max(target - overhead_bits, self.settings.min_block_bits)
        self._coeff_target += coeff_bits
        r_target = coeff_bits / points * self.bias.get(self._mode, 1.0)
        lam = estimate_lambda(r_target, self.model, self.settings.lambda_min, self.settings.lambda_max)
        state = self.state(index)
        q = solve_qstar(lam, state.rc_alpha, state.rc_beta, self.q_min, self.q_max)
        state.last_lambda = lam
        state.last_qstar = q
        return BlockDecision(index, target, q, lam, points)

    def finish_block(self, decision: BlockDecision, bits: int, coeff_bits: int, distortion: float) -> None:
        """
        Contabiliza los bits del bloque y adapta su estado.

        Args:
            decision: Resultado de choose_step
            bits: Bits totales del bloque (con cabecera)
            coeff_bits: Bits de coeficientes
            distortion: Error cuadrático medio por coeficiente
        """
        if self._budget is None:
            raise RateControlError("finish_block fuera de un frame")
        self._budget.consume(decision.index, bits)
        if decision.lam is None or decision.points == 0:
            return
        state = self.state(decision.index)
        state.last_bits = bits
        self._samples.add(decision.q, distortion, max(coeff_bits, 1) / decision.points)

        realized = self.model.slope(decision.q)
        realized = min(max(realized, self.settings.lambda_min), self.settings.lambda_max)
        q_actual = solve_qstar(realized, state.rc_alpha, state.rc_beta, self.q_min, self.q_max)
        update_model(
            state, q_actual, decision.q,
            self.settings.delta_alpha, self.settings.delta_beta,
            self.settings.param_min, self.settings.param_max,
        )

    def end_frame(self, frame_bits: int, frame_target_bits: int) -> None:
        """
        Cierra el frame: sesgo de tasa, arrastre de exceso y reajuste periódico.

        Args:
            frame_bits: Bits reales del paquete
            frame_target_bits: Objetivo del frame antes del descuento
        """
        budget = self._budget
        if budget is None:
            raise RateControlError("end_frame sin begin_frame")
        spent = sum(bits for bits in budget.consumed if bits is not None)
        if self._coeff_target > 0 and spent > 0:
            ratio = budget.target_bits / spent
            gain = self.settings.bias_gain
            bias = self.bias.get(self._mode, 1.0) * (1.0 - gain + gain * ratio)
            self.bias[self._mode] = min(max(bias, BIAS_LIMITS[0]), BIAS_LIMITS[1])

        overshoot = max(frame_bits - frame_target_bits, 0)
        self.carryover_bits = int(round(self.settings.buffer_carryover * overshoot))
        self.frames += 1
        self._budget = None
        if self.frames % self.settings.refit_interval == 0:
            self.refit()

    def calibrate(self, trial: "RateController") -> None:
        """
        Corrige el sesgo del modo con una pasada de prueba del frame actual.

        Args:
            trial: Copia del controlador que ha codificado los bloques sin cerrar el frame
        """
        budget = trial._budget
        if budget is None:
            raise RateControlError("La pasada de prueba no abrió ningún frame")
        spent = sum(bits for bits in budget.consumed if bits is not None)
        if trial._coeff_target <= 0 or spent <= 0:
            return
        mode = trial._mode
        bias = trial.bias.get(mode, 1.0) * budget.target_bits / spent
        self.bias[mode] = min(max(bias, BIAS_LIMITS[0]), BIAS_LIMITS[1])
        logger.debug(f"Calibración del modo {mode}: sesgo {self.bias[mode]:.3f}")

    def refit(self) -> None:
        """Reajusta (a_D, a_R, b_R) con las muestras recientes; conserva el modelo si el ajuste falla."""
        samples = self._samples
        try:
            a_d, cod_d = fit_dq_model(list(zip(samples.q, samples.d)))
            a_r, b_r, cod_r = fit_rq_model(list(zip(samples.q, samples.r)))
            self.model = RDModel(a_d, a_r, b_r, self.model.rho)
        except RateControlError as e:
            logger.debug(f"Reajuste de modelos omitido: {e}")
            return
        logger.info(
            f"Modelos R-D reajustados: a_D={a_d:.5f} (CoD {cod_d:.3f}), "
            f"a_R={a_r:.4f}, b_R={b_r:.4f} (CoD {cod_r:.3f})"
        )


@dataclass(frozen=True)
class BitrateSchedule:
    """Calendario de bpp objetivo: (índice de frame inicial, bpp) ordenado."""
    steps: Tuple[Tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ScheduleError("Calendario vacío")

    def target_for(self, frame_index: int) -> float:
        """bpp del último escalón que empieza en o antes de frame_index."""
        target = self.steps[0][1]
        for start, bpp in self.steps:
            if start > frame_index:
                break
            target = bpp
        return target

    @classmethod
    def constant(cls, bpp: float) -> "BitrateSchedule":
        return parse_schedule(f"0,{bpp}")


def parse_schedule(text: str, source: str = "<schedule>") -> BitrateSchedule:
    """
    Analiza líneas `frame_index,target_bpp` (se ignoran vacías y comentarios).

    Raises:
        ScheduleError: Con el número de línea del primer error
    """
    steps: List[Tuple[int, float]] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ScheduleError(f"{source}:{line_number}: se esperaba 'frame_index,target_bpp'")
        try:
            index, bpp = int(parts[0]), float(parts[1])
        except ValueError:
            raise ScheduleError(f"{source}:{line_number}: valores no numéricos")
        if index < 0 or not bpp > 0 or not math.isfinite(bpp):
            raise ScheduleError(f"{source}:{line_number}: índice o bpp fuera de rango")
        if steps and index <= steps[-1][0]:
            raise ScheduleError(f"{source}:{line_number}: los índices deben ser crecientes")
        steps.append((index, bpp))
    if not steps:
        raise ScheduleError(f"{source}: calendario vacío")
    return BitrateSchedule(tuple(steps))


def load_schedule(path: str) -> BitrateSchedule:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_schedule(f.read(), path)
    except OSError as e:
        raise ScheduleError(f"No se pudo leer el calendario {path}: {e}")


def dataset_schedule(dataset: str, n_frames: int) -> BitrateSchedule:
    """Calendario escalonado 30/40/30 por defecto del conjunto de datos."""
    if dataset not in DATASET_SCHEDULES:
        raise ScheduleError(f"Sin calendario por defecto para {dataset}")
    steps: List[Tuple[int, float]] = []
    start = 0.0
    for fraction, bpp in DATASET_SCHEDULES[dataset]:
        index = int(round(start * n_frames))
        if not steps or index > steps[-1][0]:
            steps.append((index, bpp))
        start += fraction
    return BitrateSchedule(tuple(steps))
