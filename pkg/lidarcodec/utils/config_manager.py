#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo ConfigManager
-------------------
Gestiona la configuración del códec, cargando y validando los archivos de configuración.
"""

import os
import json
import copy
import logging
from typing import Dict, Any, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator


class ConfigError(Exception):
    """Excepción lanzada cuando hay un error en la configuración."""
    pass


class ProjectionSettings(BaseModel):
    """Geometría de la proyección esférica."""

    rows: int = Field(64, ge=1)
    cols: int = Field(2048, ge=1)
    elev_min_deg: float = -24.8
    elev_max_deg: float = 2.0
    range_max_m: float = Field(120.0, gt=0)
    row_table_file: Optional[str] = None
    file: Optional[str] = None

    @model_validator(mode="after")
    def _check_elevation(self) -> "ProjectionSettings":
        if self.elev_min_deg >= self.elev_max_deg:
            raise ValueError("elev_min_deg debe ser menor que elev_max_deg")
        return self


class PredictionSettings(BaseModel):
    """Predicción intra/inter y selección de modo."""

    tau: float = Field(0.6, gt=0, le=1)
    g_min: float = Field(0.05, ge=0)
    t_key: float = Field(0.5, gt=0)
    kappa: float = Field(0.5, gt=0)
    pose_source: str = "icp"
    pose_file: Optional[str] = None
    icp_max_iterations: int = Field(20, ge=1)
    icp_trim_ratio: float = Field(0.8, gt=0, le=1)
    icp_min_pairs: int = Field(30, ge=3)
    icp_tolerance: float = Field(1e-6, gt=0)

    @field_validator("pose_source")
    @classmethod
    def _check_pose_source(cls, value: str) -> str:
        if value not in ("icp", "file", "none"):
            raise ValueError(f"Fuente de pose no reconocida: {value}")
        return value


class AdwtSettings(BaseModel):
    """Transformada a-DWT y límites de paso de cuantificación."""

    alpha: float = Field(0.53, gt=0)
    q_min: float = Field(0.001, gt=0)
    q_max: float = Field(32.0, gt=0)

    @model_validator(mode="after")
    def _check_steps(self) -> "AdwtSettings":
        if self.q_min >= self.q_max:
            raise ValueError("q_min debe ser menor que q_max")
        return self


class RateControlSettings(BaseModel):
    """Control de tasa RDO."""

    enabled: bool = False
    dataset: str = "kitti"
    constant_q: float = Field(0.05, gt=0)
    rc_alpha_init: float = Field(0.014, gt=0)
    rc_beta_init: float = Field(0.91, gt=0)
    delta_alpha: float = Field(0.4, ge=0)
    delta_beta: float = Field(0.3, ge=0)
    param_min: float = Field(1e-4, gt=0)
    param_max: float = Field(1e2, gt=0)
    lambda_min: float = Field(1e-6, gt=0)
    lambda_max: float = Field(1e6, gt=0)
    min_block_bits: int = Field(64, ge=0)
    refit_interval: int = Field(32, ge=1)
    buffer_carryover: float = Field(0.5, ge=0, le=1)
    bias_gain: float = Field(0.4, ge=0, le=1)
    calibrate_first_frame: bool = True

    @field_validator("dataset")
    @classmethod
    def _check_dataset(cls, value: str) -> str:
        value = value.lower()
        if value not in ("kitti", "nuscenes", "waymo"):
            raise ValueError(f"Conjunto de datos no reconocido: {value}")
        return value


class BitstreamSettings(BaseModel):
    """Contenedor y política de tramas clave."""

    keyframe_interval: int = Field(64, ge=1)


class EvaluationSettings(BaseModel):
    """Arnés de evaluación y CLI."""

    seed: int = 0
    synthetic_frames: int = Field(10, ge=1)
    rd_q_values: List[float] = [0.02, 0.05, 0.1, 0.2, 0.5]
    ablation_bpps: List[float] = [0.6, 1.0, 1.4, 1.8, 2.2]
    bpp_tolerance: float = Field(0.02, gt=0)
    prefetch_frames: int = Field(4, ge=1, le=4)
    timing: bool = False


class SystemSettings(BaseModel):
    """Logging y aceleración."""

    log_level: str = "INFO"
    log_file: Optional[str] = "logs/lidarcodec.log"
    log_rotation: bool = True
    max_log_size: int = 10
    backup_count: int = 5
    console_output: bool = True
    json_format: bool = False
    jit: bool = True


class CodecSettings(BaseModel):
    """Configuración completa y validada."""

    projection: ProjectionSettings = ProjectionSettings()
    prediction: PredictionSettings = PredictionSettings()
    adwt: AdwtSettings = AdwtSettings()
    ratecontrol: RateControlSettings = RateControlSettings()
    bitstream: BitstreamSettings = BitstreamSettings()
    evaluation: EvaluationSettings = EvaluationSettings()
    system: SystemSettings = SystemSettings()


class ConfigManager:
    """
    Gestor de configuración para el códec.
    Carga, valida y proporciona acceso a la configuración.
    """

    # Configuración por defecto
    DEFAULT_CONFIG: Dict[str, Any] = CodecSettings().model_dump()

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        """
        Inicializa el gestor de configuración.

        Args:
            config_path: Ruta al archivo de configuración JSON. Si es None se
                usan los valores por defecto.
            overrides: Valores que se combinan por encima del archivo (p. ej. flags de la CLI)

        Raises:
            ConfigError: Si hay un error al cargar o validar la configuración
        """
        self.logger = logging.getLogger("lidarcodec.config")
        self.config_path = config_path
        self.config: Dict[str, Any] = {}
        self.settings: CodecSettings = CodecSettings()

        env_path = os.path.join(os.getcwd(), ".env")
        if os.path.exists(env_path):
            self.logger.info(f"Cargando variables de entorno desde: {env_path}")
            load_dotenv(env_path)

        self._load_config()
        if overrides:
            self.config = self._merge_configs(self.config, overrides)
        self._apply_environment_variables()
        self._validate_config()

    def _load_config(self) -> None:
        """
        Carga la configuración desde el archivo JSON.

        Raises:
            ConfigError: Si hay un error al cargar el archivo
        """
        if self.config_path is None:
            self.config = copy.deepcopy(self.DEFAULT_CONFIG)
            return

        if not os.path.exists(self.config_path):
            raise ConfigError(f"Archivo de configuración no encontrado: {self.config_path}")

        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                loaded_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Error al analizar el archivo de configuración: {str(e)}")
        except OSError as e:
            raise ConfigError(f"Error al cargar la configuración: {str(e)}")

        if not isinstance(loaded_config, dict):
            raise ConfigError("El archivo de configuración debe contener un objeto JSON")

        self.config = self._merge_configs(copy.deepcopy(self.DEFAULT_CONFIG), loaded_config)
        self.logger.info(f"Configuración cargada desde: {self.config_path}")

    def _merge_configs(self, default_config: Dict[str, Any], user_config: Dict[str, Any]) -> Dict[str, Any]:
        """
        Combina la configuración del usuario con la configuración por defecto.

        Args:
            default_config: Configuración por defecto
            user_config: Configuración del usuario

        Returns:
            Configuración combinada
        """
        for key, value in user_config.items():
            if key in default_config and isinstance(value, dict) and isinstance(default_config[key], dict):
                default_config[key] = self._merge_configs(default_config[key], value)
            else:
                default_config[key] = value
        return default_config

    def _validate_config(self) -> None:
        """
        Valida la configuración cargada.

        Raises:
            ConfigError: Si la configuración no es válida
        """
        unknown = set(self.config) - set(self.DEFAULT_CONFIG)
        if unknown:
            self.logger.warning(f"Secciones de configuración desconocidas ignoradas: {sorted(unknown)}")
            for section in unknown:
                self.config.pop(section)

        try:
            self.settings = CodecSettings.model_validate(self.config)
        except ValidationError as e:
            raise ConfigError(f"Configuración no válida: {e}")

        if self.settings.prediction.pose_source == "file" and not self.settings.prediction.pose_file:
            raise ConfigError("pose_source=file requiere prediction.pose_file")

        self.logger.debug("Configuración validada correctamente")

    def _apply_environment_variables(self) -> None:
        """
        Aplica las variables de entorno a la configuración.
        Las variables de entorno tienen prioridad sobre el archivo de configuración.
        """
        if "LIDARCODEC_LOG_LEVEL" in os.environ:
            log_level = os.environ["LIDARCODEC_LOG_LEVEL"].upper()
            if log_level in ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]:
                self.config["system"]["log_level"] = log_level
                self.logger.info(f"Nivel de log configurado a {log_level} desde variable de entorno")

        if "LIDARCODEC_DATASET" in os.environ:
            self.config["ratecontrol"]["dataset"] = os.environ["LIDARCODEC_DATASET"].lower()
            self.logger.info(f"Conjunto de datos de referencia: {self.config['ratecontrol']['dataset']}")

        if "LIDARCODEC_JIT" in os.environ:
            self.config["system"]["jit"] = os.environ["LIDARCODEC_JIT"] not in ("0", "false", "False", "")

    def get_config(self) -> Dict[str, Any]:
        """
        Devuelve la configuración completa.

        Returns:
            Diccionario con la configuración
        """
        return self.config

    def get_settings(self) -> CodecSettings:
        """Devuelve la configuración validada como modelo tipado."""
        return self.settings

    def get_section(self, section: str) -> Dict[str, Any]:
        """
        Devuelve una sección específica de la configuración.

        Args:
            section: Nombre de la sección

        Returns:
            Diccionario con la sección de configuración

        Raises:
            ConfigError: Si la sección no existe
        """
        if section not in self.config:
            raise ConfigError(f"Sección de configuración no encontrada: {section}")
        return self.config[section]

    def get_value(self, section: str, key: str, default: Any = None) -> Any:
        """
        Devuelve un valor específico de la configuración.

        Args:
            section: Nombre de la sección
            key: Nombre de la clave
            default: Valor por defecto si no se encuentra

        Returns:
            Valor de configuración
        """
        if section in self.config and key in self.config[section]:
            return self.config[section][key]
        return default

    def update_config(self, section: str, key: str, value: Any) -> None:
        """
        Actualiza un valor en memoria y vuelve a validar.

        Args:
            section: Nombre de la sección
            key: Nombre de la clave
            value: Nuevo valor

        Raises:
            ConfigError: Si el valor deja la configuración en un estado no válido
        """
        if section not in self.config:
            raise ConfigError(f"Sección de configuración no encontrada: {section}")

        previous = copy.deepcopy(self.config)
        self.config[section][key] = value
        try:
            self._validate_config()
        except ConfigError:
            self.config = previous
            raise
        self.logger.info(f"Configuración actualizada: {section}.{key}")

    def save_config(self, path: Optional[str] = None) -> None:
        """
        Guarda la configuración actual en el archivo.

        Args:
            path: Ruta de destino (por defecto, la ruta de carga)

        Raises:
            ConfigError: Si hay un error al guardar la configuración
        """
        target = path or self.config_path
        if not target:
            raise ConfigError("No hay ruta de destino para guardar la configuración")
        try:
            directory = os.path.dirname(target)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(target, "w", encoding="utf-8") as f:
                json.dump(self.config, f, ensure_ascii=False, indent=4)
            self.logger.info(f"Configuración guardada en: {target}")
        except OSError as e:
            raise ConfigError(f"Error al guardar la configuración: {str(e)}")
