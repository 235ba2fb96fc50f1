#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo SystemInfo
----------------
Describe la máquina en la que se ejecutan las medidas de rendimiento:
sistema operativo, CPU, memoria y backend del codificador de rango.
"""

import os
import sys
import socket
import logging
import platform
from typing import Any, Dict

import numpy as np
import psutil

from lidarcodec.modules.rangecoder import BACKEND


class SystemInfo:
    """
    Obtiene la información del sistema que acompaña a los informes.
    """

    def __init__(self):
        """Inicializa la clase de información del sistema."""
        self.logger = logging.getLogger("lidarcodec.system")
        self.platform = platform.system().lower()
        self.logger.debug(f"Plataforma detectada: {self.platform}")
        self._system_info = self._get_system_info()

    def get_all_info(self) -> Dict[str, Any]:
        """
        Obtiene toda la información del sistema.

        Returns:
            Diccionario con sistema, Python, recursos y backend
        """
        return {
            "system": self._system_info,
            "python": self._get_python_info(),
            "resources": self.get_resource_usage(),
            "codec": {"rangecoder_backend": BACKEND.info},
        }

    def _get_system_info(self) -> Dict[str, Any]:
        try:
            return {
                "os": platform.system(),
                "os_release": platform.release(),
                "architecture": platform.machine(),
                "processor": platform.processor() or "unknown",
                "hostname": socket.gethostname(),
            }
        except Exception as e:
            self.logger.error(f"Error al obtener información del sistema: {str(e)}", exc_info=True)
            return {"error": str(e)}

    def _get_python_info(self) -> Dict[str, Any]:
        return {
            "version": platform.python_version(),
            "implementation": platform.python_implementation(),
            "executable": sys.executable,
            "numpy": np.__version__,
        }

    def get_resource_usage(self) -> Dict[str, Any]:
        """
        Obtiene CPU, memoria y datos del proceso actual.

        Returns:
            Diccionario con el uso de recursos
        """
        try:
            memory = psutil.virtual_memory()
            process = psutil.Process()
            if self.platform in ["linux", "darwin"]:
                load_avg = os.getloadavg()
            else:
                load_avg = (0, 0, 0)
            return {
                "cpu": {
                    "count": psutil.cpu_count(logical=True),
                    "physical_count": psutil.cpu_count(logical=False),
                    "load_avg": load_avg,
                },
                "memory": {
                    "total_mb": round(memory.total / (1024 * 1024), 2),
                    "available_mb": round(memory.available / (1024 * 1024), 2),
                    "percent": memory.percent,
                },
                "process": {
                    "pid": process.pid,
                    "memory_mb": round(process.memory_info().rss / (1024 * 1024), 2),
                    "threads": process.num_threads(),
                },
            }
        except Exception as e:
            self.logger.error(f"Error al obtener uso de recursos: {str(e)}", exc_info=True)
            return {"error": str(e)}

    def summary(self) -> Dict[str, str]:
        """Resumen plano de get_all_info para las tablas del comando `info`."""
        info = self.get_all_info()
        system, python, resources = info["system"], info["python"], info["resources"]
        summary = {
            "Sistema": f"{system.get('os', '?')} {system.get('os_release', '')}".strip(),
            "Arquitectura": str(system.get("architecture", "?")),
            "Procesador": str(system.get("processor", "?")),
            "Python": f"{python['version']} ({python['implementation']}), numpy {python['numpy']}",
            "Backend": str(info["codec"]["rangecoder_backend"]),
        }
        if "cpu" in resources:
            summary["Núcleos"] = f"{resources['cpu']['physical_count']} físicos / {resources['cpu']['count']} lógicos"
            summary["Memoria"] = f"{resources['memory']['total_mb'] / 1024:.1f} GB"
        return summary
