#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Códec LiDAR
-----------
Compresión con pérdidas de secuencias de nubes de puntos LiDAR mediante
imágenes de rango, transformada a-DWT y control de tasa.

Este módulo sirve como punto de entrada principal a la CLI.
"""

import sys
import os
import signal
from dotenv import load_dotenv
from lidarcodec.cli import main as cli_main


def signal_handler(sig, frame):
    """Manejador de señales para terminar el programa correctamente."""
    print("\nInterrumpido por el usuario")
    sys.exit(130)


def main() -> int:
    """Función principal: carga el entorno y delega en la CLI."""
    # Configurar el manejador de señales para CTRL+C
    signal.signal(signal.SIGINT, signal_handler)

    # Cargar variables de entorno
    env_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), ".env")
    if os.path.exists(env_path):
        load_dotenv(env_path)

    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
