#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
lidarcodec
----------
Códec de imágenes de rango LiDAR con predicción intra/inter, DWT de Haar
adaptativa de 3 niveles y control de tasa basado en RDO.
"""

__version__ = "1.0.0"
