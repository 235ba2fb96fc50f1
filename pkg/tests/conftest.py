# -*- coding: utf-8 -*-

"""Fixtures comunes: geometría reducida y secuencias sintéticas deterministas."""

import math

import numpy as np
import pytest

from lidarcodec.core.codec_manager import CodecOptions
from lidarcodec.evaluation.synthetic import SyntheticSequence, static_settings
from lidarcodec.modules.pointcloud_io import ProjectionParams, RangeImage


@pytest.fixture
def small_params() -> ProjectionParams:
    """16x256: cuatro bloques de 64x64 en una fila y 16 macrobloques."""
    return ProjectionParams(
        rows=16,
        cols=256,
        elevation_min=math.radians(-16.0),
        elevation_max=math.radians(2.0),
        range_max=120.0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def options() -> CodecOptions:
    return CodecOptions(keyframe_interval=64)


@pytest.fixture
def moving_sequence(small_params):
    return SyntheticSequence(small_params, 6, seed=3)


@pytest.fixture
def static_sequence(small_params):
    return SyntheticSequence(small_params, 4, seed=5, settings=static_settings())


def random_image(params: ProjectionParams, rng: np.random.Generator, fill: float = 0.8) -> RangeImage:
    """Imagen de rango aleatoria con ocupación parcial."""
    mask = rng.random(params.shape) < fill
    values = np.where(mask, rng.uniform(1.0, 80.0, params.shape), 0.0).astype(np.float32)
    return RangeImage(values, mask, params)
