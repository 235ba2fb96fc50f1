# -*- coding: utf-8 -*-

import numpy as np
import pytest

from lidarcodec.modules.adwt import (
    BLOCK_SIZE,
    SUBBANDS,
    QuantizedPyramid,
    QuantMap,
    SubbandEnergies,
    SubbandPyramid,
    assign_quant_steps,
    dequantize,
    forward_dwt3,
    forward_dwt3_batch,
    hh_step,
    inverse_dwt3,
    inverse_dwt3_batch,
    mixed_steps,
    morton_order,
    quantize,
    quantize_array,
    tile_blocks,
    uniform_quant_map,
    untile_blocks,
)


def test_constant_block_energy_in_ll3():
    pyramid = forward_dwt3(np.full((BLOCK_SIZE, BLOCK_SIZE), 3.0))
    np.testing.assert_allclose(pyramid.band("LL", 3), 24.0, atol=1e-12)
    for name, level in SUBBANDS[1:]:
        np.testing.assert_allclose(pyramid.band(name, level), 0.0, atol=1e-12)


def test_round_trip(rng):
    block = rng.normal(0.0, 5.0, (BLOCK_SIZE, BLOCK_SIZE))
    np.testing.assert_allclose(inverse_dwt3(forward_dwt3(block)), block, atol=1e-9)


def test_any_pyramid_is_a_valid_transform(rng):
    pyramid = SubbandPyramid(rng.normal(0.0, 5.0, (BLOCK_SIZE, BLOCK_SIZE)))
    np.testing.assert_allclose(forward_dwt3(inverse_dwt3(pyramid)).coeffs, pyramid.coeffs, atol=1e-9)


def test_batch_matches_single(rng):
    blocks = rng.normal(0.0, 1.0, (3, BLOCK_SIZE, BLOCK_SIZE))
    coeffs = forward_dwt3_batch(blocks)
    np.testing.assert_allclose(coeffs[1], forward_dwt3(blocks[1]).coeffs)
    np.testing.assert_allclose(inverse_dwt3_batch(coeffs), blocks, atol=1e-9)


def test_transform_preserves_energy(rng):
    block = np.zeros((BLOCK_SIZE, BLOCK_SIZE))
    block[13, 40] = 2.0
    pyramid = forward_dwt3(block)
    assert np.sum(pyramid.coeffs ** 2) == pytest.approx(4.0)

    noise = rng.uniform(-1.0, 1.0, (BLOCK_SIZE, BLOCK_SIZE))
    energies = SubbandEnergies.from_pyramid(forward_dwt3(noise))
    assert energies.total(1) == pytest.approx(np.sum(noise ** 2))


def test_wrong_block_shape():
    with pytest.raises(ValueError):
        forward_dwt3(np.zeros((32, 64)))


def test_hh_step_examples():
    assert hh_step(1.0, 1.0, 10.0, 0.53) == pytest.approx(5.3)
    assert hh_step(3.0, 1.0, 1.0, 0.5) == pytest.approx(1.0)
    # Sin energía en HH el paso es el de LL
    assert hh_step(5.0, 0.0, 2.0, 0.53) == 2.0


def test_mixed_steps():
    assert mixed_steps(1.0, 3.0, 4.0, 8.0) == pytest.approx((7.0, 5.0))
    assert mixed_steps(0.0, 0.0, 4.0, 8.0) == (6.0, 6.0)


def test_assign_steps_on_constant_block():
    energies = SubbandEnergies.from_pyramid(forward_dwt3(np.full((BLOCK_SIZE, BLOCK_SIZE), 3.0)))
    qmap = assign_quant_steps(energies, 2.0)
    assert qmap.step("LL", 3) == 2.0
    # Sin detalle: HH hereda q_LL y el LL siguiente se pondera sólo con LL
    assert all(step == pytest.approx(2.0) for step in qmap.as_tuple())


def test_assign_steps_are_clamped(rng):
    energies = SubbandEnergies.from_pyramid(forward_dwt3(rng.normal(0.0, 1.0, (BLOCK_SIZE, BLOCK_SIZE))))
    qmap = assign_quant_steps(energies, 1.0, adwt_alpha=0.53, q_min=0.5, q_max=1.5)
    assert all(0.5 <= step <= 1.5 for step in qmap.as_tuple()[1:])
    with pytest.raises(ValueError):
        assign_quant_steps(energies, 0.0)


def test_quant_map_validation():
    with pytest.raises(ValueError):
        QuantMap.from_steps([1.0] * 9)
    with pytest.raises(ValueError):
        QuantMap.from_steps([1.0] * 9 + [0.0])
    qmap = QuantMap.from_steps(range(1, 11))
    grid = qmap.step_grid()
    assert grid[0, 0] == 1.0  # LL3
    assert grid[63, 63] == 10.0  # HH1
    assert grid[0, 40] == 8.0  # HL1


def test_quantize_rounds_half_away_from_zero():
    steps = np.full(4, 2.0)
    indices = quantize_array(np.array([7.0, -7.0, 0.9, -1.0]), steps)
    np.testing.assert_array_equal(indices, [4, -4, 0, -1])


def test_dequantize_inverts_on_lattice():
    indices = np.arange(BLOCK_SIZE * BLOCK_SIZE).reshape(BLOCK_SIZE, BLOCK_SIZE) % 7 - 3
    qmap = uniform_quant_map(0.5)
    pyramid = dequantize(QuantizedPyramid(indices), qmap)
    assert quantize(pyramid, qmap).equals(QuantizedPyramid(indices))


def test_quantization_error_is_one_twelfth(rng):
    block = rng.uniform(0.0, 100.0, (BLOCK_SIZE, BLOCK_SIZE))
    qmap = uniform_quant_map(1.0)
    recon = inverse_dwt3(dequantize(quantize(forward_dwt3(block), qmap), qmap))
    mse = float(np.mean((recon - block) ** 2))
    assert mse == pytest.approx(1.0 / 12.0, rel=0.1)


def test_zero_pyramid():
    assert not np.any(QuantizedPyramid.zeros().indices)
    with pytest.raises(ValueError):
        SubbandPyramid(np.zeros((8, 8)))


def test_morton_order():
    np.testing.assert_array_equal(morton_order(2), [0, 1, 2, 3])
    np.testing.assert_array_equal(morton_order(4)[:8], [0, 1, 4, 5, 2, 3, 6, 7])
    assert sorted(morton_order(8).tolist()) == list(range(64))


def test_tile_round_trip(rng):
    values = rng.normal(0.0, 1.0, (20, 130))
    blocks, grid = tile_blocks(values)
    assert grid == (1, 3)
    assert blocks.shape == (3, BLOCK_SIZE, BLOCK_SIZE)
    assert not np.any(blocks[2][:, 2:])
    np.testing.assert_array_equal(untile_blocks(blocks, grid, values.shape), values)
