# -*- coding: utf-8 -*-

import dataclasses

import numpy as np
import pytest

from lidarcodec.core.bitstream import BlockPayload, FramePacket, MissingReferenceError, decode_stream, encode_stream
from lidarcodec.core.codec_manager import (
    CodecOptions,
    FrameDecoder,
    FrameEncoder,
    code_blocks,
    decode_frame,
    encode_frame,
    step_grids,
)
from lidarcodec.modules.adwt import forward_dwt3_batch, tile_blocks
from lidarcodec.modules.entropy import CorruptStreamError
from lidarcodec.modules.prediction import PredictionMode
from lidarcodec.utils.config_manager import RateControlSettings

from conftest import random_image


def encode_all(sequence, options, **kwargs):
    encoder = FrameEncoder(sequence.params, options, **kwargs)
    return encoder, [encoder.encode(cloud) for cloud in sequence]


def test_encoder_and_decoder_stay_in_sync(moving_sequence, options):
    encoder, frames = encode_all(moving_sequence, options)
    decoder = FrameDecoder(encoder.header)
    for encoded in frames:
        decoded = decoder.decode(encoded.packet)
        assert decoded.mode == encoded.packet.mode
        assert decoded.image.equals(encoded.reconstruction)
    np.testing.assert_array_equal(decoder.state.prev_recon.points, encoder.state.prev_recon.points)


def test_first_frame_is_intra(moving_sequence, options):
    _, frames = encode_all(moving_sequence, options)
    assert frames[0].packet.mode == PredictionMode.INTRA


def test_static_scene_uses_inter_and_shrinks(static_sequence, options):
    _, frames = encode_all(static_sequence, options)
    modes = [f.packet.mode for f in frames]
    assert modes == [PredictionMode.INTRA] + [PredictionMode.INTER] * 3
    assert frames[2].packet.size_bytes < frames[0].packet.size_bytes


def test_keyframe_interval(static_sequence):
    _, frames = encode_all(static_sequence, CodecOptions(keyframe_interval=3))
    modes = [f.packet.mode for f in frames]
    assert modes == [PredictionMode.INTRA, PredictionMode.INTER, PredictionMode.INTER, PredictionMode.INTRA]


def test_missing_reference_waits_for_keyframe(static_sequence, options):
    encoder, frames = encode_all(static_sequence, options)
    decoder = FrameDecoder(encoder.header)
    with pytest.raises(MissingReferenceError):
        decoder.decode(frames[1].packet)
    assert decoder.state.awaiting_keyframe
    assert decoder.state.frame_counter == 0

    decoder.decode(frames[0].packet)
    assert not decoder.state.awaiting_keyframe
    assert decoder.decode(frames[1].packet).image.equals(frames[1].reconstruction)


def test_corrupt_packet_keeps_state(static_sequence, options):
    encoder, frames = encode_all(static_sequence, options)
    decoder = FrameDecoder(encoder.header)
    decoder.decode(frames[0].packet)
    reference = decoder.state.prev_recon

    good = frames[1].packet
    broken_blocks = (BlockPayload(good.blocks[0].step_codes, b""),) + good.blocks[1:]
    broken = dataclasses.replace(good, blocks=broken_blocks)
    with pytest.raises(CorruptStreamError):
        decoder.decode(broken)
    assert decoder.state.prev_recon is reference
    assert decoder.state.frame_counter == 1

    with pytest.raises(CorruptStreamError):
        decoder.decode(dataclasses.replace(good, blocks=good.blocks[:-1]))

    assert decoder.decode(good).image.equals(frames[1].reconstruction)


def test_stream_round_trip_through_bytes(moving_sequence, options):
    encoder, frames = encode_all(moving_sequence, options)
    data = encode_stream(encoder.header, [f.packet for f in frames])
    header, packets = decode_stream(data)
    decoder = FrameDecoder(header)
    for packet, encoded in zip(packets, frames):
        cloud = decode_frame(decoder, packet)
        assert len(cloud) == encoded.reconstruction.occupied


def test_quantization_error_bound(small_params, rng, options):
    values = random_image(small_params, rng).values.astype(np.float64)
    blocks, _ = tile_blocks(values)
    coeffs = forward_dwt3_batch(blocks)
    points = np.full(len(coeffs), 100)
    coded = code_blocks(coeffs, points, 0.3, options)
    error = coeffs - coded.indices * coded.steps
    assert np.sum(error ** 2) <= np.sum(coded.steps ** 2) / 4.0 + 1e-9


def test_inter_reconstruction_error_bound(static_sequence, options):
    _, frames = encode_all(static_sequence, options)
    encoded = frames[1]
    codes = np.asarray([block.step_codes for block in encoded.packet.blocks])
    steps = step_grids(codes, options.q_min)
    mask = encoded.image.mask
    diff = encoded.reconstruction.values[mask].astype(np.float64) - encoded.image.values[mask]
    # Margen para el redondeo a float32 de la reconstrucción
    assert np.sum(diff ** 2) <= np.sum(steps ** 2) / 4.0 + 1e-6 * mask.sum()


def test_smaller_step_gives_bigger_packets(moving_sequence, options):
    cloud = moving_sequence.frame(0)
    coarse = FrameEncoder(moving_sequence.params, options).encode(cloud, q=0.5)
    fine = FrameEncoder(moving_sequence.params, options).encode(cloud, q=0.01)
    assert fine.packet.size_bytes > coarse.packet.size_bytes


def test_rate_control_follows_target(moving_sequence, options):
    cloud = moving_sequence.frame(0)
    settings = RateControlSettings(enabled=True)
    low = FrameEncoder(moving_sequence.params, options, rate_control=settings).encode(cloud, target_bpp=1.0)
    high = FrameEncoder(moving_sequence.params, options, rate_control=settings).encode(cloud, target_bpp=4.0)
    assert high.packet.size_bytes > low.packet.size_bytes
    assert FrameEncoder(moving_sequence.params, options, rate_control=settings).header.rate_control


def test_rate_controlled_stream_decodes(static_sequence, options):
    encoder = FrameEncoder(static_sequence.params, options, rate_control=RateControlSettings(enabled=True))
    decoder = FrameDecoder(encoder.header)
    for cloud in static_sequence:
        packet = encode_frame(encoder, cloud, target_bpp=2.0)
        decoded = decoder.decode(packet)
        assert decoded.image.equals(encoder.state.prev_image)


def test_dwt_transform_option(static_sequence):
    options = CodecOptions(transform="dwt", keyframe_interval=64)
    encoder, frames = encode_all(static_sequence, options)
    decoder = FrameDecoder(encoder.header)
    for encoded in frames:
        assert decoder.decode(encoded.packet).image.equals(encoded.reconstruction)
    with pytest.raises(ValueError):
        CodecOptions(transform="dct")


def test_frame_packet_counts_points(moving_sequence, options):
    encoder = FrameEncoder(moving_sequence.params, options)
    cloud = moving_sequence.frame(0)
    packet = encoder.encode(cloud).packet
    assert isinstance(packet, FramePacket)
    assert packet.n_points == len(cloud)
    assert packet.frame_index == 0
