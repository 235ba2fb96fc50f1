# -*- coding: utf-8 -*-

import json

import pytest

from lidarcodec.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_OK, build_parser, main
from lidarcodec.evaluation.report import read_frame_rows


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "projection": {"rows": 16, "cols": 256, "elev_min_deg": -16.0, "elev_max_deg": 2.0},
        "prediction": {"pose_source": "none"},
        "system": {"log_file": None, "console_output": False, "jit": False},
    }))
    return str(path)


def run(config_file, *argv):
    command, rest = argv[0], list(argv[1:])
    return main([command, "--config", config_file] + rest)


def test_encode_decode_and_info(config_file, tmp_path):
    container = str(tmp_path / "seq.dcmp")
    report = str(tmp_path / "encode.csv")
    assert run(config_file, "encode", "synthetic:4", "-o", container, "--report", report, "--verify") == EXIT_OK
    rows = read_frame_rows(report)
    assert [row.index for row in rows] == [0, 1, 2, 3]
    assert rows[0].mode == "intra"

    out_dir = tmp_path / "clouds"
    decode_report = str(tmp_path / "decode.csv")
    assert run(config_file, "decode", container, "-o", str(out_dir), "--report", decode_report,
               "--reference", "synthetic:4") == EXIT_OK
    assert len(list(out_dir.iterdir())) == 4
    assert all(row.psnr is not None for row in read_frame_rows(decode_report))

    assert run(config_file, "info", container) == EXIT_OK


def test_encode_with_target_and_poses(config_file, tmp_path):
    container = str(tmp_path / "seq.dcmp")
    report = str(tmp_path / "encode.csv")
    poses = tmp_path / "poses.txt"
    code = run(config_file, "encode", "synthetic:3", "-o", container, "--target-bpp", "2.0",
               "--report", report, "--timing", "--export-poses", str(poses))
    assert code == EXIT_OK
    assert all(row.target_bpp == pytest.approx(2.0) for row in read_frame_rows(report))
    assert len(poses.read_text().splitlines()) == 3


def test_stream_sim_with_schedule(config_file, tmp_path):
    schedule = tmp_path / "schedule.csv"
    schedule.write_text("# frame,bpp\n0,1.0\n2,2.0\n")
    report = str(tmp_path / "sim.csv")
    assert run(config_file, "stream-sim", "synthetic:4", "--schedule", str(schedule), "--report", report) == EXIT_OK
    assert [row.target_bpp for row in read_frame_rows(report)] == [1.0, 1.0, 2.0, 2.0]


def test_rd_curve_and_ablation(config_file, tmp_path):
    rd = tmp_path / "rd.csv"
    assert run(config_file, "rd-curve", "synthetic:1", "--q", "0.05,0.1,0.2", "--report", str(rd)) == EXIT_OK
    assert "# a_D," in rd.read_text()

    ablation = tmp_path / "ablation.csv"
    code = run(config_file, "ablation", "synthetic:1", "--bpp", "3.0", "--transform", "dct", "--report", str(ablation))
    assert code == EXIT_OK
    assert ablation.read_text().splitlines()[1].startswith("dct,3.000000")


def test_configuration_errors_exit_with_2(config_file, tmp_path):
    container = str(tmp_path / "seq.dcmp")
    missing = str(tmp_path / "missing.txt")
    assert run(config_file, "encode", "synthetic:2", "-o", container,
               "--pose-source", "file", "--pose-file", missing) == EXIT_CONFIG
    assert run(config_file, "encode", "synthetic:2", "-o", container, "--schedule", missing) == EXIT_CONFIG

    bad_schedule = tmp_path / "bad.csv"
    bad_schedule.write_text("0,1.0\nuno,2.0\n")
    assert run(config_file, "stream-sim", "synthetic:2", "--schedule", str(bad_schedule)) == EXIT_CONFIG

    broken = tmp_path / "broken.json"
    broken.write_text("{no es json")
    assert main(["info", "--config", str(broken), container]) == EXIT_CONFIG


def test_codec_errors_exit_with_1(config_file, tmp_path):
    assert run(config_file, "encode", str(tmp_path / "nothing"), "-o", str(tmp_path / "x.dcmp")) == EXIT_ERROR
    assert run(config_file, "decode", str(tmp_path / "missing.dcmp")) == EXIT_ERROR
    assert run(config_file, "info", str(tmp_path / "missing.dcmp")) == EXIT_ERROR
    assert run(config_file, "rd-curve", "synthetic:1", "--q", "0.1,0.2") == EXIT_ERROR


def test_parser_requires_output_for_encode():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["encode", "synthetic:2"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["encode", "synthetic:2", "-o", "x", "--target-bpp", "1", "--schedule", "s"])
