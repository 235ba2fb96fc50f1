# -*- coding: utf-8 -*-

import json

import pytest

from lidarcodec.utils.config_manager import ConfigError, ConfigManager


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch, tmp_path):
    for name in ("LIDARCODEC_LOG_LEVEL", "LIDARCODEC_DATASET", "LIDARCODEC_JIT"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_defaults():
    settings = ConfigManager().get_settings()
    assert (settings.projection.rows, settings.projection.cols) == (64, 2048)
    assert settings.adwt.alpha == 0.53
    assert settings.ratecontrol.dataset == "kitti"
    assert settings.bitstream.keyframe_interval == 64
    assert settings.prediction.pose_source == "icp"


def test_file_is_merged_over_defaults(tmp_path):
    manager = ConfigManager(write_config(tmp_path, {"projection": {"rows": 32}, "extra": {"a": 1}}))
    settings = manager.get_settings()
    assert settings.projection.rows == 32
    assert settings.projection.cols == 2048
    assert "extra" not in manager.get_config()
    assert manager.get_value("projection", "rows") == 32
    assert manager.get_value("projection", "missing", "x") == "x"


def test_overrides_win_over_file(tmp_path):
    path = write_config(tmp_path, {"evaluation": {"seed": 3}})
    assert ConfigManager(path, {"evaluation": {"seed": 8}}).get_settings().evaluation.seed == 8


@pytest.mark.parametrize("data", [
    {"projection": {"rows": 0}},
    {"projection": {"elev_min_deg": 5.0, "elev_max_deg": 2.0}},
    {"prediction": {"tau": 1.5}},
    {"ratecontrol": {"dataset": "argoverse"}},
    {"prediction": {"pose_source": "file"}},
    {"evaluation": {"prefetch_frames": 8}},
])
def test_invalid_values(tmp_path, data):
    with pytest.raises(ConfigError):
        ConfigManager(write_config(tmp_path, data))


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("[1, 2")
    with pytest.raises(ConfigError):
        ConfigManager(str(broken))
    broken.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ConfigManager(str(broken))


def test_environment_variables(monkeypatch):
    monkeypatch.setenv("LIDARCODEC_LOG_LEVEL", "debug")
    monkeypatch.setenv("LIDARCODEC_DATASET", "Waymo")
    monkeypatch.setenv("LIDARCODEC_JIT", "0")
    settings = ConfigManager().get_settings()
    assert settings.system.log_level == "DEBUG"
    assert settings.ratecontrol.dataset == "waymo"
    assert settings.system.jit is False


def test_dotenv_file_is_loaded(tmp_path, monkeypatch):
    # Registra la variable para que monkeypatch la elimine al terminar
    monkeypatch.setenv("LIDARCODEC_DATASET", "kitti")
    monkeypatch.delenv("LIDARCODEC_DATASET")
    (tmp_path / ".env").write_text("LIDARCODEC_DATASET=nuscenes\n")
    assert ConfigManager().get_settings().ratecontrol.dataset == "nuscenes"


def test_update_config_rolls_back():
    manager = ConfigManager()
    manager.update_config("adwt", "alpha", 0.7)
    assert manager.get_settings().adwt.alpha == 0.7
    with pytest.raises(ConfigError):
        manager.update_config("adwt", "q_min", -1.0)
    assert manager.get_value("adwt", "q_min") == 0.001
    with pytest.raises(ConfigError):
        manager.update_config("unknown", "key", 1)
    with pytest.raises(ConfigError):
        manager.get_section("unknown")


def test_save_config(tmp_path):
    manager = ConfigManager(write_config(tmp_path, {"evaluation": {"seed": 4}}))
    target = tmp_path / "saved" / "config.json"
    manager.save_config(str(target))
    assert ConfigManager(str(target)).get_settings().evaluation.seed == 4
    with pytest.raises(ConfigError):
        ConfigManager().save_config()
