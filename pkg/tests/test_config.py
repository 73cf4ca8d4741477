import pytest

from shmrom.config import ConfigError, from_dict, load_config, override

from conftest import CONFIGS


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.space.n_classes == 5 and len(cfg.sensor_points) >= 1
    assert set(cfg.seeds) >= {"snapshots", "dataset", "test", "train"}


def test_unknown_keys_listed():
    with pytest.raises(ConfigError) as exc:
        from_dict({"mesh": {"element_size": 0.1}, "bogus": 1, "sensors": {"points": [{"x_m": 0, "y_m": 1,
                                                                                        "direction": "x"}]}})
    assert set(exc.value.keys) == {"mesh.element_size", "bogus"}


def test_invalid_values_listed():
    base = load_config(CONFIGS / "portal_smoke.yaml").raw
    bad = dict(base, time=dict(base["time"], dt_s=-1), dataset=dict(base["dataset"], snr=-3),
               seeds={"snapshots": 1, "dataset": 2, "test": 3, "train": "x"})
    with pytest.raises(ConfigError) as exc:
        from_dict(bad)
    assert {"time.dt_s", "dataset.snr", "seeds.train"} <= set(exc.value.keys)


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1, 2")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_scalar_parameter_pins_value():
    cfg = load_config(CONFIGS / "portal_smoke.yaml")
    c = override(cfg, {"parameters": {"delta": 0.1}})
    assert c.space.fixed == {"delta": 0.1} and "delta" not in c.space.bounds
    with pytest.raises(ConfigError):
        override(cfg, {"parameters": {"delta": 1.5}})


def test_stage_hash_tracks_sections():
    cfg = load_config(CONFIGS / "portal_smoke.yaml")
    c = override(cfg, {"fcn": {"epochs": 3}})
    assert cfg.stage_hash("mesh", "geometry") == c.stage_hash("mesh", "geometry")
    assert cfg.stage_hash("fcn") != c.stage_hash("fcn") and cfg.hash != c.hash


def test_too_few_snapshot_samples():
    cfg = load_config(CONFIGS / "portal_smoke.yaml")
    with pytest.raises(ConfigError) as exc:
        override(cfg, {"snapshots": {"Y": 3}})
    assert "snapshots.Y" in exc.value.keys
