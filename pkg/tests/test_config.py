import pytest
import yaml

from evsnn.config import (
    SEED_ENV_VAR,
    ConfigValidationError,
    load_run_config,
)
from evsnn.network import ConfigError


def write_config(tmp_path, data):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_run_config(write_config(tmp_path, {}))
    assert cfg.seed == 0
    assert cfg.network.input_hw == 32
    assert cfg.eval.readout == "mean"
    assert cfg.train.encode == cfg.encode


def test_sections_parsed(tmp_path):
    data = {
        "seed": 5,
        "output_dir": "runs/x",
        "network": {"neuron_kind": "adlif", "fusion": "egu"},
        "encode": {"crop_side": 32, "out_hw": 32, "bin_us": 4000},
        "train": {"epochs": 2, "batch_size": 4},
        "loss": {"kind": "tet", "tet_sample_count": 8},
        "eval": {"readout": "last", "ks": [1, 2]},
        "dataset": {"test_fraction": 0.5,
                    "generate": {"samples_per_class": 2}},
    }
    cfg = load_run_config(write_config(tmp_path, data))
    assert cfg.seed == 5
    assert cfg.network.neuron_kind == "adlif"
    assert cfg.encode.bin_us == 4000
    assert cfg.train.epochs == 2
    assert cfg.train.rng_seed == 5  # follows the run seed
    assert cfg.loss.tet_sample_count == 8
    assert cfg.eval.ks == (1, 2)
    assert cfg.dataset.generate.samples_per_class == 2


@pytest.mark.parametrize("data", [
    {"network": {"neuron_type": "plif"}},
    {"train": {"epoch": 3}},
    {"eval": {"readout": "median"}},
    {"network": {"topology": "sideways"}},
])
def test_unknown_or_invalid_keys_rejected(tmp_path, data):
    with pytest.raises((ConfigValidationError, ConfigError)):
        load_run_config(write_config(tmp_path, data))


def test_non_mapping_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigValidationError):
        load_run_config(path)


class TestOverrides:
    def test_override_sets_value(self, tmp_path):
        cfg = load_run_config(write_config(tmp_path, {}),
                              overrides=["train.epochs=7", "seed=9"])
        assert cfg.train.epochs == 7
        assert cfg.seed == 9

    def test_override_values_are_yaml_typed(self, tmp_path):
        cfg = load_run_config(
            write_config(tmp_path, {}),
            overrides=["network.dropout_rate=0.25",
                       "network.theta_trainable=false"])
        assert cfg.network.dropout_rate == 0.25
        assert cfg.network.theta_trainable is False

    def test_malformed_override_rejected(self, tmp_path):
        with pytest.raises(ConfigValidationError):
            load_run_config(write_config(tmp_path, {}), overrides=["epochs"])

    def test_override_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigValidationError):
            load_run_config(write_config(tmp_path, {}),
                            overrides=["train.warmup=3"])


class TestSeedPrecedence:
    def test_env_overrides_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "42")
        cfg = load_run_config(write_config(tmp_path, {"seed": 1}))
        assert cfg.seed == 42
        assert cfg.train.rng_seed == 42

    def test_flag_overrides_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "42")
        cfg = load_run_config(write_config(tmp_path, {"seed": 1}),
                              seed_flag=99)
        assert cfg.seed == 99

    def test_bad_env_seed_rejected(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "pi")
        with pytest.raises(ConfigValidationError):
            load_run_config(write_config(tmp_path, {}))


def test_explicit_train_encode_preserved(tmp_path):
    data = {
        "encode": {"crop_side": 32, "out_hw": 32},
        "train": {"encode": {"crop_side": 64, "out_hw": 32}},
    }
    cfg = load_run_config(write_config(tmp_path, data))
    assert cfg.train.encode.crop_side == 64
    assert cfg.encode.crop_side == 32
