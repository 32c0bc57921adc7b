"""Tests for the INI run configuration."""

import pytest

from sepkit.config import (
    ConfigError,
    DataConfig,
    ModelConfig,
    RunConfig,
    TrainingConfig,
    default_config,
    load_config,
    save_config,
)


class TestDefaults:
    def test_default_config_is_valid(self):
        config = default_config()
        assert config.model.arch == "single"
        assert config.training.batch_size == 2
        assert config.data.split_fractions == (0.7, 0.2, 0.1)

    def test_frame_spec_follows_window_and_rate(self):
        config = default_config()  # 5 ms at 8 kHz
        spec = config.frame_spec()
        assert (spec.window_len, spec.hop, spec.fft_len) == (40, 20, 64)

    def test_stft_model_derives_bin_count(self):
        config = default_config()
        net = config.mask_net_config()
        assert net.basis_kind == "stft"
        assert net.n_basis == config.frame_spec().n_bins == 33

    def test_learned_model_uses_configured_basis(self):
        config = RunConfig(model=ModelConfig(basis="learned", n_basis=48))
        assert config.mask_net_config().n_basis == 48

    def test_training_settings_pass_through(self):
        config = RunConfig(training=TrainingConfig(steps=7, seed=3))
        settings = config.training.settings()
        assert settings.steps == 7
        assert settings.seed == 3
        assert settings.learning_rate == 1e-3


class TestValidation:
    def test_window_must_be_a_supported_choice(self):
        with pytest.raises(ConfigError, match="window_ms"):
            ModelConfig(window_ms=7.0)

    def test_arch_and_basis_validated(self):
        with pytest.raises(ConfigError, match="arch"):
            ModelConfig(arch="both")
        with pytest.raises(ConfigError, match="basis"):
            ModelConfig(basis="mel")


class TestRoundTrip:
    def test_save_load_preserves_every_field(self, tmp_path):
        config = RunConfig(
            model=ModelConfig(arch="iterative", basis="learned",
                              window_ms=2.5, n_basis=96, repeats=3,
                              init_seed=11),
            training=TrainingConfig(steps=123, learning_rate=5e-4,
                                    tau=1e-7, seed=9),
            data=DataConfig(sample_rate_hz=16000, clip_s=1.5, n_mixtures=50,
                            distinct_families=True, seed=4))
        path = tmp_path / "run.ini"
        save_config(config, path)
        assert load_config(path) == config

    def test_partial_file_keeps_defaults(self, tmp_path):
        path = tmp_path / "partial.ini"
        path.write_text("[training]\nsteps = 5\n")
        config = load_config(path)
        assert config.training.steps == 5
        assert config.training.batch_size == 2
        assert config.model == ModelConfig()

    def test_booleans_parse_in_both_directions(self, tmp_path):
        path = tmp_path / "flags.ini"
        path.write_text("[data]\ndistinct_families = yes\n")
        assert load_config(path).data.distinct_families is True
        path.write_text("[data]\ndistinct_families = false\n")
        assert load_config(path).data.distinct_families is False


class TestErrors:
    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[optimizer]\nlr = 1\n")
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[training]\nstep = 5\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    def test_bad_number_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[training]\nsteps = many\n")
        with pytest.raises(ConfigError, match="steps"):
            load_config(path)

    def test_bad_boolean_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[data]\ndistinct_families = maybe\n")
        with pytest.raises(ConfigError, match="boolean"):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")

    def test_out_of_range_value_reported_with_path(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[model]\nwindow_ms = 7.0\n")
        with pytest.raises(ConfigError, match="window_ms"):
            load_config(path)
