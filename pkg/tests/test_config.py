import json

import pytest

from phonemeda.config import PipelineConfig, desk_config, load_config, save_config
from phonemeda.errors import InvalidConfig
from phonemeda.model import ModelConfig


class TestPipelineConfig:
    def test_defaults(self):
        cfg = PipelineConfig().validate()
        assert cfg.hop == 896
        assert cfg.n_samples == 17640
        assert cfg.n_frames == 19
        assert cfg.model.T == 31

    def test_desk(self):
        cfg = desk_config(12, epochs=5, seed=3).validate()
        assert cfg.model.T == 17
        assert cfg.train.epochs == 5 and cfg.train.seed == 3

    @pytest.mark.parametrize("changes", [
        {"frame_length": 1000},
        {"overlap": 1024},
        {"f_max": 5000.0},
        {"clip_seconds": 0.05},
        {"pad_to": 2},
        {"n_mel": 40},
        {"phonemes": ("a", "a") + tuple(f"x{i}" for i in range(24))},
        {"phonemes": ("BEG",) + tuple(f"x{i}" for i in range(25))},
    ])
    def test_invalid(self, changes):
        with pytest.raises(InvalidConfig):
            PipelineConfig(**changes).validate()

    def test_model_width_must_match_vocabulary(self):
        with pytest.raises(InvalidConfig, match="model.T"):
            PipelineConfig(model=ModelConfig(T=30)).validate()


class TestConfigFiles:
    def test_roundtrip(self, tmp_path):
        cfg = desk_config(12, epochs=7)
        save_config(tmp_path / "c.json", cfg)
        assert load_config(tmp_path / "c.json") == cfg

    def test_partial_file_infers_t(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"phonemes": ["a", "b", "c"]}))
        cfg = load_config(tmp_path / "c.json").validate()
        assert cfg.model.T == 8

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"hop": 3}')
        with pytest.raises(InvalidConfig, match="hop"):
            load_config(tmp_path / "c.json")

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(InvalidConfig):
            load_config(tmp_path / "c.json")

    def test_no_path_gives_defaults(self):
        assert load_config() == PipelineConfig()
