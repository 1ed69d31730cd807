import json
import math

import pytest
import torch

from sfe.config import (
    TrainConfig,
    full_config,
    load_config,
    parse_config,
    save_config,
    serialize_config,
)
from sfe.core import CameraPose, camera_rotation, sample_latent, sample_pose
from sfe.config import PosePrior
from sfe.errors import ConfigError


class TestSampleLatent:
    def test_deterministic_under_fixed_seed(self):
        a = sample_latent(torch.Generator().manual_seed(7), 4)
        b = sample_latent(torch.Generator().manual_seed(7), 4)
        assert torch.equal(a, b)

    def test_law_of_large_numbers(self):
        rng = torch.Generator().manual_seed(0)
        draws = sample_latent(rng, 128, count=100_000 // 128 + 1)
        assert draws.shape[1] == 128
        assert abs(draws.mean().item()) < 0.05

    def test_zero_dim_rejected(self):
        with pytest.raises(ConfigError):
            sample_latent(torch.Generator(), 0)


class TestSamplePose:
    def test_degenerate_prior_is_exact(self):
        prior = PosePrior(pitch_std=0.0, yaw_std=0.0, roll_std=0.0)
        pose = sample_pose(torch.Generator().manual_seed(3), prior)
        assert pose == CameraPose(0.0, 0.0, 0.0)

    def test_reproducible(self):
        prior = PosePrior()
        a = sample_pose(torch.Generator().manual_seed(11), prior)
        b = sample_pose(torch.Generator().manual_seed(11), prior)
        assert a == b

    def test_yaw_spread_matches_prior(self):
        # Monte-Carlo oracle: empirical stddev of 1e4 clamped draws
        prior = PosePrior(yaw_mean=0.0, yaw_std=0.3)
        rng = torch.Generator().manual_seed(5)
        yaws = torch.tensor([sample_pose(rng, prior).yaw for _ in range(10_000)])
        assert abs(yaws.std().item() - 0.3) < 0.02

    def test_clamped_to_ranges(self):
        prior = PosePrior(pitch_std=10.0, yaw_std=10.0)
        rng = torch.Generator().manual_seed(1)
        for _ in range(50):
            pose = sample_pose(rng, prior)
            assert -math.pi / 2 <= pose.pitch <= math.pi / 2
            assert -math.pi <= pose.yaw <= math.pi


class TestCameraPose:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            CameraPose(pitch=2.0, yaw=0.0)
        with pytest.raises(ValueError):
            CameraPose(pitch=0.0, yaw=4.0)

    def test_frontal_rotation_is_identity(self):
        rot = camera_rotation(CameraPose(0.0, 0.0, 0.0))
        assert torch.allclose(rot, torch.eye(3), atol=1e-6)


class TestLoadConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        cfg = load_config(path)
        assert cfg == TrainConfig()

    def test_groups_exceeding_classes_rejected(self):
        with pytest.raises(ConfigError, match="n exceeds N_cls"):
            parse_config({"model": {"num_groups": 5, "num_classes": 4, "clubbing": [0, 1, 2, 3]}})

    def test_full_scale_level_count_accepted(self):
        cfg = full_config()
        assert cfg.model.num_levels == 24

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"model": {"latent_dinn": 4}}))
        with pytest.raises(ConfigError, match="model.latent_dinn"):
            load_config(path)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="mystery"):
            parse_config({"mystery": {}})

    def test_round_trip(self, tmp_path):
        cfg = full_config()
        path = tmp_path / "cfg.json"
        save_config(cfg, path)
        assert load_config(path) == cfg
        assert serialize_config(load_config(path)) == serialize_config(cfg)

    def test_type_errors_name_key(self):
        with pytest.raises(ConfigError, match="model.latent_dim"):
            parse_config({"model": {"latent_dim": "big"}})

    def test_invalid_clubbing_length(self):
        with pytest.raises(ConfigError, match="clubbing"):
            parse_config({"model": {"clubbing": [0, 1]}})
