import json
from pathlib import Path

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from sfe.checkpoint import save_generator
from sfe.cli import main
from sfe.config import serialize_config
from sfe.metrics import downsample_embedder
from sfe.rawio import load_labels_png, save_raw_f32
from sfe.render import Generator
from tests.conftest import tiny_config


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_checkpoint(tmp_path):
    cfg = tiny_config()
    torch.manual_seed(0)
    gen = Generator(cfg)
    path = tmp_path / "tiny.sfe"
    save_generator(path, gen, {"iteration": 0, "stage": 1})
    return path


def write_config(tmp_path, cfg) -> Path:
    path = tmp_path / "config.json"
    path.write_text(serialize_config(cfg))
    return path


class TestSynth:
    def test_writes_layout(self, runner, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        out = tmp_path / "ds"
        result = runner.invoke(
            main, ["synth", "--config", str(cfg_path), "--out", str(out), "--count", "3"]
        )
        assert result.exit_code == 0, result.output
        assert len(list((out / "images").glob("*.png"))) == 3
        assert (out / "poses.json").is_file()


class TestRender:
    def test_deterministic_bytes(self, runner, tmp_path, tiny_checkpoint):
        outputs = []
        for name in ("one", "two"):
            prefix = tmp_path / name / "frame"
            result = runner.invoke(
                main,
                ["render", "--checkpoint", str(tiny_checkpoint), "--seed", "1",
                 "--out", str(prefix)],
            )
            assert result.exit_code == 0, result.output
            outputs.append((prefix.parent / "frame_rgb.png").read_bytes())
        assert outputs[0] == outputs[1]

    def test_bad_pose_is_config_error(self, runner, tmp_path, tiny_checkpoint):
        result = runner.invoke(
            main,
            ["render", "--checkpoint", str(tiny_checkpoint), "--pitch", "9",
             "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2
        diag = json.loads(result.stderr.strip().splitlines()[-1])
        assert diag["error"] == "ConfigError"


class TestMetrics:
    def test_identical_sets_fid_zero(self, runner, tmp_path):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(64, 12)).astype(np.float32)
        path = tmp_path / "emb.f32"
        save_raw_f32(emb, path)
        result = runner.invoke(
            main, ["metrics", "--a", str(path), "--b", str(path), "--subset-size", "32"]
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output.strip())
        assert abs(payload["fid"]) <= 1e-6
        assert abs(payload["kid"]) <= 1e-6

    def test_image_directories_accepted(self, runner, tmp_path):
        cfg = tiny_config()
        cfg.data.synthetic.count = 4
        from sfe.data import synth_generate

        ds = synth_generate(cfg, seed=0)
        ds.save(tmp_path / "ds")
        result = runner.invoke(
            main,
            ["metrics", "--a", str(tmp_path / "ds" / "images"),
             "--b", str(tmp_path / "ds" / "images"), "--subset-size", "4"],
        )
        assert result.exit_code == 0, result.output
        # 4 images x 192 dims: rank-3 covariance, so sqrtm noise dominates
        assert abs(json.loads(result.output)["fid"]) <= 1e-4


class TestTrain:
    def test_malformed_config_names_key(self, runner, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"model": {"num_groups": 9}}))
        result = runner.invoke(main, ["train", "--config", str(cfg_path)])
        assert result.exit_code == 2
        diag = json.loads(result.stderr.strip().splitlines()[-1])
        assert "num_groups" in diag["message"]

    def test_tiny_schedule_and_finished_resume(self, runner, tmp_path):
        cfg = tiny_config()
        cfg.training.stage1_steps = 3
        cfg.training.stage2_steps = 1
        cfg.training.checkpoint_every = 2
        cfg_path = write_config(tmp_path, cfg)
        out = tmp_path / "run"
        result = runner.invoke(
            main, ["train", "--config", str(cfg_path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        final = out / "ckpt_final.sfe"
        assert final.is_file()
        again = runner.invoke(
            main,
            ["train", "--config", str(cfg_path), "--out", str(out), "--resume", str(final)],
        )
        assert again.exit_code == 0
        assert "nothing to do" in again.output


class TestInvertEditTransfer:
    def test_invert_then_edit_then_transfer(self, runner, tmp_path, tiny_checkpoint):
        # seed a self-generated target via the render command
        render_prefix = tmp_path / "target" / "t"
        result = runner.invoke(
            main,
            ["render", "--checkpoint", str(tiny_checkpoint), "--seed", "3",
             "--out", str(render_prefix)],
        )
        assert result.exit_code == 0, result.output
        image = render_prefix.parent / "t_rgb.png"
        mask = render_prefix.parent / "t_labels.png"

        inv_dir = tmp_path / "inv"
        result = runner.invoke(
            main,
            ["invert", "--checkpoint", str(tiny_checkpoint), "--image", str(image),
             "--mask", str(mask), "--out", str(inv_dir), "--steps", "2",
             "--pivot-samples", "32"],
        )
        assert result.exit_code == 0, result.output
        assert "final mIoU" in result.output
        assert (inv_dir / "offsets.sfe").is_file()

        # zero-change edit: reuse the inversion's own labels
        edit_dir = tmp_path / "edit"
        result = runner.invoke(
            main,
            ["edit", "--checkpoint", str(tiny_checkpoint), "--inversion", str(inv_dir),
             "--edited-mask", str(inv_dir / "labels.png"), "--out", str(edit_dir)],
        )
        assert result.exit_code == 0, result.output
        assert "changed pixels: 0" in result.output

        inv2_dir = tmp_path / "inv2"
        result = runner.invoke(
            main,
            ["invert", "--checkpoint", str(tiny_checkpoint), "--image", str(image),
             "--mask", str(mask), "--out", str(inv2_dir), "--steps", "2",
             "--pivot-samples", "32"],
        )
        assert result.exit_code == 0, result.output
        out_dir = tmp_path / "swap"
        result = runner.invoke(
            main,
            ["transfer", "--checkpoint", str(tiny_checkpoint), "--source", str(inv_dir),
             "--target", str(inv2_dir), "--semantic", "1", "--mode", "appearance",
             "--out", str(out_dir)],
        )
        assert result.exit_code == 0, result.output
        assert (out_dir / "render.png").is_file()
