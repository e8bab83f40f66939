import os

import numpy as np
import numpy.testing as npt
import pytest

import cli
from cli import (
    DEMO_FILES, CommandProcessor, cmd_demo, cmd_eval, cmd_mask, cmd_reconstruct, cmd_simulate,
    cmd_table, cmd_train_supervised, load_measurement, parse_shape, read_report_metrics,
)
from config import ConfigError, output_path, parse_value, read_config_file, resolve_config
from constants import OUTPUT_ROOT_ENV, SUPERVISED_BATCH_SIZE, SUPERVISED_ITERS, SUPERVISED_LR
from data_eval import load_image, make_phantom, psnr, save_image
from forward_models import load_mask
from prior_net import load_checkpoint


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path


@pytest.fixture
def small_net_config(workdir):
    path = workdir / "run.cfg"
    path.write_text("# tiny network for quick runs\nseed = 4\nscales = 1\nbase_channels = 2\nmax_iters = 3\n")
    return str(path)


def _phantom_and_mask(workdir, task="sr", af=4, size=32):
    image_path = str(workdir / "x.pgm")
    save_image(image_path, make_phantom(size, seed=2))
    cmd_mask(task, af, (size, size), "mask.pbm")
    return image_path, str(workdir / "mask.pbm")


class TestConfig:

    def test_file_and_flags(self, small_net_config):
        cfg = resolve_config(small_net_config, {"max_iters": 10, "lr": None})
        assert cfg.seed == 4
        assert cfg.max_iters == 10
        assert cfg.lr == 1e-4
        assert cfg.scales == 1

    def test_preset_fill(self, small_net_config):
        cfg = resolve_config(small_net_config, {"task": "sr8"})
        assert (cfg.alpha, cfg.beta, cfg.gamma) == (0.0, 7.0, 0.0)
        assert cfg.input_mode == "meshgrid"

    def test_explicit_weights_win(self, small_net_config):
        cfg = resolve_config(small_net_config, {"task": "sr8", "beta": 2.0})
        assert cfg.beta == 2.0

    def test_unknown_key(self, workdir):
        path = workdir / "bad.cfg"
        path.write_text("seed = 1\nlearning_rate = 0.1\n")
        with pytest.raises(ConfigError):
            read_config_file(str(path))

    @pytest.mark.parametrize("key", ["size", "noise_std", "measurement", "mask", "out_prefix", "batch_size"])
    def test_keys_reconstruct_cannot_use(self, workdir, key):
        path = workdir / "extra.cfg"
        path.write_text(f"seed = 1\n{key} = 4\n")
        with pytest.raises(ConfigError):
            read_config_file(str(path))

    def test_output_activation_key(self):
        cfg = resolve_config(None, {"seed": 1, "output_activation": "linear"})
        assert cfg.net_config().output_activation == "linear"
        with pytest.raises(ConfigError):
            resolve_config(None, {"seed": 1, "output_activation": "tanh"})

    def test_missing_seed(self):
        with pytest.raises(ConfigError):
            resolve_config(None, {"task": "sr4"})

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_value("max_iters", "many")
        with pytest.raises(ConfigError):
            parse_value("early_stop", "maybe")
        assert parse_value("early_stop", "yes") is True
        assert parse_value("alpha", "None") is None

    def test_invalid_combination(self):
        with pytest.raises(ConfigError):
            resolve_config(None, {"seed": 1, "max_iters": 0})

    def test_echo_is_sorted(self):
        lines = resolve_config(None, {"seed": 1}).echo().splitlines()
        assert lines == sorted(lines)
        assert "seed = 1" in lines

    def test_output_root(self, workdir):
        path = output_path("sub/file.txt")
        assert path == os.path.join(str(workdir), "sub/file.txt")
        assert os.path.isdir(os.path.join(str(workdir), "sub"))


class TestMaskCommand:

    @pytest.mark.parametrize("task,af,fraction", [("sr", 4, "0.25"), ("sr", 1, "1")])
    def test_prints_fraction(self, workdir, capsys, task, af, fraction):
        cmd_mask(task, af, (64, 64), "m.pbm")
        assert f"sampled fraction: {fraction}\n" in capsys.readouterr().out
        assert (workdir / "m.pbm").exists()

    def test_dealias_x8(self, workdir):
        mask = cmd_mask("dealias", 8, (64, 64), "m.pbm")
        assert 0.125 <= mask.sampled_fraction <= 0.165 + 1e-9
        npt.assert_array_equal(load_mask(str(workdir / "m.pbm")).values, mask.values)

    def test_bad_combination_is_usage_error(self, workdir):
        assert CommandProcessor().process_command(["mask", "--task", "sr", "--af", "3", "--out", "m.pbm"]) == 2
        assert CommandProcessor().process_command(["mask", "--task", "sr", "--af", "2.5", "--out", "m.pbm"]) == 2

    def test_parse_shape(self):
        assert parse_shape("64") == (64, 64)
        assert parse_shape("32x16") == (32, 16)


class TestSimulateCommand:

    def test_full_mask_preview_matches_input(self, workdir):
        image_path, mask_path = _phantom_and_mask(workdir, "full", 1)
        _, preview = cmd_simulate(image_path, mask_path, 0.0, 0, "y.raw")
        npt.assert_allclose(load_image(preview), load_image(image_path), atol=2.0 / 65535)

    def test_reproducible(self, workdir):
        image_path, mask_path = _phantom_and_mask(workdir)
        first = [open(p, 'rb').read() for p in cmd_simulate(image_path, mask_path, 0.05, 3, "a.raw")]
        second = [open(p, 'rb').read() for p in cmd_simulate(image_path, mask_path, 0.05, 3, "b.raw")]
        assert first == second

    def test_sr_preview_is_blurred(self, workdir):
        image_path, mask_path = _phantom_and_mask(workdir, size=64)
        measurement, preview = cmd_simulate(image_path, mask_path, 0.0, 0, "y.raw")
        assert psnr(load_image(image_path), load_image(preview)) < 35.0
        assert load_measurement(measurement).shape == (64, 64)

    def test_shape_mismatch(self, workdir):
        image_path = str(workdir / "x.pgm")
        save_image(image_path, make_phantom(32, seed=2))
        cmd_mask("sr", 4, (64, 64), "mask.pbm")
        status = CommandProcessor().process_command(
            ["simulate", "--image", image_path, "--mask", str(workdir / "mask.pbm"), "--seed", "0", "--out", "y.raw"])
        assert status != 0


class TestReconstructCommand:

    def _measurement(self, workdir):
        image_path, mask_path = _phantom_and_mask(workdir)
        measurement, _ = cmd_simulate(image_path, mask_path, 0.0, 0, "y.raw")
        return measurement, mask_path

    def test_tv_defaults(self, workdir, small_net_config, capsys):
        measurement, mask_path = self._measurement(workdir)
        _, report = cmd_reconstruct("tv", measurement, mask_path, small_net_config, "tv")
        out = capsys.readouterr().out
        assert "tv_weight = 0.01" in out
        assert "tv_iters = 200" in out
        assert report.iterations == 200
        for suffix in (".pgm", ".raw", "_loss.csv", "_summary.txt"):
            assert (workdir / f"tv{suffix}").exists()

    def test_ssl_x8_echoes_preset(self, workdir, small_net_config, capsys):
        measurement, mask_path = self._measurement(workdir)
        cmd_reconstruct("ssl", measurement, mask_path, small_net_config, "ssl", {"task": "sr8"})
        out = capsys.readouterr().out
        assert "alpha = 0.0" in out
        assert "beta = 7.0" in out
        assert "gamma = 0.0" in out
        assert "# resolved configuration" in (workdir / "ssl_summary.txt").read_text()

    def test_ssl_is_deterministic(self, workdir, small_net_config):
        measurement, mask_path = self._measurement(workdir)
        cmd_reconstruct("ssl", measurement, mask_path, small_net_config, "run1")
        cmd_reconstruct("ssl", measurement, mask_path, small_net_config, "run2")
        for suffix in (".pgm", ".raw", "_loss.csv"):
            assert (workdir / f"run1{suffix}").read_bytes() == (workdir / f"run2{suffix}").read_bytes()

    def test_missing_seed_fails(self, workdir):
        measurement, mask_path = self._measurement(workdir)
        status = CommandProcessor().process_command(
            ["reconstruct", "--method", "tv", "--measurement", measurement, "--mask", mask_path])
        assert status != 0

    def test_supervised_apply_needs_checkpoint(self, workdir):
        measurement, mask_path = self._measurement(workdir)
        status = CommandProcessor().process_command(
            ["reconstruct", "--method", "supervised-apply", "--measurement", measurement,
             "--mask", mask_path, "--seed", "1"])
        assert status != 0


class TestEvalCommand:

    def test_self_comparison_and_bad_file(self, workdir):
        ref = str(workdir / "ref.pgm")
        save_image(ref, make_phantom(32, seed=1))
        other = str(workdir / "small.pgm")
        save_image(other, np.zeros((16, 16)))
        records, failures = cmd_eval(ref, [ref, other], "eval.csv")
        assert failures == 1
        assert records[0].psnr == 100.0
        lines = (workdir / "eval.csv").read_text().splitlines()
        assert lines[0] == "path,psnr,ssim"
        assert lines[1] == f"{ref},100.000000,1.000000"

    def test_exit_status_on_failure(self, workdir):
        ref = str(workdir / "ref.pgm")
        save_image(ref, make_phantom(32, seed=1))
        status = CommandProcessor().process_command(["eval", "--ref", ref, "--out", "e.csv", ref, "missing.pgm"])
        assert status == 1


class TestDemoCommand:

    def test_artifacts_and_determinism(self, workdir):
        cmd_demo("sr4", 32, 7, "run_a", max_iters=3)
        cmd_demo("sr4", 32, 7, "run_b", max_iters=3)
        assert sorted(os.listdir(workdir / "run_a")) == sorted(DEMO_FILES)
        for name in DEMO_FILES:
            assert (workdir / "run_a" / name).read_bytes() == (workdir / "run_b" / name).read_bytes(), name
        metrics = read_report_metrics(str(workdir / "run_a" / "report.csv"))
        assert set(metrics) == {"corrupted", "tv", "ssl"}

    def test_processor_lists_every_command(self):
        commands = CommandProcessor().get_commands()
        for name in ("mask", "simulate", "reconstruct", "eval", "train-supervised", "demo", "table", "view"):
            assert name in commands

    def test_table_rows(self, workdir):
        records = cmd_table(32, 0, "table.csv", max_iters=1)
        assert [(r.task, r.method) for r in records[:3]] == [("sr4", "corrupted"), ("sr4", "tv"), ("sr4", "ssl")]
        assert {r.task for r in records} == {"sr4", "dealias4", "sr8", "dealias8"}
        lines = (workdir / "table.csv").read_text().splitlines()
        assert lines[0] == "task,method,psnr,ssim"
        assert len(lines) == 1 + 4 * 3

    def test_table_trains_supervised_with_minibatches(self, workdir, monkeypatch):
        seen = []
        train = cli.supervised_train

        def recording_train(pairs, net_cfg, fit_cfg):
            seen.append(fit_cfg)
            return train(pairs, net_cfg, fit_cfg)

        monkeypatch.setattr(cli, "supervised_train", recording_train)
        records = cmd_table(32, 0, "table.csv", with_supervised=True, n_train=2, max_iters=1, supervised_iters=1)
        assert len(records) == 4 * 4
        assert [(f.max_iters, f.lr, f.batch_size) for f in seen] == [(1, SUPERVISED_LR, SUPERVISED_BATCH_SIZE)] * 4

    def test_table_supervised_flags(self):
        parser = CommandProcessor().parser
        args = parser.parse_args(["table", "--seed", "0", "--out", "t.csv"])
        assert (args.supervised_iters, args.supervised_lr, args.batch_size) == \
            (SUPERVISED_ITERS, SUPERVISED_LR, SUPERVISED_BATCH_SIZE)
        args = parser.parse_args(["table", "--seed", "0", "--out", "t.csv", "--supervised-iters", "10",
                                  "--supervised-lr", "0.01", "--batch-size", "8"])
        assert (args.supervised_iters, args.supervised_lr, args.batch_size) == (10, 0.01, 8)

    def test_train_supervised_checkpoint(self, workdir, capsys):
        params, report = cmd_train_supervised("sr4", 2, 32, 1, "sup.ckpt", max_iters=2)
        assert report.iterations == 2
        assert "final training loss" in capsys.readouterr().out
        loaded = load_checkpoint(str(workdir / "sup.ckpt"))
        assert loaded.config.input_mode == "stacked"
        for name, tensor in params.items():
            npt.assert_array_equal(loaded[name].values, tensor.values)

    @pytest.mark.slow
    def test_sr4_ordering(self, workdir):
        records = {r.method: r for r in cmd_demo("sr4", 64, 0, "demo", max_iters=3000)}
        assert records["corrupted"].psnr < records["tv"].psnr <= records["ssl"].psnr
