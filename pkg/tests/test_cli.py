import json
import os

import numpy as np
import pytest

from srbridge import cli
from srbridge.io import read_csv
from srbridge.network import NetworkParams, forward, init_params
from srbridge.stochastic import RngStream
from srbridge.training import TrainingConfig, initial_params

CONFIGS = os.path.join(os.path.dirname(cli.__file__), "configs")


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(*argv):
    return cli.main([*argv, "--quiet"])


def rows(path):
    return read_csv(path)[2]


def save_params(tmp_path, scale=None, name="p.json"):
    p = init_params([4, 5, 2], "elu", RngStream(0))
    if scale == 0:
        p = p.zeros_like()
    elif scale is not None:
        p = p.with_flat(np.full(p.size, scale))
    path = tmp_path / name
    p.save(path)
    return str(path)


class TestSimulate:
    def test_row_count_and_header(self, tmp_path):
        cfg = write_cfg(tmp_path, "[simulate]\nT = 0.5\nn = 7\nK = 3\nseed = 4\n")
        assert run("simulate", "--config", cfg, "--out", str(tmp_path / "o")) == 0
        _, header, data = read_csv(tmp_path / "o" / "paths.csv")
        assert header == ["path_id", "step", "t", "x1", "x2", "x3"]
        assert len(data) == 3 * 8
        assert read_csv(tmp_path / "o" / "paths.csv")[0] == "paths/1"
        np.testing.assert_array_equal(data[:8, 1], np.arange(8))
        np.testing.assert_allclose(data[:8, 2], np.linspace(0, 0.5, 8))

    def test_same_seed_same_bytes(self, tmp_path):
        cfg = write_cfg(tmp_path, "[simulate]\nn = 5\nK = 4\nscheme = taylor\n")
        for d in ("a", "b"):
            assert run("simulate", "--config", cfg, "--seed", "9", "--out", str(tmp_path / d)) == 0
        a = (tmp_path / "a" / "paths.csv").read_bytes()
        assert a == (tmp_path / "b" / "paths.csv").read_bytes()
        run("simulate", "--config", cfg, "--seed", "10", "--out", str(tmp_path / "c"))
        assert a != (tmp_path / "c" / "paths.csv").read_bytes()

    def test_manifest_rerun_reproduces(self, tmp_path):
        cfg = write_cfg(tmp_path, "[simulate]\nn = 5\nK = 2\nseed = 3\n")
        run("simulate", "--config", cfg, "--out", str(tmp_path / "a"))
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert man["command"] == "simulate" and man["seed"] == 3 and man["outputs"] == ["paths.csv"]
        assert man["wall_clock_seconds"] >= 0
        assert run("simulate", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")) == 0
        assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()

    def test_manifest_command_mismatch(self, tmp_path):
        cfg = write_cfg(tmp_path, "[simulate]\nn = 2\nK = 1\n")
        run("simulate", "--config", cfg, "--out", str(tmp_path / "a"))
        assert run("bridge", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path)) == 2

    @pytest.mark.slow
    def test_heisenberg_height_variance(self, tmp_path):
        # z_T is the Levy area at T = 1 from the origin: variance T^2 / 4.
        cfg = write_cfg(tmp_path, "[simulate]\nx0 = 0, 0, 0\nn = 100\nK = 10000\nseed = 21\n")
        assert run("simulate", "--config", cfg, "--out", str(tmp_path)) == 0
        data = rows(tmp_path / "paths.csv")
        z = data[data[:, 1] == 100, -1]
        assert z.size == 10000
        se = np.std(z ** 2, ddof=1) / np.sqrt(z.size)
        assert abs(np.mean(z ** 2) - 0.25) < 4 * se

    @pytest.mark.parametrize("text", [
        "[simulate]\nn = 0\n",
        "[simulate]\nscheme = rk4\n",
        "[simulate]\nbogus = 1\n",
        "[simulate]\nx0 = 1, 2\n",
        "[simulate]\ngeometry = euclidean\nscheme = heisenberg_exact\n",
        "[simulate]\nT = -1\n",
        "[simulate]\nn = ten\n",
    ])
    def test_config_errors_exit_2(self, tmp_path, text):
        assert run("simulate", "--config", write_cfg(tmp_path, text), "--out", str(tmp_path)) == 2

    def test_missing_config_file(self, tmp_path):
        assert run("simulate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)) == 2


class TestTrain:
    def test_zero_epochs_is_fresh_init(self, tmp_path):
        cfg = write_cfg(tmp_path, "[train]\nx0 = 0.5, 0, 0.8\nepochs = 0\nseed = 17\n")
        assert run("train", "--config", cfg, "--out", str(tmp_path)) == 0
        p = NetworkParams.load(tmp_path / "params.json")
        ref = initial_params(TrainingConfig(epochs=0, seed=17))
        assert p.flat().tobytes() == ref.flat().tobytes()
        assert rows(tmp_path / "loss.csv").shape == (0, 2)

    def test_short_run_outputs(self, tmp_path):
        cfg = write_cfg(tmp_path, "[train]\ngeometry = euclidean\nx0 = 0\nloss_kind = denoising_euclidean\n"
                                  "scheme = euler\nn = 5\nK = 4\nbatches_per_epoch = 1\nepochs = 3\nhidden = 4\n")
        assert run("train", "--config", cfg, "--out", str(tmp_path)) == 0
        data = rows(tmp_path / "loss.csv")
        np.testing.assert_array_equal(data[:, 0], [1, 2, 3])
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config"]["hidden"] == [4] and man["outputs"] == ["params.json", "loss.csv"]

    def test_missing_x0(self, tmp_path):
        assert run("train", "--config", write_cfg(tmp_path, "[train]\nepochs = 0\n"), "--out", str(tmp_path)) == 2

    def test_incompatible_pair(self, tmp_path):
        cfg = write_cfg(tmp_path, "[train]\nx0 = 0, 0, 0\nloss_kind = denoising_general\nscheme = euler\n")
        assert run("train", "--config", cfg, "--out", str(tmp_path)) == 2


class TestBridge:
    def test_four_horizons(self, tmp_path):
        cfg = write_cfg(tmp_path, "[bridge]\nx0 = 0.5, 0, 0.8\nT = 0.1, 0.2, 0.5, 1.0\nn = 10\nnum_samples = 5\n"
                                  "score = analytic_heisenberg\n")
        assert run("bridge", "--config", cfg, "--out", str(tmp_path), "--svg") == 0
        for tag in ("0.1", "0.2", "0.5", "1"):
            s = json.loads((tmp_path / f"summary_T{tag}.json").read_text())
            assert set(s["summary"]) == {"horizontal_norm", "z"}
            assert len(s["times"]) == 11
            assert len(rows(tmp_path / f"bridge_T{tag}.csv")) == 55
            assert (tmp_path / f"bridge_T{tag}.svg").read_text().startswith("<svg")

    def test_network_score_from_params(self, tmp_path):
        p = save_params(tmp_path, scale=0)
        cfg = write_cfg(tmp_path, "[bridge]\nx0 = 0.5, 0, 0.8\nn = 5\nnum_samples = 2\n")
        assert run("bridge", "--config", cfg, "--params", p, "--out", str(tmp_path)) == 0
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config"]["score"] == "network"

    def test_network_without_params(self, tmp_path):
        cfg = write_cfg(tmp_path, "[bridge]\nx0 = 0.5, 0, 0.8\nscore = network\n")
        assert run("bridge", "--config", cfg, "--out", str(tmp_path)) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure_exit_3(self, tmp_path):
        p = save_params(tmp_path, scale=1e200)
        cfg = write_cfg(tmp_path, "[bridge]\nx0 = 0.5, 0, 0.8\nn = 5\nnum_samples = 2\n")
        assert run("bridge", "--config", cfg, "--params", p, "--out", str(tmp_path)) == 3

    def test_shipped_euclidean_config(self, tmp_path):
        cfg = os.path.join(CONFIGS, "euclidean_1d.cfg")
        assert run("bridge", "--config", cfg, "--out", str(tmp_path)) == 0
        s = json.loads((tmp_path / "summary_T1.json").read_text())
        assert s["summary"]["norm"]["median"][-1] == 1.0


class TestScoregrid:
    def test_default_grid_zero_params(self, tmp_path):
        p = save_params(tmp_path, scale=0)
        assert run("scoregrid", "--params", p, "--out", str(tmp_path), "--svg") == 0
        _, header, data = read_csv(tmp_path / "scoregrid.csv")
        assert header == ["x1", "x2", "x3", "s1", "s2", "v1", "v2", "v3"]
        assert len(data) == 11 ** 3
        np.testing.assert_array_equal(data[:, 3:], 0.0)
        assert (tmp_path / "scoregrid.svg").exists()

    def test_shipped_grid(self, tmp_path):
        p = save_params(tmp_path)
        cfg = os.path.join(CONFIGS, "heisenberg_denoising.cfg")
        assert run("scoregrid", "--config", cfg, "--params", p, "--out", str(tmp_path)) == 0
        data = rows(tmp_path / "scoregrid.csv")
        assert len(data) == 121
        np.testing.assert_array_equal(data[:, 2], 0.2)

    def test_single_point_grid(self, tmp_path):
        p = save_params(tmp_path)
        cfg = write_cfg(tmp_path, "[scoregrid]\ngrid = 0.1 0.1 1; 0.2 0.2 1; 0.3 0.3 1\nt = 0.5\n")
        assert run("scoregrid", "--config", cfg, "--params", p, "--out", str(tmp_path), "--svg") == 0
        data = rows(tmp_path / "scoregrid.csv")
        assert len(data) == 1
        s = forward(NetworkParams.load(p), 0.5, np.array([0.1, 0.2, 0.3]))
        np.testing.assert_allclose(data[0, 3:5], s, rtol=1e-15)

    def test_wrong_network_shape(self, tmp_path):
        p = init_params([2, 3, 1], "elu", RngStream(0))
        p.save(tmp_path / "p.json")
        assert run("scoregrid", "--params", str(tmp_path / "p.json"), "--out", str(tmp_path)) == 2
