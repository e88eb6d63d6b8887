import json

import numpy as np
import pytest

from tipping_scout import cli, experiments
from tipping_scout.config import ConfigError, load_config
from tipping_scout.dynsys import read_csv, write_csv
from tipping_scout.reservoir import Reservoir

BASE = """
system = "ikeda"
seed = 7
threads = 1

[training]
params = [0.91, 0.94, 0.97]
length = 2500
washout = 200

[hyperparams]
n_nodes = 60
avg_degree = 6.0
spectral_radius = 0.7
sigma_in = 1.2
k_b = 1.0
b0 = 0.7
alpha = 0.6
beta = 1e-8
"""


def write_config(tmp_path, extra="", base=BASE, name="exp.toml"):
    path = tmp_path / name
    path.write_text(base + extra)
    return path


def run(argv):
    return cli.main([str(a) for a in argv])


class TestConfig:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = write_config(tmp_path, extra="\nbogus = 1\n")
        with pytest.raises(ConfigError, match="bogus"):
            load_config(path)

    def test_unknown_hyperparam_rejected(self, tmp_path):
        path = write_config(tmp_path,
                            base=BASE.replace("beta = 1e-8",
                                              "beta = 1e-8\nrho = 0.5"))
        with pytest.raises(ConfigError, match="rho"):
            load_config(path)

    def test_missing_hyperparam_rejected(self, tmp_path):
        path = write_config(tmp_path, base=BASE.replace("beta = 1e-8\n", ""))
        with pytest.raises(ConfigError, match="beta"):
            load_config(path)

    def test_unknown_system_rejected(self, tmp_path):
        path = write_config(tmp_path, base=BASE.replace('"ikeda"', '"lorenz"'))
        with pytest.raises(ConfigError, match="system"):
            load_config(path)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")

    def test_cli_reports_config_error_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path, extra="\nbogus = 1\n")
        code = run(["simulate", "--config", path, "--out", tmp_path / "o"])
        assert code == cli.EXIT_CONFIG
        assert "bogus" in capsys.readouterr().err


class TestSimulate:
    def test_writes_csvs_and_manifest(self, tmp_path):
        cfg = write_config(tmp_path, extra="""
[simulate]
params = [0.94]
length = 500
""")
        out = tmp_path / "out"
        assert run(["simulate", "--config", cfg, "--out", out]) == 0
        series = read_csv(out / "trajectory_0.94.csv")
        assert len(series) == 500
        assert series.param == 0.94
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert "trajectory_0.94.csv" in manifest["outputs_sha256"]
        assert (out / "trajectory_0.94.png").exists()

    def test_foodchain_schema(self, tmp_path):
        cfg = write_config(tmp_path, base=BASE.replace('"ikeda"', '"foodchain"')
                           .replace("params = [0.91, 0.94, 0.97]",
                                    "params = [0.98]"),
                           extra="""
[simulate]
params = [0.98]
length = 300
""")
        out = tmp_path / "out"
        assert run(["simulate", "--config", cfg, "--out", out,
                    "--no-figures"]) == 0
        header = (out / "trajectory_0.98.csv").read_text().splitlines()[0]
        assert header == "t,R,C,P,param"

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, extra="""
[simulate]
params = [0.91]
length = 400
""")
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert run(["simulate", "--config", cfg, "--out", out1]) == 0
        assert run(["simulate", "--config", cfg, "--out", out2]) == 0
        for name in ("trajectory_0.91.csv", "trajectory_0.91.png",
                     "manifest.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestTrain:
    def test_model_and_report(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert run(["train", "--config", cfg, "--out", out]) == 0
        res = Reservoir.load(out / "model.npz")
        assert res.W_out is not None
        report = json.loads((out / "training_report.json").read_text())
        assert len(report["sessions"]) == 3
        assert report["warnings"] == []
        for session in report["sessions"]:
            assert session["one_step_rmse_normalized"] < 0.5

    def test_single_session_warns(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base=BASE.replace(
            "params = [0.91, 0.94, 0.97]", "params = [0.94]"))
        out = tmp_path / "out"
        assert run(["train", "--config", cfg, "--out", out,
                    "--no-figures"]) == 0
        report = json.loads((out / "training_report.json").read_text())
        assert any("single-parameter" in w for w in report["warnings"])
        assert "single-parameter" in capsys.readouterr().out

    def test_corrupt_csv_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,x1,x2,param\n0.0,1.0,2.0,0.9\n1.0,zap,2.0,0.9\n")
        good_src = experiments.ikeda_series(0.94, 400)
        good = tmp_path / "good.csv"
        write_csv(good_src, good)
        cfg = write_config(tmp_path, base=BASE
                           .replace('"ikeda"', '"external-csv"')
                           .replace("params = [0.91, 0.94, 0.97]",
                                    f'files = ["{good}", "{bad}"]')
                           .replace("length = 2500", "")
                           .replace("washout = 200", "washout = 50"))
        code = run(["train", "--config", cfg, "--out", tmp_path / "o"])
        assert code == cli.EXIT_DATA
        assert "bad.csv:3" in capsys.readouterr().err

    def test_dimension_mismatch_is_data_error(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_csv(experiments.ikeda_series(0.94, 300), a)
        write_csv(experiments.food_chain_series(0.98, 300), b)
        cfg = write_config(tmp_path, base=BASE
                           .replace('"ikeda"', '"external-csv"')
                           .replace("params = [0.91, 0.94, 0.97]",
                                    f'files = ["{a}", "{b}"]')
                           .replace("length = 2500", "")
                           .replace("washout = 200", "washout = 50"))
        assert run(["train", "--config", cfg, "--out", tmp_path / "o"]) == \
            cli.EXIT_DATA

    def test_rerun_byte_identical_model(self, tmp_path):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert run(["train", "--config", cfg, "--out", out1,
                    "--no-figures"]) == 0
        assert run(["train", "--config", cfg, "--out", out2,
                    "--no-figures"]) == 0
        assert (out1 / "model.npz").read_bytes() == \
            (out2 / "model.npz").read_bytes()
        assert (out1 / "manifest.json").read_bytes() == \
            (out2 / "manifest.json").read_bytes()


CRISIS_EXTRA = """
[crisis]
members = 2
b_lo = 0.9
b_hi = 1.15
resolution = 0.01
t_max = 1000.0
n_votes = 3
warmup_length = 150
"""


class TestCrisis:
    def test_artifacts_and_exit(self, tmp_path):
        cfg = write_config(tmp_path, extra=CRISIS_EXTRA)
        out = tmp_path / "out"
        assert run(["crisis", "--config", cfg, "--out", out]) == 0
        rows = (out / "crisis_members.csv").read_text().splitlines()
        assert rows[0] == "member,seed,b_star"
        assert len(rows) == 3
        summary = json.loads((out / "crisis_summary.json").read_text())
        assert summary["n"] + summary["n_excluded"] == 2
        assert (out / "crisis_histogram.png").exists()

    def test_single_member_flagged(self, tmp_path):
        cfg = write_config(tmp_path, extra=CRISIS_EXTRA.replace(
            "members = 2", "members = 1"))
        out = tmp_path / "out"
        assert run(["crisis", "--config", cfg, "--out", out,
                    "--no-figures"]) == 0
        summary = json.loads((out / "crisis_summary.json").read_text())
        assert summary["warnings"] == ["single member"]
        assert summary["std"] == 0.0

    def test_parallel_width_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, extra=CRISIS_EXTRA.replace(
            "members = 2", "members = 3"))
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert run(["crisis", "--config", cfg, "--out", out1,
                    "--threads", 1, "--no-figures"]) == 0
        assert run(["crisis", "--config", cfg, "--out", out2,
                    "--threads", 2, "--no-figures"]) == 0
        assert (out1 / "crisis_members.csv").read_bytes() == \
            (out2 / "crisis_members.csv").read_bytes()
        assert (out1 / "crisis_summary.json").read_bytes() == \
            (out2 / "crisis_summary.json").read_bytes()


class TestLifetimes:
    def test_all_censored_distinct_exit_code(self, tmp_path, capsys):
        # enormous region box: nothing ever escapes within the tiny horizon
        cfg = write_config(tmp_path, extra="""
[region]
lower = [-1e6, -1e6]
upper = [1e6, 1e6]

[lifetimes]
members = 1
n_ics = 3
b = 1.05
t_max = 50.0
warmup_length = 150
""")
        out = tmp_path / "out"
        code = run(["lifetimes", "--config", cfg, "--out", out,
                    "--no-figures"])
        assert code == cli.EXIT_ALL_CENSORED
        summary = json.loads((out / "lifetimes_summary.json").read_text())
        assert summary["tau"] is None
        assert summary["n_censored"] == 3
        rows = (out / "lifetimes.csv").read_text().splitlines()
        assert rows[0] == "member,ic,lifetime,censored"
        assert len(rows) == 4

    def test_collapsing_runs_fit(self, tmp_path):
        # interior box much smaller than the attractor: every run wanders
        # out within a few dozen samples, at varied times
        cfg = write_config(tmp_path, extra="""
[region]
lower = [-0.3, -1.0]
upper = [1.0, 0.3]
grace = 2

[lifetimes]
members = 2
n_ics = 6
b = 0.94
t_max = 500.0
warmup_length = 150
""")
        out = tmp_path / "out"
        assert run(["lifetimes", "--config", cfg, "--out", out]) == 0
        summary = json.loads((out / "lifetimes_summary.json").read_text())
        assert summary["n_escaped"] == 12
        assert summary["tau"] is not None
        assert (out / "survival.csv").exists()
        assert (out / "survival.png").exists()


class TestTune:
    def test_budget_ten_runs_initial_design(self, tmp_path):
        cfg = write_config(tmp_path, extra="""
[tune]
budget = 10
n_nodes = 40

[objective]
n_segments = 3
""")
        out = tmp_path / "out"
        assert run(["tune", "--config", cfg, "--out", out]) == 0
        rows = (out / "tune_trace.csv").read_text().splitlines()
        assert rows[0] == ("iter,loss,avg_degree,rho,sigma_in,k_b,b0,alpha,"
                           "log_beta,seed")
        assert len(rows) == 11
        fragment = (out / "best_hyperparams.toml").read_text()
        assert "[hyperparams]" in fragment
        assert (out / "tune_trace.png").exists()

    def test_fragment_is_loadable_config(self, tmp_path):
        cfg = write_config(tmp_path, extra="""
[tune]
budget = 10
n_nodes = 40

[objective]
n_segments = 3
""")
        out = tmp_path / "out"
        assert run(["tune", "--config", cfg, "--out", out,
                    "--no-figures"]) == 0
        fragment = (out / "best_hyperparams.toml").read_text()
        full = write_config(tmp_path, base=BASE[: BASE.index("[hyperparams]")]
                            + fragment, name="tuned.toml")
        config = load_config(full)
        assert config.hyperparams is not None
        assert config.hyperparams.n_nodes == 40

    def test_external_csv_requires_lyapunov(self, tmp_path, capsys):
        f = tmp_path / "s.csv"
        write_csv(experiments.ikeda_series(0.94, 2000), f)
        cfg = write_config(tmp_path, base=BASE
                           .replace('"ikeda"', '"external-csv"')
                           .replace("params = [0.91, 0.94, 0.97]",
                                    f'files = ["{f}"]')
                           .replace("length = 2500", "")
                           .replace("washout = 200", "washout = 100"),
                           extra="""
[region]
lower = [-2.0, -3.0]
upper = [3.0, 2.0]

[tune]
budget = 10
n_nodes = 40
""")
        code = run(["tune", "--config", cfg, "--out", tmp_path / "o"])
        assert code == cli.EXIT_CONFIG
        assert "lyapunov" in capsys.readouterr().err


class TestOutputDirResolution:
    def test_env_var_override(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, extra="""
[simulate]
params = [0.94]
length = 300
""")
        env_out = tmp_path / "envout"
        monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(env_out))
        assert run(["simulate", "--config", cfg, "--no-figures"]) == 0
        assert (env_out / "manifest.json").exists()

    def test_missing_output_dir_is_config_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv(cli.OUTPUT_DIR_ENV, raising=False)
        cfg = write_config(tmp_path, extra="""
[simulate]
params = [0.94]
length = 300
""")
        assert run(["simulate", "--config", cfg]) == cli.EXIT_CONFIG
