import json

import numpy as np
import pandas as pd
import pytest

from permucate.bench import (
    EXPERIMENTS,
    RESULT_COLUMNS,
    ExperimentConfig,
    cell_key,
    config_hash,
    emit_summary,
    enumerate_cells,
    parse_config,
    run_experiment,
)
from permucate.cli import main
from permucate.dgp import sample_ld
from permucate.errors import ConfigError, DataError
from permucate.io import load_dataset, save_dataset


class TestParseConfig:
    def test_defaults(self):
        config = parse_config("")
        assert config.experiment == "fig1_ld_power"
        assert config.n_grid == (250, 500, 1000, 2000)
        assert config.n_seeds == 10 and config.alpha == 0.05
        assert config.preset == "linear" and config.risk == "po_risk"

    def test_values_comments_and_lists(self):
        text = """
        # comment line
        experiment = fig3_tp_accuracy
        n_grid = 300, 600, 1200   # trailing comment
        d_grid = 20,40
        n_seeds = 3
        rho = 0.0
        """
        config = parse_config(text)
        assert config.experiment == "fig3_tp_accuracy"
        assert config.n_grid == (300, 600, 1200)
        assert config.d_grid == (20, 40)
        assert config.n_seeds == 3 and config.rho == 0.0

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match="line 2.*unknown key 'frobnicate'"):
            parse_config("n_seeds = 2\nfrobnicate = 1\n")

    def test_type_error_reports_line(self):
        with pytest.raises(ConfigError, match="line 1.*integer"):
            parse_config("n_seeds = many\n")
        with pytest.raises(ConfigError, match="line 1.*comma-separated"):
            parse_config("n_grid = a,b\n")

    def test_constraint_errors(self):
        with pytest.raises(ConfigError, match="line 1.*alpha"):
            parse_config("alpha = 1.5\n")
        with pytest.raises(ConfigError, match="n_grid"):
            parse_config("n_grid = 500, 250\n")
        with pytest.raises(ConfigError, match="experiment"):
            parse_config("experiment = fig9\n")
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_config("just some words\n")

    def test_hash_sensitive_to_values(self):
        a = parse_config("n_seeds = 2\n")
        b = parse_config("n_seeds = 3\n")
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(parse_config("n_seeds = 2\n"))


class TestEnumerateCells:
    def test_single_d_experiments(self):
        config = ExperimentConfig(experiment="fig1_ld_power", n_grid=(100, 200), n_seeds=3)
        cells = enumerate_cells(config)
        assert len(cells) == 2 * 3
        assert all(c["d"] is None for c in cells)

    def test_multi_d_experiments(self):
        config = ExperimentConfig(
            experiment="s4_delta_beta_dims", n_grid=(100,), d_grid=(20, 40, 80), n_seeds=2
        )
        cells = enumerate_cells(config)
        assert len(cells) == 3 * 2
        assert sorted({c["d"] for c in cells}) == [20, 40, 80]

    def test_cell_key_format(self):
        config = ExperimentConfig(experiment="fig1_ld_power")
        assert cell_key(config, dict(d=None, n=250, seed=1)) == "fig1_ld_power__d=-__n=250__seed=1"
        assert "fig9" not in EXPERIMENTS


class TestEmitSummary:
    def _rows(self):
        recs = []
        for method in ("permucate", "loco"):
            for var in (1, 2):
                for seed in range(2):
                    for fold in range(3):
                        psi = 4.0 + 0.1 * fold if var == 1 else 0.02 * (fold - 1)
                        recs.append(dict(experiment="e", dgp="LD", d=6, n=100, seed=seed,
                                         fold=fold, variable=var, method=method,
                                         risk_kind="po_risk", psi=psi))
        return pd.DataFrame.from_records(recs)

    def test_aggregation(self):
        summary = emit_summary(self._rows(), alpha=0.05, important={1})
        row = summary[(summary["method"] == "loco") & (summary["variable"] == 1)].iloc[0]
        assert row["mean_psi"] == pytest.approx(4.1)
        assert row["detection_rate"] == 1.0
        assert row["is_important"] == 1
        null_row = summary[(summary["method"] == "loco") & (summary["variable"] == 2)].iloc[0]
        assert null_row["detection_rate"] == 0.0
        assert null_row["is_important"] == 0

    def test_single_value_groups_have_empty_std(self):
        rows = pd.DataFrame.from_records(
            [dict(n=100, seed=0, fold=0, variable=1, method="loco", psi=1.0)]
        )
        summary = emit_summary(rows)
        assert summary.iloc[0]["std_psi"] is None
        assert summary.iloc[0]["detection_rate"] is None

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            emit_summary(pd.DataFrame())


TINY_CONFIG = """
experiment = fig1_ld_power
n_grid = 150
n_seeds = 2
outer_folds = 3
inner_folds = 2
n_permutations = 3
"""


class TestRunExperiment:
    def test_tiny_fig1(self, tmp_path):
        config = parse_config(TINY_CONFIG + f"output_dir = {tmp_path / 'out'}\n")
        paths = run_experiment(config)
        df = pd.read_csv(paths["results"])
        assert list(df.columns) == RESULT_COLUMNS
        # 2 seeds x 3 folds x 6 variables x 2 methods
        assert len(df) == 2 * 3 * 6 * 2
        assert df["wall_time_ms"].isna().all()
        assert df["wald"].notna().all()
        manifest = json.loads(paths["manifest"].read_text())
        assert len(manifest["cells_completed"]) == 2
        assert len(manifest["timings_ms"]) == 2
        summary = pd.read_csv(paths["summary"])
        assert len(summary) == 6 * 2

    def test_resume_skips_completed_cells(self, tmp_path):
        config = parse_config(TINY_CONFIG + f"output_dir = {tmp_path / 'out'}\n")
        first = run_experiment(config)
        before = first["results"].read_bytes()
        t_before = json.loads(first["manifest"].read_text())["timings_ms"]
        second = run_experiment(config, resume=True)
        assert second["results"].read_bytes() == before
        # resumed run reuses part files, so recorded timings are unchanged
        t_after = json.loads(second["manifest"].read_text())["timings_ms"]
        assert t_after == t_before

    def test_worker_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        blobs = {}
        for workers in ("1", "2"):
            monkeypatch.setenv("PERMUCATE_WORKERS", workers)
            out = tmp_path / f"w{workers}"
            config = parse_config(TINY_CONFIG + f"output_dir = {out}\n")
            paths = run_experiment(config)
            blobs[workers] = (paths["results"].read_bytes(), paths["summary"].read_bytes())
        assert blobs["1"] == blobs["2"]


class TestIo:
    def test_roundtrip(self, tmp_path):
        data = sample_ld(40, seed=0)
        path = tmp_path / "data.csv"
        save_dataset(path, data)
        loaded, tau = load_dataset(path)
        assert np.array_equal(loaded.x, data.x)
        assert np.array_equal(loaded.a, data.a)
        assert np.array_equal(loaded.y, data.y)
        assert np.array_equal(tau, data.oracle.tau(data.x))

    def test_roundtrip_without_oracle_column(self, tmp_path):
        data = sample_ld(20, seed=1)
        path = tmp_path / "data.csv"
        save_dataset(path, data, include_oracle_tau=False)
        loaded, tau = load_dataset(path)
        assert tau is None and loaded.d == 6

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("u,v,w\n1,2,3\n")
        with pytest.raises(DataError):
            load_dataset(path)

    def test_nonbinary_treatment(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,a,y\n0.5,2,1.0\n")
        with pytest.raises(DataError):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope.csv")


class TestCli:
    def test_simulate_fit_importance_roundtrip(self, tmp_path, capsys):
        data_path = tmp_path / "ld.csv"
        assert main(["simulate", "--dgp", "ld", "--n", "400", "--seed", "1",
                     "--out", str(data_path)]) == 0
        assert main(["fit", "--data", str(data_path), "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "po_risk=" in out and "pehe=" in out
        assert main(["importance", "--data", str(data_path), "--outer-folds", "3",
                     "--inner-folds", "2", "--permutations", "3"]) == 0
        out = capsys.readouterr().out
        assert "permucate" in out and "loco" in out

    def test_bench_and_plot(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(TINY_CONFIG + f"output_dir = {tmp_path / 'out'}\n")
        assert main(["bench", "--config", str(cfg)]) == 0
        results = tmp_path / "out" / "fig1_ld_power.csv"
        assert results.exists()
        assert main(["plot", "--results", str(results), "--out", str(tmp_path / "figs")]) == 0
        assert any((tmp_path / "figs").iterdir())

    def test_config_error_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("frobnicate = 1\n")
        assert main(["bench", "--config", str(cfg)]) == 2
        assert main(["bench", "--config", str(tmp_path / "missing.cfg")]) == 2

    def test_data_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("x1,a,y\n0.5,2,1.0\n")
        assert main(["fit", "--data", str(bad)]) == 3

    def test_unknown_option_exit_code(self):
        assert main(["fit", "--nonsense"]) == 2
