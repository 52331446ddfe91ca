"""Integration tests: runtime settings, experiment configs, the full grid and the CLI."""

import argparse
import json
import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
import yaml

from benchmark import main
from config import Config, load_env_file
from run_experiment import (METRICS, ExperimentReport, StageError, format_auroc, load_experiment_config,
                            render_tables, run, run_importance)
from train_model import main as train_main

FAST_LEARNERS = [
    {"name": "logreg_l2", "kind": "LogRegL2"},
    {"name": "random_forest", "kind": "RandomForest", "hyperparams": {"n_trees": 5, "max_depth": 4}},
    {"name": "gbdt_raw", "kind": "GBDT", "pathway": "RawCategoricalPathway",
     "hyperparams": {"num_iterations": 10, "max_depth": 3, "early_stopping_patience": 3}},
]


def write_config(directory, n_loans=1500, rate=0.05, seed=7, **overrides):
    """Write an experiment YAML for a small synthetic run and return its path."""
    raw = {
        "seed": seed,
        "output_dir": "outputs",
        "data": {"source": "synthetic", "generate": {"n_loans": n_loans, "base_default_rate": rate}},
        "partition": {"c1": "112023", "c2": "062024"},
        "ratios": [1, 2],
        "learners": FAST_LEARNERS,
        "report": {"roc_ratio": 2, "importance_ratio": 2, "importance_repeats": 2},
        "n_jobs": 1,
        "mlflow": False,
    }
    raw.update(overrides)
    path = Path(directory) / "experiment.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(raw, fh)
    return path


def report_for(tables, ratios=(1, 2)):
    columns = [f"1:{x}" for x in ratios]
    auroc = {metric: pd.DataFrame(tables, index=["a", "b"], columns=columns, dtype=float) for metric in METRICS}
    return ExperimentReport(models=["a", "b"], ratios=list(ratios), auroc=auroc, stopping=pd.DataFrame())


class TestRuntimeConfig:
    """Tests for environment-driven settings."""

    def test_defaults(self):
        with patch.dict('os.environ', {}, clear=True):
            cfg = Config(load_dotenv=False)
            assert cfg.n_jobs == 1
            assert cfg.output_dir == 'outputs'
            assert cfg.enable_mlflow is False
            assert cfg.mlflow_experiment_name == 'mortgage-default-benchmark'
            assert cfg.validate() == []

    def test_environment_overrides(self):
        env = {'BENCH_N_JOBS': '-1', 'BENCH_LOG_LEVEL': 'debug', 'ENABLE_MLFLOW': 'True'}
        with patch.dict('os.environ', env, clear=True):
            cfg = Config(load_dotenv=False)
            assert cfg.n_jobs == -1
            assert cfg.log_level == 'DEBUG'
            assert cfg.enable_mlflow is True
            assert cfg.validate() == []

    def test_invalid_settings_reported(self):
        env = {'BENCH_N_JOBS': 'many', 'BENCH_LOG_LEVEL': 'loud'}
        with patch.dict('os.environ', env, clear=True):
            problems = Config(load_dotenv=False).validate()
        assert len(problems) == 2
        assert any('BENCH_N_JOBS' in p for p in problems)
        assert any('BENCH_LOG_LEVEL' in p for p in problems)

    def test_env_file_never_overrides_environment(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            env_path = os.path.join(tmpdir, '.env')
            with open(env_path, 'w') as fh:
                fh.write("# local settings\nBENCH_N_JOBS=4\nBENCH_OUTPUT_DIR='results'\n\n")
            with patch.dict('os.environ', {'BENCH_N_JOBS': '2'}, clear=True):
                load_env_file(env_path)
                cfg = Config(load_dotenv=False)
                assert cfg.n_jobs == 2
                assert cfg.output_dir == 'results'

    def test_bad_settings_fail_the_cli(self, capsys):
        with patch.dict('os.environ', {'BENCH_N_JOBS': '0'}):
            assert main(['generate', '--n-loans', '5']) == 1
        assert 'BENCH_N_JOBS' in capsys.readouterr().err


class TestExperimentConfig:
    """Tests for YAML experiment files."""

    def test_shipped_config_loads(self):
        path = Path(__file__).resolve().parents[1] / "configs" / "synthetic.yaml"
        experiment = load_experiment_config(path)
        assert experiment.ratios == (1, 2, 5, 10)
        assert [s.name for s in experiment.learners] == ["logreg_l1", "logreg_l2", "random_forest",
                                                         "gbdt_onehot", "gbdt_raw"]
        assert str(experiment.cutoffs.c1) == "112023"
        assert experiment.generate.seed == experiment.seed == 0
        assert experiment.zip3_path.exists()

    def test_seed_override_reaches_generator(self, tmp_path):
        experiment = load_experiment_config(write_config(tmp_path), seed=5)
        assert experiment.seed == 5
        assert experiment.generate.seed == 5
        assert experiment.output_dir == tmp_path / "outputs"

    def test_relative_paths_resolve_against_the_file(self, tmp_path):
        (tmp_path / "loans.psv").write_text("")
        path = write_config(tmp_path, data={"source": "file", "path": "loans.psv"})
        experiment = load_experiment_config(path, output_dir=tmp_path / "elsewhere")
        assert experiment.data_path == tmp_path / "loans.psv"
        assert experiment.generate is None
        assert experiment.output_dir == tmp_path / "elsewhere"

    def test_every_problem_is_listed(self, tmp_path):
        learners = [{"name": "same", "kind": "LogRegL1"}, {"name": "same", "kind": "LogRegL2"}]
        path = write_config(tmp_path, data={}, learners=learners, ratios=[1, 5])
        with pytest.raises(ValueError) as info:
            load_experiment_config(path)
        message = str(info.value)
        assert "either a file path" in message
        assert "unique" in message
        assert "roc_ratio" in message
        assert "importance_ratio" in message

    def test_missing_data_file(self, tmp_path):
        path = write_config(tmp_path, data={"source": "file", "path": "absent.psv"})
        with pytest.raises(ValueError, match="absent.psv"):
            load_experiment_config(path)


class TestRenderTables:
    """Tests for the rendered AUROC tables."""

    def test_rounding_is_half_even(self):
        assert format_auroc(0.12345) == "0.1234"
        assert format_auroc(0.12355) == "0.1236"
        assert format_auroc(0.5) == "0.5000"
        assert format_auroc(1.0) == "1.0000"

    def test_best_row_names_column_winner(self):
        rendered = render_tables(report_for([[0.71, 0.80], [0.75, 0.78]]))
        lines = rendered.csv["test"].splitlines()
        assert lines[0] == "model,1:1,1:2"
        assert lines[1] == "a,0.7100,0.8000"
        assert lines[-1] == "best,b,a"
        assert "**0.7500**" in rendered.markdown
        assert "**0.8000**" in rendered.markdown

    def test_ties_go_to_first_model(self):
        rendered = render_tables(report_for([[0.7, 0.7], [0.7, 0.7]]))
        assert rendered.csv["validation"].splitlines()[-1] == "best,a,a"

    def test_single_model_single_ratio(self):
        auroc = {metric: pd.DataFrame([[0.9]], index=["only"], columns=["1:2"]) for metric in METRICS}
        rendered = render_tables(ExperimentReport(["only"], [2], auroc, pd.DataFrame()))
        assert rendered.csv["train"] == "model,1:2\nonly,0.9000\nbest,only\n"
        assert "### Train-test AUROC gap" in rendered.markdown
        assert "| only | 0.0000 |" in rendered.markdown


class TestEndToEnd:
    """Tests for the full models x ratios grid on generated data."""

    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        base = tmp_path_factory.mktemp("grid")
        first = load_experiment_config(write_config(base), output_dir=base / "first")
        second = load_experiment_config(write_config(base), output_dir=base / "second")
        return run(first), run(second), base

    def test_report_shape(self, runs):
        report, _, _ = runs
        for metric in METRICS:
            table = report.table(metric)
            assert table.index.tolist() == ["logreg_l2", "random_forest", "gbdt_raw"]
            assert table.columns.tolist() == ["1:1", "1:2"]
            values = table.to_numpy(dtype=float)
            assert np.all((values >= 0.0) & (values <= 1.0))

    def test_artifacts_written(self, runs):
        _, _, base = runs
        out = base / "first"
        for name in ("auroc_train.csv", "auroc_validation.csv", "auroc_validation_full.csv", "auroc_test.csv",
                     "tables.md", "stopping.csv", "encoder.json", "schema_audit.csv", "sample_manifest.csv",
                     "discarded_rows.csv", "partition_summary.csv", "report.json"):
            assert (out / name).exists(), name
        assert len(list((out / "models").glob("*.joblib"))) == 6
        assert sorted(p.name for p in (out / "roc").glob("*.csv")) == [
            "gbdt_raw_1to2.csv", "logreg_l2_1to2.csv", "random_forest_1to2.csv"]

    def test_importance_for_best_model(self, runs):
        report, _, base = runs
        best = report.table("test")["1:2"].idxmax()
        assert report.importance_model == best
        assert report.importance_path == base / "first" / f"importance_{best}_1to2.csv"
        assert report.importance.drops.shape[1] == 2

    def test_leakage_prone_columns_never_reach_models(self, runs):
        _, _, base = runs
        audit = pd.read_csv(base / "first" / "schema_audit.csv")
        dropped = set(audit.loc[audit["status"] == "dropped", "column"])
        assert {"PMT_HISTORY", "LOAN_ID", "ACT_PERIOD", "DLQ_STATUS", "MI_CANCEL_FLAG"} <= dropped
        encoder = json.loads((base / "first" / "encoder.json").read_text())
        assert "PMT_HISTORY" not in encoder["keep_categorical"]
        assert "MI_CANCEL_FLAG" not in encoder["keep_categorical"]

    def test_report_json(self, runs):
        report, _, base = runs
        summary = json.loads((base / "first" / "report.json").read_text())
        assert summary["importance_model"] == report.importance_model
        assert summary["importance_ratio"] == "1:2"
        assert "tables.md" in summary["files"]
        assert {row["split"] for row in summary["partition"]} >= {"Train", "Validation", "Test"}

    def test_identical_seed_gives_identical_files(self, runs):
        first, _, base = runs
        names = [p.relative_to(base / "first") for p in first.files if p.suffix in (".csv", ".md")]
        assert names
        for name in names:
            assert (base / "first" / name).read_bytes() == (base / "second" / name).read_bytes(), name


class TestStageFailures:
    """Tests for stage-tagged failures and the partial manifest."""

    def test_empty_test_split_fails_partition(self, tmp_path):
        path = write_config(tmp_path, n_loans=200, partition={"c1": "112023", "c2": "122025"})
        experiment = load_experiment_config(path)
        with pytest.raises(StageError) as info:
            run(experiment)
        assert info.value.stage == "partition"
        manifest = json.loads((experiment.output_dir / "partial_manifest.json").read_text())
        assert manifest["failed_stage"] == "partition"
        assert manifest["error"].startswith("ValueError")
        assert any(p.endswith("loans.psv") for p in manifest["outputs"])
        assert manifest["config"]["cutoffs"] == ["112023", "122025"]

    def test_unreadable_rows_fail_ingest(self, tmp_path):
        (tmp_path / "loans.psv").write_text("not|a|loan\n")
        path = write_config(tmp_path, data={"source": "file", "path": "loans.psv"})
        experiment = load_experiment_config(path)
        with pytest.raises(StageError) as info:
            run(experiment)
        assert info.value.stage == "ingest"
        assert (experiment.output_dir / "partial_manifest.json").exists()

    def test_importance_needs_a_finished_run(self, tmp_path):
        experiment = load_experiment_config(write_config(tmp_path, n_loans=50))
        with pytest.raises(FileNotFoundError, match="report.json"):
            run_importance(experiment)


class TestBenchmarkCli:
    """Tests for the command-line entry point."""

    def test_generate_without_config(self, tmp_path, capsys):
        assert main(['generate', '--n-loans', '40', '--rate', '0.2', '--seed', '1',
                     '--output-dir', str(tmp_path)]) == 0
        assert (tmp_path / "data" / "loans.psv").exists()
        assert "✓ Saved manifest" in capsys.readouterr().out

    def test_split_prints_summary(self, tmp_path, capsys):
        assert main(['split', '--config', str(write_config(tmp_path))]) == 0
        out = capsys.readouterr().out
        assert "Cutoffs: 112023 / 062024" in out
        assert "Validation" in out

    def test_split_matrices_feed_the_training_script(self, tmp_path):
        assert main(['split', '--config', str(write_config(tmp_path)), '--write-matrices']) == 0
        matrices = tmp_path / "outputs" / "matrices"
        assert len(list(matrices.glob("*.csv"))) == 6
        args = argparse.Namespace(
            train_matrix=str(matrices / "train_RawCategoricalPathway.csv"),
            val_matrix=str(matrices / "validation_RawCategoricalPathway.csv"),
            learner='gbdt_raw', seed=0, n_jobs=1, output_model=str(tmp_path / "gbdt.joblib"),
            metrics_path=None, mlflow=False,
        )
        with patch.dict('os.environ', {'ENABLE_MLFLOW': 'false'}):
            assert train_main(args) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["pathway"] == "RawCategoricalPathway"

    def test_audit_lists_columns(self, tmp_path, capsys):
        assert main(['audit', '--config', str(write_config(tmp_path, n_loans=300))]) == 0
        out = capsys.readouterr().out
        assert "PaymentHistory" in out
        assert "Kept 44 columns" in out

    def test_audit_fails_on_unclassified_column(self, tmp_path, capsys):
        (tmp_path / "schema.csv").write_text(
            "name,position,kind,drop_reason\n"
            "LOAN_ID,0,id,\nORIG_DATE,1,date,\nACT_PERIOD,2,date,\nDLQ_STATUS,3,label,\nCSCORE_B,4,numeric,\n")
        (tmp_path / "loans.psv").write_text(
            "LOAN_ID|ORIG_DATE|ACT_PERIOD|DLQ_STATUS|CSCORE_B|SURPRISE\n"
            "A|012023|032023|0|700|x\n"
            "B|012023|032023|1|650|y\n")
        path = write_config(tmp_path, data={"source": "file", "path": "loans.psv", "schema": "schema.csv",
                                            "header": True})
        assert main(['audit', '--config', str(path)]) == 1
        assert "SURPRISE" in capsys.readouterr().err

    def test_run_then_importance(self, tmp_path, capsys):
        path = str(write_config(tmp_path))
        assert main(['run', '--config', path]) == 0
        assert "✓ Saved report" in capsys.readouterr().out
        assert main(['importance', '--config', path, '--model', 'logreg_l2', '--top', '3']) == 0
        out = capsys.readouterr().out
        assert "Permutation importance for logreg_l2" in out
        assert (tmp_path / "outputs" / "importance_logreg_l2_1to2.csv").exists()

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(['run', '--config', str(tmp_path / "nope.yaml")]) == 1
        assert "✗ run failed" in capsys.readouterr().err

    def test_stage_failure_exit_code(self, tmp_path, capsys):
        path = write_config(tmp_path, n_loans=200, partition={"c1": "112023", "c2": "122025"})
        assert main(['run', '--config', str(path)]) == 1
        assert "stage 'partition'" in capsys.readouterr().err


@pytest.mark.slow
class TestAcceptanceScale:
    """Signal recovery, ratio stability and importance recovery on larger generated data."""

    @pytest.fixture(scope="class")
    def large_run(self, tmp_path_factory):
        base = tmp_path_factory.mktemp("large")
        learners = [
            {"name": "logreg_l2", "kind": "LogRegL2"},
            {"name": "gbdt_raw", "kind": "GBDT", "pathway": "RawCategoricalPathway",
             "hyperparams": {"num_iterations": 150, "learning_rate": 0.05, "max_depth": 4,
                             "early_stopping_patience": 20}},
        ]
        path = write_config(base, n_loans=6000, rate=0.01, seed=0, learners=learners, ratios=[1, 2, 5, 10])
        return run(load_experiment_config(path))

    def test_boosting_beats_linear_model(self, large_run):
        test = large_run.table("test")
        for col in test.columns:
            assert test.loc["gbdt_raw", col] > 0.80
            assert test.loc["logreg_l2", col] > 0.70
            assert test.loc["gbdt_raw", col] >= test.loc["logreg_l2", col]

    def test_test_auroc_stable_across_ratios(self, large_run):
        test = large_run.table("test")
        spread = test.max(axis=1) - test.min(axis=1)
        assert (spread < 0.03).all(), spread.to_dict()

    def test_dominant_feature_ranks_first(self, tmp_path):
        learners = [{"name": "gbdt_raw", "kind": "GBDT", "pathway": "RawCategoricalPathway",
                     "hyperparams": {"num_iterations": 60, "max_depth": 4, "early_stopping_patience": 10}}]
        hits = 0
        for seed in range(10):
            directory = tmp_path / f"seed{seed}"
            directory.mkdir()
            path = write_config(directory, n_loans=3000, rate=0.02, seed=seed, learners=learners, ratios=[2],
                                report={"roc_ratio": 2, "importance_ratio": 2, "importance_repeats": 3})
            report = run(load_experiment_config(path))
            hits += report.importance.top(1) == ["LOAN_AGE"]
        assert hits >= 9


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
