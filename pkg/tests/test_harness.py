import numpy as np
import pytest

from natgrad import cli
from natgrad.datasets import Dataset, load_csv, make_synthetic, save_csv, split_train_val
from natgrad.errors import CsvParseError, SchemaMismatchError
from natgrad.model import forward
from natgrad.train import (
    MetricsRecord,
    RunConfig,
    build_run_config,
    evaluate,
    format_record,
    load_run_config,
    parse_record,
    pearson,
    read_metrics,
    save_run_config,
    train,
    write_metrics,
)


class TestCsv:
    def test_small_regression_file_exact(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x0,x1,y0\n1.5,-2.0,0.25\n0.0,3.0,-1.0\n2.0,2.0,0.125\n")
        ds = load_csv(path)
        assert ds.task == "regression"
        assert np.array_equal(ds.features, [[1.5, -2.0], [0.0, 3.0], [2.0, 2.0]])
        assert np.array_equal(ds.targets, [[0.25], [-1.0], [0.125]])

    def test_classification_file(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("x0,x1,y\n0.1,0.2,0\n0.3,0.4,1\n")
        ds = load_csv(path)
        assert ds.task == "classification"
        assert list(ds.targets) == [0, 1]
        assert ds.n_classes == 2

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("x0,x1,label\n1,2,3\n")
        with pytest.raises(SchemaMismatchError):
            load_csv(path)
        with pytest.raises(SchemaMismatchError):
            load_csv(path, schema="classification")

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("x0,y0\n1.0,2.0\n1.0\n")
        with pytest.raises(CsvParseError, match=":3:"):
            load_csv(path)
        path.write_text("x0,y0\n1.0,abc\n")
        with pytest.raises(CsvParseError, match=":2:"):
            load_csv(path)

    def test_non_integral_class_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("x0,y\n1.0,0.5\n")
        with pytest.raises(CsvParseError):
            load_csv(path)

    def test_round_trip_full_precision(self, tmp_path):
        rng = np.random.default_rng(100)
        ds = Dataset(rng.standard_normal((9, 3)), rng.standard_normal((9, 2)),
                     "regression", name="rt")
        path = tmp_path / "rt.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.targets, ds.targets)

    def test_round_trip_classification(self, tmp_path):
        ds = make_synthetic("two-moons", 40, 3)
        path = tmp_path / "m.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.targets, ds.targets)


class TestSynthetic:
    def test_same_seed_identical(self):
        for kind in ("two-moons", "gaussian-regression", "teacher-net"):
            a = make_synthetic(kind, 50, 9)
            b = make_synthetic(kind, 50, 9)
            assert np.array_equal(a.features, b.features)
            assert np.array_equal(a.targets, b.targets)

    def test_teacher_targets_reproducible(self):
        ds = make_synthetic("teacher-net", 30, 4)
        pred, _ = forward(ds.teacher, ds.features)
        assert np.array_equal(pred.outputs, ds.targets)

    def test_two_moons_sgd_separability(self):
        cfg = RunConfig(optimizer="sgd", dataset="two-moons", learning_rate=0.5,
                        epochs=200, batch_size=100, seed=0, hidden=32, samples=400)
        result = train(cfg)
        ds = make_synthetic("two-moons", 400, 0)
        train_set, _ = split_train_val(ds, np.random.default_rng(0))
        _, acc = evaluate(result.net, train_set)
        assert acc >= 0.95

    def test_split_fraction(self):
        ds = make_synthetic("two-moons", 100, 0)
        tr, va = split_train_val(ds, np.random.default_rng(0))
        assert tr.n_samples == 75 and va.n_samples == 25

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_synthetic("spiral", 10, 0)


class TestRunConfig:
    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig(optimizer="reng", dataset="two-moons", learning_rate=0.25,
                        rho=3e-3, epochs=7, seed=42)
        path = tmp_path / "run.cfg"
        save_run_config(cfg, path)
        assert load_run_config(path) == cfg

    def test_cli_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        save_run_config(RunConfig(seed=1, rho=1e-4), path)
        cfg = load_run_config(path, {"seed": "9", "rho": None})
        assert cfg.seed == 9 and cfg.rho == 1e-4

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            build_run_config({"learning_rte": "0.1"})

    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(optimizer="magic")
        with pytest.raises(ValueError):
            RunConfig(batch_size=0)


class TestMetrics:
    def test_record_round_trip(self):
        recs = [
            MetricsRecord("run-a", 0, 0, "train", 0.123456789012345678, 1.5,
                          1e-4, wall_ms=3.25),
            MetricsRecord("run-a", 1, 0, "val", 0.5, 0.0, 1e-4, metric=0.875,
                          wall_ms=0.0),
        ]
        parsed = [parse_record(format_record(r)) for r in recs]
        assert parsed == recs
        assert parsed[0].metric is None

    def test_file_round_trip_append_only(self, tmp_path):
        path = tmp_path / "m.txt"
        a = [MetricsRecord("r", 0, 0, "train", 1.0, 2.0, 3.0)]
        b = [MetricsRecord("r", 1, 0, "train", 0.5, 1.0, 3.0)]
        write_metrics(a, path)
        write_metrics(b, path)
        assert read_metrics(path) == a + b

    def test_iterations_monotone(self):
        cfg = RunConfig(optimizer="sgd", epochs=3, batch_size=100, samples=100,
                        seed=0)
        res = train(cfg)
        iters = [r.iteration for r in res.records]
        assert iters == sorted(iters)

    def test_pearson_bounds(self):
        rng = np.random.default_rng(101)
        a = rng.standard_normal(50)
        assert pearson(a, a) == 1.0
        assert pearson(a, -a) == -1.0
        assert pearson(a, np.zeros(50)) == 0.0


class TestTrain:
    def test_zero_epochs(self):
        cfg = RunConfig(optimizer="sgd", epochs=0, seed=0, samples=50)
        res = train(cfg)
        assert res.records == []
        assert not res.diverged

    def test_determinism_across_runs(self):
        cfg = RunConfig(optimizer="ring", dataset="two-moons", learning_rate=0.5,
                        rho=3e-2, epochs=2, batch_size=50, seed=7, samples=100)
        a = train(cfg)
        b = train(cfg)
        assert a.records == b.records  # equality ignores wall_ms
        assert np.array_equal(a.net.flat_weights(), b.net.flat_weights())

    def test_validation_metric_bounds(self):
        cfg = RunConfig(optimizer="sgd", dataset="two-moons", learning_rate=0.5,
                        epochs=2, batch_size=50, seed=3, samples=120)
        res = train(cfg)
        vals = [r.metric for r in res.records if r.phase == "val"]
        assert len(vals) == 2
        assert all(0.0 <= v <= 1.0 for v in vals)
        cfg = RunConfig(optimizer="sgd", dataset="gaussian-regression",
                        learning_rate=0.05, epochs=2, batch_size=50, seed=3,
                        samples=120)
        res = train(cfg)
        vals = [r.metric for r in res.records if r.phase == "val"]
        assert all(-1.0 <= v <= 1.0 for v in vals)

    def test_divergence_flushes_partial_metrics(self):
        cfg = RunConfig(optimizer="sgd", dataset="gaussian-regression",
                        learning_rate=1e150, epochs=5, batch_size=50, seed=0,
                        samples=100)
        res = train(cfg)
        assert res.diverged
        assert len(res.records) >= 1

    def test_rkalman_end_to_end(self):
        cfg = RunConfig(optimizer="rkalman", dataset="gaussian-regression",
                        rho=1e-4, beta=0.97, sigma0=0.1, epochs=1, seed=0,
                        samples=80)
        res = train(cfg)
        assert not res.diverged
        train_records = [r for r in res.records if r.phase == "train"]
        assert len(train_records) == 60  # batch size forced to 1
        first, last = train_records[0].loss, np.mean(
            [r.loss for r in train_records[-10:]])
        assert last < first


class TestCli:
    def test_missing_config_file(self, capsys):
        assert cli.main(["train", "--config", "missing.cfg"]) == 1
        assert "file not found" in capsys.readouterr().err

    def test_missing_dataset_file(self, capsys):
        assert cli.main(["train", "--dataset", "nope.csv", "--epochs", "1"]) == 1
        assert "file not found" in capsys.readouterr().err

    def test_bad_flag(self, capsys):
        assert cli.main(["train", "--learning_rate", "fast"]) == 1

    def test_unknown_subcommand(self):
        assert cli.main(["transmogrify"]) == 1

    def test_train_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli.main([
            "train", "--optimizer", "sgd", "--dataset", "two-moons",
            "--epochs", "1", "--samples", "60", "--batch_size", "30",
            "--seed", "1", "--out", str(out),
        ])
        assert code == 0
        assert (out / "config.txt").exists()
        assert (out / "metrics.txt").exists()
        assert (out / "model.txt").exists()
        cfg = load_run_config(out / "config.txt")
        assert cfg.optimizer == "sgd" and cfg.samples == 60
        assert len(read_metrics(out / "metrics.txt")) >= 2

    def test_train_divergence_exit_code(self, tmp_path):
        code = cli.main([
            "train", "--optimizer", "sgd", "--dataset", "gaussian-regression",
            "--learning_rate", "1e150", "--epochs", "3", "--samples", "50",
        ])
        assert code == 3

    def test_bench_small_grid(self, tmp_path, capsys):
        out = tmp_path / "bench"
        code = cli.main([
            "bench", "--dataset", "two-moons", "--seeds", "2", "--epochs", "1",
            "--samples", "80", "--optimizers", "sgd,ring", "--out", str(out),
        ])
        assert code == 0
        text = (out / "summary.txt").read_text()
        assert "sgd" in text and "ring" in text
        shown = capsys.readouterr().out
        assert "+/-" in shown
        # every cell's fully-resolved config lands next to the metrics
        cell_cfg = load_run_config(out / "configs" / "two-moons-ring-s1.cfg")
        assert cell_cfg.optimizer == "ring" and cell_cfg.seed == 1

    def test_verify_failure_exit_code(self, monkeypatch, capsys):
        from natgrad.verify import CheckResult

        monkeypatch.setattr(
            cli.verify_mod, "run_all",
            lambda: [CheckResult("stub", False, "forced failure", 0.0)],
        )
        assert cli.main(["verify"]) == 2
        assert "FAIL" in capsys.readouterr().out

    def test_theorem1_writes_stream(self, tmp_path):
        out = tmp_path / "th"
        code = cli.main([
            "theorem1", "--width", "32", "--samples", "8", "--iters", "5",
            "--rho", "1e-4", "--out", str(out),
        ])
        assert code == 0
        body = (out / "theorem1.txt").read_text()
        assert "residual:" in body and "kappa:" in body

    def test_config_file_plus_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        save_run_config(RunConfig(optimizer="sgd", epochs=1, samples=60,
                                  batch_size=30, seed=2), path)
        assert cli.main(["train", "--config", str(path), "--epochs", "0"]) == 0
