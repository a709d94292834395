import csv
import dataclasses
import json

import numpy as np
import pytest

from cffnet import cli, harness
from cffnet.errors import ConfigError
from cffnet.harness import (
    ExperimentConfig,
    build_config,
    compare_variants,
    load_config,
    load_network,
    parse_config_text,
    run_experiment,
    summarize,
)

SMALL = {"widths": "36,8,6", "epochs_per_layer": "3", "batch_size": "32", "eval_every": "2", "train_split": "100"}


def small_cfg(idx_dir, tmp_path, **kw):
    values = dict(SMALL, data_dir=str(idx_dir), out_dir=str(tmp_path / "out"))
    values.update({k: str(v) for k, v in kw.items()})
    return build_config(values)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestConfig:
    def test_defaults(self):
        cfg = build_config()
        assert cfg.widths == (784, 500, 500) and cfg.lr == 0.03 and cfg.variant == "baseline"
        assert cfg.run_id == "baseline-seed1"

    def test_parse_text(self):
        values = parse_config_text("# comment\nvariant = acff\nwidths=784/200/200  # inline\n\n")
        assert values == {"variant": " acff", "widths": "784/200/200"}
        cfg = build_config(values)
        assert cfg.variant == "acff" and cfg.widths == (784, 200, 200)

    def test_override_precedence(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("seed=4\nlr=0.1\n")
        cfg = load_config(path, {"seed": "9"})
        assert cfg.seed == 9 and cfg.lr == 0.1

    def test_roundtrip(self):
        cfg = build_config({"variant": "fcff", "gamma_init": "0.5", "normalize_first": "false"})
        again = build_config(parse_config_text(cfg.to_text()))
        assert again == cfg

    @pytest.mark.parametrize("key,value", [
        ("variant", "bp"), ("alpha_mode", "sum"), ("goodness", "max"), ("lr", "0"),
        ("lr", "abc"), ("batch_size", "-1"), ("widths", "784"), ("theta", "nan"),
        ("normalize_first", "maybe"), ("nonsense", "1"),
    ])
    def test_invalid(self, key, value):
        with pytest.raises(ConfigError, match=key):
            build_config({key: value})

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("seed=1\nbroken\n")

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.txt")

    def test_missing_data_paths(self):
        with pytest.raises(ConfigError, match="train_images"):
            harness.load_data(ExperimentConfig())

    def test_width_mismatch(self, idx_dir, tmp_path):
        cfg = small_cfg(idx_dir, tmp_path, widths="35,4")
        with pytest.raises(ConfigError, match="widths"):
            run_experiment(cfg)


class TestRunExperiment:
    def test_files_and_rows(self, idx_dir, tmp_path):
        cfg = small_cfg(idx_dir, tmp_path, variant="acff")
        record = run_experiment(cfg)
        out = tmp_path / "out" / "acff-seed1"
        for name in harness.METRICS_FILES + ("timing.json",):
            assert (out / name).exists()
        rows = read_csv(out / "metrics.csv")
        assert len(rows) == 2 * 3
        assert [int(r["epoch"]) for r in rows] == list(range(6))
        assert [bool(r["test_acc"]) for r in rows] == [False, True, False] * 2
        gam = read_csv(out / "gamma.csv")
        assert len(gam) == 6
        summary = read_csv(out / "summary.csv")[0]
        assert float(summary["test_acc"]) == record.test_report.accuracy
        ev = json.loads((out / "eval.json").read_text())
        assert sum(map(sum, ev["test"]["confusion"])) == 40

    def test_byte_identical_reruns(self, idx_dir, tmp_path):
        snapshots = []
        for _ in range(2):
            out = run_experiment(small_cfg(idx_dir, tmp_path, variant="acff")).out_path
            snapshots.append({name: (out / name).read_bytes() for name in harness.METRICS_FILES})
        assert snapshots[0] == snapshots[1]

    def test_seed_changes_results(self, idx_dir, tmp_path):
        a = run_experiment(small_cfg(idx_dir, tmp_path, seed=1), write=False)
        b = run_experiment(small_cfg(idx_dir, tmp_path, seed=2), write=False)
        assert a.net.layers[0].W.tobytes() != b.net.layers[0].W.tobytes()

    def test_save_load_roundtrip(self, idx_dir, tmp_path):
        record = run_experiment(small_cfg(idx_dir, tmp_path, variant="fcff", alpha_mode="row-normalized"))
        net = load_network(record.out_path)
        for la, lb in zip(net.layers, record.net.layers):
            assert np.array_equal(la.W, lb.W) and np.array_equal(la.b, lb.b)
        assert np.array_equal(net.collab.alpha, record.net.collab.alpha)
        assert net.goodness_cfg == record.net.goodness_cfg

    def test_load_missing_model(self, tmp_path):
        with pytest.raises(ConfigError):
            load_network(tmp_path)


class TestCompare:
    def test_structure(self, idx_dir, tmp_path):
        cfg = small_cfg(idx_dir, tmp_path, epochs_per_layer=2, eval_every=0)
        comp = compare_variants(cfg, [1, 2])
        assert [row["variant"] for row in comp.table] == ["baseline", "fcff", "acff"]
        assert set(comp.stats) == set(harness.STAT_PAIRS)
        assert len(comp.runs) == 6
        out = tmp_path / "out"
        assert len(read_csv(out / "seeds.csv")) == 6
        assert len(read_csv(out / "stats.csv")) == 3
        base = read_csv(out / "comparison.csv")[0]
        assert float(base["improvement_abs"]) == 0.0

    def test_matched_initialization(self, idx_dir, tmp_path):
        cfg = small_cfg(idx_dir, tmp_path, epochs_per_layer=0, eval_every=0)
        comp = compare_variants(cfg, [3], write=False)
        ws = [r.net.layers[0].W.tobytes() for r in comp.runs]
        assert ws[0] == ws[1] == ws[2]

    def test_self_compare_is_degenerate(self):
        acc = {v: {"train": [0.5, 0.6, 0.7], "test": [0.8, 0.9, 0.85]} for v in ("baseline", "fcff", "acff")}
        table, stats = summarize(acc, [1, 2, 3])
        assert all(s.degenerate and s.mean_difference == 0.0 for s in stats.values())
        assert all(row["improvement_abs"] == 0.0 for row in table)

    def test_summary_values(self):
        acc = {
            "baseline": {"train": [0, 0], "test": [0.80, 0.82]},
            "acff": {"train": [0, 0], "test": [0.84, 0.85]},
        }
        table, stats = summarize(acc, [1, 2])
        acff = table[1]
        assert acff["improvement_abs"] == pytest.approx(0.035, abs=1e-12)
        assert acff["improvement_rel"] == pytest.approx(0.035 / 0.81, abs=1e-12)
        assert set(stats) == {("acff", "baseline")}

    def test_single_seed_stats_flagged(self):
        acc = {v: {"train": [0.1], "test": [0.5]} for v in ("baseline", "acff")}
        _, stats = summarize(acc, [1])
        assert stats[("acff", "baseline")].degenerate


class TestCli:
    def args(self, idx_dir, tmp_path, *extra):
        return ["train", "--data-dir", str(idx_dir), "--widths", "36,6,5", "--epochs-per-layer", "2",
                "--train-split", "60", "--batch-size", "20", "--out-dir", str(tmp_path / "cli"), *extra]

    def test_train_and_eval(self, idx_dir, tmp_path, capsys):
        assert cli.main(self.args(idx_dir, tmp_path, "--variant", "fcff")) == 0
        run_dir = tmp_path / "cli" / "fcff-seed1"
        assert (run_dir / "metrics.csv").exists()
        assert cli.main(["eval", "--model", str(run_dir), "--data-dir", str(idx_dir)]) == 0
        assert "test_acc=" in capsys.readouterr().out

    def test_usage_errors_exit_1(self, capsys):
        assert cli.main(["train", "--variant", "bp"]) == 1
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            cli.main(["check", "--cases", "many"])
        assert exc.value.code == 1

    def test_data_error_exit_2(self, tmp_path):
        (tmp_path / "train-images-idx3-ubyte").write_bytes(b"\x00\x00\x08\x04garbage")
        for name in ("train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            (tmp_path / name).write_bytes(b"")
        assert cli.main(["train", "--data-dir", str(tmp_path), "--out-dir", str(tmp_path / "o")]) == 2

    def test_missing_data_exit_2(self, tmp_path):
        assert cli.main(["train", "--data-dir", str(tmp_path / "nowhere")]) == 2

    def test_numeric_failure_exit_3(self, idx_dir, tmp_path):
        assert cli.main(self.args(idx_dir, tmp_path, "--lr", "1e308", "--goodness", "sum",
                                  "--no-normalize-first", "--variant", "acff", "--gamma-lr", "1e308")) == 3

    def test_check_pass_and_fail(self, capsys):
        assert cli.main(["check", "--cases", "2"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert cli.main(["check", "--cases", "2", "--tol", "1e-12"]) == 4
        assert "FAIL" in capsys.readouterr().out

    def test_check_bad_step(self):
        assert cli.main(["check", "--cases", "1", "--h", "0"]) == 1

    def test_compare_cli(self, idx_dir, tmp_path, capsys):
        argv = self.args(idx_dir, tmp_path)
        argv[0] = "compare"
        assert cli.main(argv + ["--seeds", "1,2"]) == 0
        out = capsys.readouterr().out
        assert "acff vs baseline" in out
        assert (tmp_path / "cli" / "stats.csv").exists()
        assert cli.main(argv + ["--seeds", "x"]) == 1

    def test_config_file(self, idx_dir, tmp_path):
        conf = tmp_path / "run.txt"
        conf.write_text(f"data_dir={idx_dir}\nwidths=36,4\nepochs_per_layer=1\ntrain_split=50\nseed=7\n")
        assert cli.main(["train", "--config", str(conf), "--out-dir", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "baseline-seed7" / "config.txt").read_text().count("seed=7") == 1
