import csv
import json
import os

import pytest

from bicl.cli import CSV_HEADER, load_experiment, run_command, write_metrics_csv
from bicl.errors import ConfigError
from bicl.training import MetricsRecord


def record(episode=49, **overrides):
    base = dict(episode=episode, c_k=0.123456789, train_return=-31.25,
                rl_reward=-2.0, t_reward=-2.5, r_gap=0.5,
                il_loss=0.0123456789, value_loss=1234567.89, wall_ms=0.0)
    base.update(overrides)
    return MetricsRecord(**base)


class TestWriteMetricsCsv:
    def test_empty_records_header_only(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([], path)
        assert path.read_text(encoding="utf-8") == CSV_HEADER + "\n"

    def test_one_record_two_lines(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv([record()], path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert lines[0] == CSV_HEADER

    def test_roundtrip_six_significant_digits(self, tmp_path):
        path = tmp_path / "m.csv"
        records = [record(), record(episode=99, c_k=9.87654321e-7,
                                    t_reward=-123456.789)]
        write_metrics_csv(records, path)
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        for row, rec in zip(rows, records):
            assert int(row["episode"]) == rec.episode
            for name in ("c_k", "train_return", "rl_reward", "t_reward",
                         "r_gap", "il_loss", "value_loss", "wall_ms"):
                got = float(row[name])
                want = getattr(rec, name)
                assert got == pytest.approx(want, rel=1e-5)

    def test_unwritable_path_reports_location(self, tmp_path):
        bad = tmp_path / "missing" / "m.csv"
        with pytest.raises(OSError, match="missing"):
            write_metrics_csv([], bad)


def experiment_json(tmp_path, **overrides):
    data = {
        "label": "smoke",
        "output_dir": str(tmp_path / "runs"),
        "algorithm": "bicl",
        "env": {
            "type": "route",
            "n": 2,
            "route_length": 40.0,
            "v_max": 2.0,
            "horizon": 6,
            "adversaries": [
                {"center": 10.0, "radius": 30.0, "intensity": 3.0}],
            "guard_beta": 0.9,
            "time_penalty": 0.1,
            "arrival_bonus": 0.0,
            "start_positions": [8.0, 12.0],
            "start_jitter": 2.0,
        },
        "train": {
            "backend": "route-actor-critic",
            "episodes": 8,
            "steps_per_episode": 6,
            "gamma": 0.95,
            "batch_size": 8,
            "buffer_capacity": 256,
            "warmup": 12,
            "eval_every": 4,
            "eval_rollouts": 2,
            "seed": 1,
            "hidden": [8],
            "topology_mode": "window",
            "topology_k": 2,
            "schedule": {"c": 2.0, "beta": 1e-2, "h": 4.0},
        },
    }
    data.update(overrides)
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


class TestLoadExperiment:
    def test_loads_and_cross_checks(self, tmp_path):
        cfg = load_experiment(experiment_json(tmp_path))
        assert cfg.label == "smoke"
        assert cfg.env_kind == "route"
        assert cfg.train.episodes == 8

    def test_unknown_top_key(self, tmp_path):
        path = experiment_json(tmp_path, notes="hi")
        with pytest.raises(ConfigError):
            load_experiment(path)

    def test_backend_env_mismatch(self, tmp_path):
        path = experiment_json(tmp_path)
        data = json.loads(path.read_text())
        data["train"]["backend"] = "graph-vdn"
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigError):
            load_experiment(path)

    def test_env_from_file_indirection(self, tmp_path):
        path = experiment_json(tmp_path)
        data = json.loads(path.read_text())
        env_body = {k: v for k, v in data["env"].items() if k != "type"}
        (tmp_path / "env_body.json").write_text(json.dumps(env_body))
        data["env"] = {"type": "route", "file": "env_body.json"}
        path.write_text(json.dumps(data))
        cfg = load_experiment(path)
        assert cfg.env_config.n == 2

    def test_missing_sections(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"env": {"type": "route"}}))
        with pytest.raises(ConfigError):
            load_experiment(path)


class TestRunCommand:
    def test_help_exits_zero(self, capsys):
        assert run_command(["--help"]) == 0
        assert "train" in capsys.readouterr().out

    def test_unknown_subcommand_exits_two(self, capsys):
        assert run_command(["frobnicate"]) == 2

    def test_missing_config_reports_error(self, tmp_path, capsys):
        code = run_command(["train", "--config",
                            str(tmp_path / "nope.json")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_train_writes_artifacts(self, tmp_path, capsys):
        path = experiment_json(tmp_path)
        assert run_command(["train", "--config", str(path)]) == 0
        out = tmp_path / "runs" / "smoke"
        metrics = (out / "metrics.csv").read_text(encoding="utf-8")
        assert metrics.startswith(CSV_HEADER + "\n")
        assert len(metrics.splitlines()) == 3
        resolved = json.loads((out / "config.json").read_text())
        assert resolved["train"]["episodes"] == 8
        assert (out / "snapshot" / "manifest.json").exists()
        assert (out / "snapshot" / "env.json").exists()
        assert "wrote" in capsys.readouterr().out

    def test_train_byte_identical_reruns(self, tmp_path):
        path = experiment_json(tmp_path)
        assert run_command(["train", "--config", str(path)]) == 0
        metrics = tmp_path / "runs" / "smoke" / "metrics.csv"
        first = metrics.read_bytes()
        assert run_command(["train", "--config", str(path)]) == 0
        assert metrics.read_bytes() == first

    def test_seed_override_changes_metrics(self, tmp_path):
        path = experiment_json(tmp_path)
        metrics = tmp_path / "runs" / "smoke" / "metrics.csv"
        assert run_command(["train", "--config", str(path)]) == 0
        first = metrics.read_bytes()
        assert run_command(["train", "--config", str(path),
                            "--seed", "9"]) == 0
        assert metrics.read_bytes() != first

    def test_eval_on_snapshot(self, tmp_path, capsys):
        path = experiment_json(tmp_path)
        assert run_command(["train", "--config", str(path)]) == 0
        capsys.readouterr()
        snap = tmp_path / "runs" / "smoke" / "snapshot"
        assert run_command(["eval", "--snapshot", str(snap),
                            "--rollouts", "3"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "t_reward,rl_reward,r_gap"
        t, rl, gap = (float(v) for v in out[1].split(","))
        assert gap == pytest.approx(rl - t, abs=1e-4)

    def test_sweep_row_count(self, tmp_path, capsys):
        path = experiment_json(tmp_path)
        assert run_command(["sweep", "--config", str(path),
                            "--c-values", "0,2", "--seeds", "0,1"]) == 0
        summary = tmp_path / "runs" / "smoke" / "sweep_summary.csv"
        lines = summary.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "c,seed,t_reward,r_gap"
        assert len(lines) == 5
        assert (tmp_path / "runs" / "smoke" / "c2_s1" / "metrics.csv").exists()

    def test_sweep_parallel_workers(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BICL_THREADS", "2")
        path = experiment_json(tmp_path)
        assert run_command(["sweep", "--config", str(path),
                            "--c-values", "0,2", "--seeds", "0"]) == 0
        summary = tmp_path / "runs" / "smoke" / "sweep_summary.csv"
        assert len(summary.read_text(encoding="utf-8").splitlines()) == 3

    def test_sweep_bad_values_rejected(self, tmp_path, capsys):
        path = experiment_json(tmp_path)
        code = run_command(["sweep", "--config", str(path),
                            "--c-values", "0,zebra", "--seeds", "0"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_threads_env_rejected(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("BICL_THREADS", "many")
        path = experiment_json(tmp_path)
        code = run_command(["sweep", "--config", str(path),
                            "--c-values", "0", "--seeds", "0"])
        assert code == 1
        assert "BICL_THREADS" in capsys.readouterr().err

    def test_compare_reports_both_algorithms(self, tmp_path, capsys):
        path = experiment_json(tmp_path)
        assert run_command(["compare", "--config", str(path),
                            "--seeds", "0"]) == 0
        summary = tmp_path / "runs" / "smoke" / "compare_summary.csv"
        lines = summary.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "algorithm,seed,convergence_episode,final_t_reward"
        assert len(lines) == 3
        assert lines[1].startswith("bicl,0,")
        assert lines[2].startswith("baseline,0,")

    def test_gen_graph_stdout_and_file(self, tmp_path, capsys):
        assert run_command(["gen-graph", "--nodes", "5", "--robots", "2",
                            "--density", "sparse", "--seed", "3"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["num_nodes"] == 5
        out_path = tmp_path / "instance.json"
        assert run_command(["gen-graph", "--nodes", "5", "--robots", "2",
                            "--seed", "3", "--out", str(out_path)]) == 0
        file_data = json.loads(out_path.read_text(encoding="utf-8"))
        assert file_data == data

    def test_gen_graph_feeds_train(self, tmp_path):
        inst = tmp_path / "graph.json"
        assert run_command(["gen-graph", "--nodes", "5", "--robots", "2",
                            "--seed", "3", "--out", str(inst)]) == 0
        config = {
            "label": "gsmoke",
            "output_dir": str(tmp_path / "runs"),
            "env": {"type": "graph", "file": "graph.json"},
            "train": {
                "backend": "graph-vdn", "episodes": 6,
                "steps_per_episode": 6, "batch_size": 8,
                "buffer_capacity": 128, "warmup": 12, "eval_every": 3,
                "eval_rollouts": 2, "seed": 0, "hidden": [8],
                "schedule": {"c": 1.0, "beta": 1e-2, "h": 3.0},
            },
        }
        path = tmp_path / "gexp.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        assert run_command(["train", "--config", str(path)]) == 0
        assert (tmp_path / "runs" / "gsmoke" / "metrics.csv").exists()
