import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

import dds
from dds.cli import dump_config, load_config, main, sim_config_from_dict, sim_config_to_dict
from dds.simulator import SimConfig

FIXTURE = Path(dds.__file__).parent / "data" / "chicago_fixture.csv"


def tree_digest(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "ds"
    assert run("simulate", "--days", 40, "--width", 8, "--seed", 3, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def sweep(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train") / "runs"
    assert run("train", sim_dir, "--samples", "1,8,32", "--epochs", 2, "--lr", 1e-3, "--out", out) == 0
    return out


class TestConfigFormat:
    def test_round_trip(self):
        values = {"a": 1, "b": 0.1, "c": "x y", "d": [1, 8, 32], "e": None, "f": True}
        assert load_config(dump_config(values)) == values

    def test_sim_config_round_trip(self):
        cfg = SimConfig(days=12, noise_std_eta=0.05, seed=9)
        assert sim_config_from_dict(load_config(dump_config(sim_config_to_dict(cfg)))) == cfg

    def test_comments_and_blank_lines(self):
        assert load_config("# note\n\nseed = 4\n") == {"seed": 4}


class TestSimulate:
    def test_outputs(self, sim_dir):
        meta = json.loads((sim_dir / "meta.json").read_text())
        assert (meta["n_days"], meta["width"]) == (40, 8)
        with open(sim_dir / "days.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["label"] == "1" for r in rows if r["slot"] == "1")
        truth = json.loads((sim_dir / "truth.json").read_text())
        assert truth["generator"]["lambda0"] == 70.0 and len(truth["lambda"]) == 40

    def test_byte_identical_rerun(self, tmp_path):
        for name in ("a", "b"):
            assert run("simulate", "--days", 15, "--width", 5, "--seed", 2, "--out", tmp_path / name) == 0
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_config_file_reproduces(self, sim_dir, tmp_path):
        assert run("simulate", "--config", sim_dir / "config.txt", "--out", tmp_path / "again") == 0
        assert (tmp_path / "again" / "days.csv").read_bytes() == (sim_dir / "days.csv").read_bytes()

    def test_zero_target_generator(self, tmp_path):
        cfg = tmp_path / "zero.txt"
        cfg.write_text("generator.lambda0 = 0.0\ngenerator.a1 = 0.0\ngenerator.a2 = 0.0\n"
                       "noise_std_eps = 0.0\ndays = 10\nwidth = 4\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "z") == 0
        with open(tmp_path / "z" / "days.csv") as fh:
            assert all(r["label"] == ("1" if r["slot"] == "1" else "0") for r in csv.DictReader(fh))

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("dayz = 3\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "x") != 0
        assert json.loads(capsys.readouterr().err)["error"] == "bad_config"


class TestIngest:
    def test_fixture_one_driver(self, tmp_path):
        assert run("ingest", FIXTURE, "--drivers", 1, "--out", tmp_path / "ing") == 0
        (ds,) = sorted((tmp_path / "ing").glob("*/meta.json"))
        meta = json.loads(ds.read_text())
        assert (meta["n_days"], meta["width"]) == (3, 3)
        report = json.loads((tmp_path / "ing" / "ingest_report.json").read_text())
        assert report["rows_read"] == 12 and report["dropped"] == 2

    def test_missing_column(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("Taxi ID,Trip Start Timestamp,Trip Total\nx,01/01/2023 08:00:00 AM,3\n")
        assert run("ingest", bad, "--out", tmp_path / "o") != 0
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "missing_column" and "Trip End Timestamp" in err["message"]

    def test_too_many_drivers(self, tmp_path, capsys):
        assert run("ingest", FIXTURE, "--drivers", 5, "--out", tmp_path / "o") != 0
        assert json.loads(capsys.readouterr().err)["error"] == "too_few_drivers"

    def test_input_untouched(self, tmp_path):
        before = hashlib.sha256(FIXTURE.read_bytes()).hexdigest()
        run("ingest", FIXTURE, "--drivers", 2, "--out", tmp_path / "o")
        assert hashlib.sha256(FIXTURE.read_bytes()).hexdigest() == before


class TestTrainAndReport:
    def test_three_report_sets(self, sweep):
        for rid in ("dds_R1", "dds_R8", "dds_R32"):
            rep = json.loads((sweep / rid / "report.json").read_text())
            assert rep["config"]["samples"] == int(rid.split("R")[1])
            assert len(rep["lambda_error"]) == 2
            assert (sweep / rid / "epochs.csv").read_text().startswith("epoch,split,loss")

    def test_ds_model_flag(self, sim_dir, tmp_path):
        assert run("train", sim_dir, "--model", "ds", "--samples", 1, "--epochs", 1, "--out", tmp_path / "o") == 0
        rep = json.loads((tmp_path / "o" / "ds_R1" / "report.json").read_text())
        assert [rep["final_params"][k] for k in ("a1", "a2", "b1", "b2")] == [1.0, 0.0, 1.0, 0.0]

    def test_rerun_identical(self, sim_dir, tmp_path):
        for name in ("a", "b"):
            assert run("train", sim_dir, "--samples", 2, "--epochs", 2, "--baseline", "ds",
                       "--train-fraction", 0.5, "--out", tmp_path / name) == 0
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_tidy_report(self, sweep, tmp_path):
        out = tmp_path / "tidy.csv"
        assert run("report", sweep, "--out", out) == 0
        with open(out) as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
        assert reader.fieldnames == ["run_id", "epoch", "metric", "value"]
        assert {r["run_id"] for r in rows} == {"dds_R1", "dds_R8", "dds_R32"}
        assert {"train_decision_acc", "lambda_error", "param_a1"} <= {r["metric"] for r in rows}

    def test_report_empty_input(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert run("report", tmp_path / "empty", "--out", tmp_path / "r.csv") != 0
        assert json.loads(capsys.readouterr().err)["error"] == "empty_input"

    def test_report_schema_mismatch(self, tmp_path, capsys):
        (tmp_path / "x").mkdir()
        (tmp_path / "x" / "report.json").write_text('{"train": {}}')
        assert run("report", tmp_path, "--out", tmp_path / "r.csv") != 0
        assert json.loads(capsys.readouterr().err)["error"] == "schema_mismatch"

    def test_missing_dataset(self, tmp_path, capsys):
        assert run("train", tmp_path, "--out", tmp_path / "o") != 0
        assert json.loads(capsys.readouterr().err)["error"] == "missing_dataset"


def test_console_entry_point_exit_codes(tmp_path):
    cmd = [sys.executable, "-m", "dds.cli"]
    ok = subprocess.run(cmd + ["simulate", "--days", "5", "--width", "3", "--out", str(tmp_path / "s")],
                        capture_output=True, text=True)
    assert ok.returncode == 0
    bad = subprocess.run(cmd + ["ingest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert bad.returncode != 0 and json.loads(bad.stderr.strip().splitlines()[-1])["error"]
    usage = subprocess.run(cmd + ["train"], capture_output=True, text=True)
    assert usage.returncode == 2
