import json

import numpy as np
import pytest
import yaml

from conftest import clean_config
from magloc.cli import main
from magloc.records import read_dataset, read_table


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def industrial_reports(tmp_path_factory):
    out = tmp_path_factory.mktemp("industrial")
    assert main(["pipeline", "--scenario", "industrial", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_reference_grid(self, tmp_path, capsys):
        code, out, _ = run(capsys, "simulate", "--scenario", "reference_office", "--out", tmp_path)
        assert code == 0
        assert "198 cycles" in out and "seed=" in out
        ds = read_dataset(tmp_path / "dataset.jsonl")
        assert len(ds) == 198 and ds.meta["seed"] == ds.seed

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "simulate", "--scenario", "reference_office", "--seed", 5, "--out", a)
        run(capsys, "simulate", "--scenario", "reference_office", "--seed", 5, "--out", b, "--workers", 2)
        assert (a / "dataset.jsonl").read_bytes() == (b / "dataset.jsonl").read_bytes()

    def test_missing_scenario(self, tmp_path, capsys):
        missing = tmp_path / "nowhere.yaml"
        code, _, err = run(capsys, "simulate", "--scenario", missing, "--out", tmp_path)
        assert code == 2 and str(missing) in err

    def test_schema_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("id: x\nbounds: {x: [0, 1], y: [0, 1]}\ntransmitters: []\npositions: {list: []}\n")
        code, _, err = run(capsys, "simulate", "--scenario", bad, "--out", tmp_path)
        assert code == 2 and "transmitters" in err


class TestConfig:
    def test_config_file_overrides_flags(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(yaml.safe_dump({"seed": 99, "scenario": "reference_office"}))
        code, out, _ = run(capsys, "simulate", "--scenario", "office", "--seed", 1,
                           "--config", cfg, "--out", tmp_path)
        assert code == 0 and "seed=99" in out and "198 cycles" in out

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("colour: blue\n")
        code, _, err = run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
        assert code == 2 and "colour" in err

    def test_bad_fraction(self, tmp_path, capsys):
        code, _, _ = run(capsys, "pipeline", "--scenario", "office", "--train-frac", 1.5, "--out", tmp_path)
        assert code == 2


class TestPipeline:
    def test_all_methods_reported(self, industrial_reports):
        meta, cols, rows = read_table(industrial_reports / "medians.csv")
        assert {"config_hash", "seed"} <= set(meta)
        assert [r[0] for r in rows] == ["model", "recalibrated", "fingerprint"]
        for name in ("estimates", "error_map", "intervals", "boxplot"):
            m, _, _ = read_table(industrial_reports / f"{name}.csv")
            assert m["config_hash"] == meta["config_hash"] and m["seed"] == meta["seed"]
        model = json.loads((industrial_reports / "model.json").read_text())
        assert model["meta"]["config_hash"] == meta["config_hash"]

    def test_distorted_ordering(self, industrial_reports):
        _, _, rows = read_table(industrial_reports / "medians.csv")
        med = {r[0]: float(r[2]) for r in rows}
        assert med["model"] >= med["recalibrated"] >= med["fingerprint"]

    def test_interval_report_has_mean_rows(self, industrial_reports):
        _, cols, rows = read_table(industrial_reports / "intervals.csv")
        assert cols == ["calibration", "axis", "low", "high", "count", "rmse"]
        means = [r for r in rows if r[2] == ""]
        assert len(means) == 2 * 4  # two calibrations, x/y/z/xyz

    def test_fingerprint_without_truth(self, tmp_path, capsys):
        run(capsys, "simulate", "--scenario", "office", "--out", tmp_path)
        path = tmp_path / "dataset.jsonl"
        lines = path.read_text().splitlines()
        stripped = [lines[0]]
        for line in lines[1:]:
            rec = json.loads(line)
            rec["true_position"] = None
            stripped.append(json.dumps(rec, sort_keys=True))
        path.write_text("\n".join(stripped) + "\n")
        code, _, err = run(capsys, "pipeline", "--scenario", "office", "--dataset", path,
                           "--method", "fingerprint", "--out", tmp_path / "r")
        assert code == 2 and "requires ground-truth" in err
        code, _, err = run(capsys, "fingerprint", "--dataset", path, "--out", tmp_path / "r")
        assert code == 2 and "requires ground-truth" in err


@pytest.fixture(scope="module")
def clean_medians(tmp_path_factory):
    root = tmp_path_factory.mktemp("clean")
    sc = root / "clean_office.yaml"
    sc.write_text(yaml.safe_dump(clean_config("office")))
    assert main(["pipeline", "--scenario", str(sc), "--out", str(root / "out")]) == 0
    _, _, rows = read_table(root / "out" / "medians.csv")
    return {r[0]: float(r[2]) for r in rows}


class TestNoiselessPipeline:
    @pytest.mark.parametrize("method", ["model", "recalibrated"])
    def test_below_one_centimetre(self, clean_medians, method):
        assert clean_medians[method] < 0.01

    @pytest.mark.xfail(strict=True, reason="a 90-sample regression map on 21 features cannot "
                                           "interpolate a smooth 1/r^3 field to 1 cm")
    def test_fingerprint_below_one_centimetre(self, clean_medians):
        assert clean_medians["fingerprint"] < 0.01


class TestStepwise:
    def test_calibrate_localize_evaluate(self, tmp_path, capsys):
        assert run(capsys, "simulate", "--scenario", "office", "--out", tmp_path)[0] == 0
        ds = tmp_path / "dataset.jsonl"
        assert run(capsys, "calibrate", "--scenario", "office", "--out", tmp_path / "f")[0] == 0
        code, out, _ = run(capsys, "localize", "--scenario", "office", "--dataset", ds,
                           "--calibration", tmp_path / "f" / "calibration.json", "--out", tmp_path / "l")
        assert code == 0 and "median error" in out
        assert run(capsys, "fingerprint", "--scenario", "office", "--dataset", ds, "--out", tmp_path / "m")[0] == 0
        code, _, _ = run(capsys, "localize", "--dataset", ds, "--method", "fingerprint",
                         "--model", tmp_path / "m" / "model.json", "--out", tmp_path / "p")
        assert code == 0
        code, out, _ = run(capsys, "evaluate", "--estimates", tmp_path / "l" / "estimates.csv",
                           "--out", tmp_path / "e")
        assert code == 0 and "model" in out
        _, _, rows = read_table(tmp_path / "e" / "error_map.csv")
        assert len(rows) == 300 and np.all(np.array([float(r[3]) for r in rows]) >= 0)

    def test_localize_without_calibration_source(self, tmp_path, capsys):
        run(capsys, "simulate", "--scenario", "office", "--out", tmp_path)
        code, _, err = run(capsys, "localize", "--dataset", tmp_path / "dataset.jsonl", "--out", tmp_path)
        assert code == 2 and "--scenario" in err
