import json

import numpy as np
import pytest

from calibkit.cli import main, split_is_val

pytestmark = pytest.mark.filterwarnings("ignore::calibkit.errors.SeparationWarning")


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def records_file(tmp_path, capsys):
    path = tmp_path / "records.ndjson"
    code = main(["synth", "--mode", "miscalibrated", "--n", "800", "--seed", "5",
                 "--out", str(path)])
    capsys.readouterr()
    assert code == 0
    return path


class TestSynth:
    def test_writes_records_and_prints_config(self, tmp_path, capsys):
        out = tmp_path / "r.ndjson"
        code, stdout, _ = run(["synth", "--n", "50", "--seed", "1", "--out", str(out)], capsys)
        assert code == 0
        config = json.loads(stdout)
        assert config["latent_scale"] > 0
        assert len(out.read_text().splitlines()) == 50

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        run(["synth", "--n", "60", "--seed", "9", "--out", str(a)], capsys)
        run(["synth", "--n", "60", "--seed", "9", "--out", str(b)], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_flow_signal_mode(self, tmp_path, capsys):
        out = tmp_path / "r.ndjson"
        code, _, _ = run(["synth", "--mode", "flow-signal", "--n", "40",
                          "--signal-strength", "0.5", "--out", str(out)], capsys)
        assert code == 0


class TestExtract:
    def test_row_count_matches_records(self, records_file, tmp_path, capsys):
        out = tmp_path / "features.csv"
        code, stdout, _ = run(["extract", "--records", str(records_file),
                               "--out", str(out)], capsys)
        assert code == 0
        assert json.loads(stdout)["rows"] == 800
        assert len(out.read_text().splitlines()) == 801  # header + rows

    def test_malformed_line_exits_2_with_line_number(self, tmp_path, capsys):
        bad = tmp_path / "bad.ndjson"
        bad.write_text('{"query_id": "x"}\n{oops\n')
        code, _, err = run(["extract", "--records", str(bad),
                            "--out", str(tmp_path / "f.csv")], capsys)
        assert code == 2
        assert "line 1" in err  # first line already malformed (missing fields)

    def test_rerun_is_byte_identical(self, records_file, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(["extract", "--records", str(records_file), "--out", str(a)], capsys)
        run(["extract", "--records", str(records_file), "--out", str(b)], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_unsorted_candidates_counted(self, tmp_path, capsys):
        source = tmp_path / "src.ndjson"
        run(["synth", "--n", "4", "--seed", "1", "--out", str(source)], capsys)
        shuffled = tmp_path / "shuffled.ndjson"
        lines = []
        for line in source.read_text().splitlines():
            d = json.loads(line)
            d["candidates"] = d["candidates"][::-1]
            lines.append(json.dumps(d))
        shuffled.write_text("\n".join(lines) + "\n")
        code, stdout, _ = run(["extract", "--records", str(shuffled),
                               "--out", str(tmp_path / "f.csv")], capsys)
        assert code == 0
        assert json.loads(stdout)["resort_warnings"] == 4


class TestFit:
    @pytest.mark.parametrize("method", ["platt", "temperature", "isotonic"])
    def test_fit_classical_writes_model(self, records_file, tmp_path, capsys, method):
        out = tmp_path / "model.json"
        code, stdout, _ = run(["fit", "--method", method, "--records", str(records_file),
                               "--out", str(out)], capsys)
        assert code == 0
        summary = json.loads(stdout)
        assert summary["method"] == method
        assert json.loads(out.read_text())["type"] == method

    def test_temperature_recovers_t0(self, tmp_path, capsys):
        records = tmp_path / "r.ndjson"
        run(["synth", "--n", "50000", "--t0", "2.67", "--seed", "77",
             "--out", str(records)], capsys)
        out = tmp_path / "t.json"
        code, stdout, _ = run(["fit", "--method", "temperature", "--records", str(records),
                               "--split", "all", "--out", str(out)], capsys)
        assert code == 0
        t = json.loads(stdout)["t"]
        assert 2.62 <= t <= 2.72

    def test_gbm_zero_rounds_gives_base_rate_model(self, records_file, tmp_path, capsys):
        out = tmp_path / "gbm.json"
        code, stdout, _ = run(["fit", "--method", "gbm", "--rounds", "0",
                               "--records", str(records_file), "--out", str(out)], capsys)
        assert code == 0
        model = json.loads(out.read_text())
        assert model["trees"] == []
        assert json.loads(stdout)["rounds"] == 0

    def test_unknown_method_is_usage_error(self, records_file, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--method", "oracle", "--records", str(records_file),
                  "--out", str(tmp_path / "m.json")])
        assert exc.value.code == 64
        capsys.readouterr()

    def test_single_class_data_exits_3(self, tmp_path, capsys):
        # one record => one label value => degenerate for platt
        records = tmp_path / "r.ndjson"
        run(["synth", "--n", "3", "--seed", "2", "--out", str(records)], capsys)
        code, _, err = run(["fit", "--method", "platt", "--records", str(records),
                            "--split", "all", "--out", str(tmp_path / "m.json")], capsys)
        assert code == 3

    def test_fit_gbm_from_features_csv(self, records_file, tmp_path, capsys):
        csv_path = tmp_path / "f.csv"
        run(["extract", "--records", str(records_file), "--out", str(csv_path)], capsys)
        out = tmp_path / "g.json"
        code, _, _ = run(["fit", "--method", "gbm", "--rounds", "5",
                          "--features", str(csv_path), "--split", "all",
                          "--out", str(out)], capsys)
        assert code == 0


class TestEval:
    def test_identity_on_unsharpened_synth_is_calibrated(self, tmp_path, capsys):
        records = tmp_path / "r.ndjson"
        run(["synth", "--n", "40000", "--t0", "1.0", "--seed", "21",
             "--out", str(records)], capsys)
        prefix = str(tmp_path / "eval")
        code, stdout, _ = run(["eval", "--model", "identity", "--records", str(records),
                               "--target", "rank1", "--split", "all",
                               "--out-prefix", prefix], capsys)
        assert code == 0
        report = json.loads(stdout)
        assert report["ace"] <= 0.02

    def test_temperature_halves_ace_and_keeps_auc(self, tmp_path, capsys):
        records = tmp_path / "r.ndjson"
        run(["synth", "--n", "20000", "--t0", "2.67", "--seed", "55",
             "--out", str(records)], capsys)
        model = tmp_path / "t.json"
        run(["fit", "--method", "temperature", "--records", str(records),
             "--out", str(model)], capsys)
        _, raw_out, _ = run(["eval", "--model", "identity", "--records", str(records),
                             "--out-prefix", str(tmp_path / "raw")], capsys)
        _, cal_out, _ = run(["eval", "--model", str(model), "--records", str(records),
                             "--out-prefix", str(tmp_path / "cal")], capsys)
        raw, cal = json.loads(raw_out), json.loads(cal_out)
        assert cal["ace"] <= 0.5 * raw["ace"]
        assert abs(cal["auc"] - raw["auc"]) <= 1e-12

    def test_report_keys_exact(self, records_file, tmp_path, capsys):
        prefix = str(tmp_path / "eval")
        code, stdout, _ = run(["eval", "--model", "identity", "--records", str(records_file),
                               "--out-prefix", prefix], capsys)
        assert code == 0
        on_disk = json.loads((tmp_path / "eval.report.json").read_text())
        assert set(on_disk) == {"ace", "mce", "auc", "nll", "brier", "n", "m_bins"}
        assert json.loads(stdout) == on_disk
        reliability = (tmp_path / "eval.reliability.csv").read_text().splitlines()
        assert reliability[0] == "bin_lo,bin_hi,count,conf,acc"
        assert len(reliability) == 1 + on_disk["m_bins"]
        roc = (tmp_path / "eval.roc.csv").read_text().splitlines()
        assert roc[0] == "threshold,fpr,tpr"

    def test_feature_name_mismatch_exits_4(self, records_file, tmp_path, capsys):
        # model fitted on 6-layer flows, evaluated against 4-layer records
        other = tmp_path / "other.ndjson"
        run(["synth", "--mode", "flow-signal", "--n", "300", "--layers", "6",
             "--heads", "2", "--out", str(other)], capsys)
        model = tmp_path / "g.json"
        run(["fit", "--method", "gbm", "--rounds", "2", "--records", str(other),
             "--split", "all", "--out", str(model)], capsys)
        code, _, err = run(["eval", "--model", str(model), "--records", str(records_file),
                            "--out-prefix", str(tmp_path / "e")], capsys)
        assert code == 4

    def test_rerun_is_byte_identical(self, records_file, tmp_path, capsys):
        model = tmp_path / "m.json"
        run(["fit", "--method", "isotonic", "--records", str(records_file),
             "--out", str(model)], capsys)
        pa, pb = str(tmp_path / "a"), str(tmp_path / "b")
        run(["eval", "--model", str(model), "--records", str(records_file),
             "--out-prefix", pa], capsys)
        run(["eval", "--model", str(model), "--records", str(records_file),
             "--out-prefix", pb], capsys)
        for suffix in (".report.json", ".reliability.csv", ".roc.csv"):
            assert (tmp_path / ("a" + suffix)).read_bytes() == (tmp_path / ("b" + suffix)).read_bytes()


class TestImportance:
    def test_dumps_sorted_csv(self, records_file, tmp_path, capsys):
        model = tmp_path / "g.json"
        run(["fit", "--method", "gbm", "--rounds", "5", "--records", str(records_file),
             "--out", str(model)], capsys)
        out = tmp_path / "imp.csv"
        code, _, _ = run(["importance", "--model", str(model), "--out", str(out)], capsys)
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "feature,score"
        counts = [int(line.split(",")[1]) for line in lines[1:]]
        assert counts == sorted(counts, reverse=True)

    def test_non_gbm_model_exits_4(self, records_file, tmp_path, capsys):
        model = tmp_path / "p.json"
        run(["fit", "--method", "platt", "--records", str(records_file),
             "--out", str(model)], capsys)
        code, _, _ = run(["importance", "--model", str(model),
                          "--out", str(tmp_path / "imp.csv")], capsys)
        assert code == 4


class TestSplit:
    def test_split_deterministic_and_disjoint(self):
        ids = [f"q{i}" for i in range(2000)]
        val = [split_is_val(q, 0) for q in ids]
        val2 = [split_is_val(q, 0) for q in ids]
        assert val == val2
        frac = sum(val) / len(val)
        assert 0.15 <= frac <= 0.25

    def test_split_seed_changes_assignment(self):
        ids = [f"q{i}" for i in range(500)]
        a = [split_is_val(q, 0) for q in ids]
        b = [split_is_val(q, 1) for q in ids]
        assert a != b
