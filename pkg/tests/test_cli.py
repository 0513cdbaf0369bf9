import json

import pytest

from mixedboot.cli import EXIT_NUMERICAL, EXIT_USAGE, main

from conftest import MEDSIM_DESIGN_DOC

FORMULA = "pos ~ treat * time + (time|id)"


@pytest.fixture(scope="module")
def design_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "design.json"
    path.write_text(json.dumps({**MEDSIM_DESIGN_DOC, "n": 14, "seed": 4}), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def data_file(design_file, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "sim.csv"
    assert main(["simulate", "--design", design_file, "--out", str(path)]) == 0
    return str(path)


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSimulate:
    def test_writes_csv(self, design_file, tmp_path, capsys):
        out = tmp_path / "a.csv"
        code, text, _ = run(capsys, ["simulate", "--design", design_file, "--out", str(out)])
        assert code == 0
        assert "14 clusters" in text
        header = out.read_text().splitlines()[0]
        assert header == "id,treat,time,pos"

    def test_seed_override_changes_data(self, design_file, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(capsys, ["simulate", "--design", design_file, "--out", str(a), "--seed", "1"])
        run(capsys, ["simulate", "--design", design_file, "--out", str(b), "--seed", "2"])
        assert a.read_text() != b.read_text()

    def test_bad_design(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"n\": 5}", encoding="utf-8")
        code, _, err = run(capsys, ["simulate", "--design", str(bad), "--out", str(tmp_path / "x.csv")])
        assert code == EXIT_USAGE
        assert "invalid design" in err


class TestFit:
    def test_text_output(self, data_file, capsys):
        code, text, _ = run(capsys, ["fit", "--data", data_file, "--formula", FORMULA])
        assert code == 0
        assert "Method: ML" in text
        assert "treat:time" in text
        assert "Sigma Residual" in text

    def test_json_output(self, data_file, capsys):
        code, text, _ = run(capsys, [
            "fit", "--data", data_file, "--formula", FORMULA, "--output", "json",
        ])
        assert code == 0
        doc = json.loads(text)
        assert doc["fit"]["method"] == "ML"
        assert set(doc["fit"]["gamma"]) == {"(Intercept)", "treat", "time", "treat:time"}

    def test_reml_and_robust(self, data_file, capsys):
        code, text, _ = run(capsys, [
            "fit", "--data", data_file, "--formula", FORMULA, "--method", "reml",
        ])
        assert code == 0 and "REML criterion" in text
        code, text, _ = run(capsys, [
            "fit", "--data", data_file, "--formula", FORMULA, "--method", "robust",
        ])
        assert code == 0 and "Robustness weights" in text

    def test_bad_formula(self, data_file, capsys):
        code, _, err = run(capsys, ["fit", "--data", data_file, "--formula", "pos ~ treat"])
        assert code == EXIT_USAGE and "random" in err

    def test_missing_file(self, capsys):
        code, _, err = run(capsys, ["fit", "--data", "/no/such.csv", "--formula", FORMULA])
        assert code == EXIT_USAGE

    def test_missing_column(self, data_file, capsys):
        code, _, err = run(capsys, [
            "fit", "--data", data_file, "--formula", "pos ~ dose + (1|id)",
        ])
        assert code == EXIT_USAGE and "dose" in err


class TestConfint:
    def _confint(self, capsys, data_file, *extra):
        return run(capsys, [
            "confint", "--data", data_file, "--formula", FORMULA,
            "--output", "json", "--threads", "1", *extra,
        ])

    def test_wald_rows_are_fixed_effects_only(self, data_file, capsys):
        code, text, _ = self._confint(capsys, data_file, "--method", "wald")
        assert code == 0
        doc = json.loads(text)
        assert [r["name"] for r in doc["ci_table"]["rows"]] == [
            "(Intercept)", "treat", "time", "treat:time",
        ]
        assert doc["ci_table"]["labels"] == ["2.5 %", "97.5 %"]

    def test_wald_variance_parm_is_usage_error(self, data_file, capsys):
        code, _, err = self._confint(
            capsys, data_file, "--method", "wald", "--parm", "Sigma Residual",
        )
        assert code == EXIT_USAGE
        assert "only for fixed effects" in err

    def test_boot_parm_selection(self, data_file, capsys):
        code, text, _ = self._confint(
            capsys, data_file, "--nsim", "25", "--seed", "3",
            "--parm", "treat,Sigma id time",
        )
        assert code == 0
        doc = json.loads(text)
        assert [r["name"] for r in doc["ci_table"]["rows"]] == ["treat", "Sigma id time"]

    def test_byte_identical_across_threads(self, data_file, capsys):
        argv = ["confint", "--data", data_file, "--formula", FORMULA,
                "--output", "json", "--nsim", "40", "--seed", "3"]
        code1, out1, _ = run(capsys, argv + ["--threads", "1"])
        code2, out2, _ = run(capsys, argv + ["--threads", "3"])
        assert code1 == code2 == 0
        assert out1 == out2

    def test_verify_round_trip(self, data_file, tmp_path, capsys):
        saved = tmp_path / "run.json"
        code, out, _ = self._confint(capsys, data_file, "--nsim", "20", "--seed", "5")
        assert code == 0
        saved.write_text(out, encoding="utf-8")
        code, _, err = self._confint(
            capsys, data_file, "--nsim", "20", "--seed", "5", "--verify", str(saved),
        )
        assert code == 0 and "verified" in err
        code, _, err = self._confint(
            capsys, data_file, "--nsim", "20", "--seed", "6", "--verify", str(saved),
        )
        assert code == EXIT_NUMERICAL and "do not match" in err

    def test_bca_without_cluster_id(self, data_file, capsys):
        code, _, err = self._confint(capsys, data_file, "--method", "bca")
        assert code == EXIT_USAGE and "clusterID" in err

    def test_bca_wrong_cluster_id(self, data_file, capsys):
        code, _, err = self._confint(
            capsys, data_file, "--method", "bca", "--cluster-id", "subject",
            "--nsim", "20",
        )
        assert code == EXIT_USAGE

    def test_bca_ok(self, data_file, capsys):
        code, text, _ = self._confint(
            capsys, data_file, "--method", "bca", "--cluster-id", "id",
            "--nsim", "30", "--seed", "2",
        )
        assert code == 0
        doc = json.loads(text)
        assert doc["ci_table"]["method"] == "BCa"
        assert "BCa" in doc["ci_table"]["full_results"]


class TestCompare:
    def test_ml_vs_robust(self, data_file, capsys):
        code, text, _ = run(capsys, [
            "compare", "--data", data_file, "--formula", FORMULA,
        ])
        assert code == 0
        assert "ML" in text and "ROBUST" in text

    def test_bad_methods(self, data_file, capsys):
        code, _, err = run(capsys, [
            "compare", "--data", data_file, "--formula", FORMULA, "--methods", "ml",
        ])
        assert code == EXIT_USAGE

    def test_with_confint(self, data_file, capsys):
        code, text, _ = run(capsys, [
            "compare", "--data", data_file, "--formula", FORMULA,
            "--confint", "--nsim", "20", "--seed", "1", "--threads", "1",
        ])
        assert code == 0
        assert "Confidence intervals" in text


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == EXIT_USAGE

    def test_unknown_flag(self, capsys):
        assert main(["fit", "--nope"]) == EXIT_USAGE
