import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from ordtrans import cli
from ordtrans.optim import DivergenceError


def run(*args, ok=(0,)):
    res = CliRunner().invoke(cli.main, [str(a) for a in args])
    if ok is not None and res.exit_code not in ok:
        raise AssertionError(f"exit {res.exit_code}: {res.output}\n{res.exception!r}")
    return res


@pytest.fixture(scope="module")
def sim2(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim2")
    run("simulate", "--multiplier", 2, "--seed", 0, "--out", out)
    return out


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    run("simulate", "--multiplier", 1, "--feature-dim", 2, "--seed", 0, "--out", out)
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_outputs(self, sim2):
        rows = read_rows(sim2 / "data.csv")
        assert len(rows) == 550
        info = json.loads((sim2 / "simulate.json").read_text())
        assert info["table"] == [[44, 0, 0], [82, 198, 4], [0, 80, 142]]
        assert info["config"]["multiplier"] == 2

    def test_k_table(self, tmp_path):
        run("simulate", "--k", 4, "--feature-dim", 1, "--out", tmp_path)
        info = json.loads((tmp_path / "simulate.json").read_text())
        assert info["n_obs"] == 5500 and info["table"][0] == [270, 170, 0, 0]

    def test_unsupported_k(self, tmp_path):
        res = run("simulate", "--k", 9, "--out", tmp_path, ok=(1,))
        assert "unsupported" in res.output

    def test_byte_identical_rerun(self, tmp_path):
        for d in ("a", "b"):
            run("simulate", "--multiplier", 1, "--seed", 3, "--out", tmp_path / d)
        for name in ("data.csv", "manifest.yaml", "simulate.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestConfig:
    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("seed: 5\nmultiplier: 3\nlambda12: 0.5\n")
        run("simulate", "--config", cfg, "--multiplier", 1, "--out", tmp_path / "o")
        echoed = json.loads((tmp_path / "o" / "simulate.json").read_text())["config"]
        assert echoed["seed"] == 5
        assert echoed["multiplier"] == 1
        assert echoed["hyperparams"]["lambda12"] == 0.5
        assert echoed["hyperparams"]["alpha"] == 0.001

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("colour: blue\n")
        res = run("simulate", "--config", cfg, "--out", tmp_path, ok=(1,))
        assert "colour" in res.output

    def test_invalid_hyperparameter(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("eta: -1\n")
        run("simulate", "--config", cfg, "--out", tmp_path, ok=(1,))

    def test_missing_config(self, tmp_path):
        res = run("simulate", "--config", tmp_path / "nope.yaml", "--out", tmp_path, ok=(1,))
        assert "nope.yaml" in res.output

    def test_unknown_flag_is_a_parse_error(self, tmp_path):
        res = run("fit", "--bogus", ok=(1,))
        assert "bogus" in res.output

    def test_bad_fold_count(self, tmp_path):
        run("evaluate", "--folds", 0, "--out", tmp_path, ok=(1,))


class TestFit:
    def test_defaults_converge(self, sim2, tmp_path):
        run("fit", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml", "--out", tmp_path)
        doc = json.loads((tmp_path / "model.json").read_text())
        assert doc["format"] == "ordtrans-model"
        assert doc["fit"]["converged"] is True
        assert doc["fit"]["n_free_parameters"] == 3 * (6 + 6 + 2) - 7
        assert doc["config"]["hyperparams"]["lambda12"] == 0.01

    def test_missing_manifest(self, sim2, tmp_path):
        missing = tmp_path / "absent.yaml"
        res = run("fit", "--data", sim2 / "data.csv", "--manifest", missing, "--out", tmp_path, ok=(1,))
        assert str(missing) in res.output

    def test_max_iter_exit(self, sim2, tmp_path):
        run("fit", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
            "--out", tmp_path, "--max-iter", 1, "--trace", ok=(2,))
        doc = json.loads((tmp_path / "model.json").read_text())
        assert doc["fit"]["converged"] is False
        assert doc["fit"]["iterations"] == 1
        assert len(read_rows(tmp_path / "trace.csv")) == 2

    def test_divergence_exit(self, sim2, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise DivergenceError("non-finite objective")

        monkeypatch.setattr(cli, "fit", boom)
        res = run("fit", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
                  "--out", tmp_path, ok=(3,))
        assert "diverged" in res.output

    def test_missing_values_need_imputation(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("a,b,ci,cf\n0,1,1,1\n,0,2,2\n1,1,2,1\n0,0,1,2\n1,0,2,2\n0,1,1,1\n")
        man = tmp_path / "m.yaml"
        man.write_text(
            "columns:\n"
            "  a: {role: x, kind: categorical, categories: ['0', '1']}\n"
            "  b: {role: y, kind: categorical, categories: ['0', '1']}\n"
            "  ci: {role: c_initial}\n"
            "  cf: {role: c_final}\n"
        )
        res = run("fit", "--data", data, "--manifest", man, "--out", tmp_path / "o", ok=(1,))
        assert "impute" in res.output
        res = run("fit", "--data", data, "--manifest", man, "--out", tmp_path / "o", "--impute-first", ok=None)
        assert res.exit_code in (0, 2)

    def test_byte_identical_rerun(self, sim2, tmp_path):
        for d in ("a", "b"):
            run("fit", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
                "--out", tmp_path / d)
        assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


class TestImpute:
    def test_fill_report(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("a,b,c,ci,cf\n0,1,1,1,1\n,0,0,2,2\n1,NA,1,2,1\n0,0,,1,2\n")
        man = tmp_path / "m.yaml"
        man.write_text(
            "columns:\n"
            "  a: {role: x, kind: categorical, categories: ['0', '1']}\n"
            "  b: {role: y, kind: categorical, categories: ['0', '1']}\n"
            "  c: {role: y}\n"
            "  ci: {role: c_initial}\n"
            "  cf: {role: c_final}\n"
        )
        run("impute", "--data", data, "--manifest", man, "--out", tmp_path / "o", "--m-neighbors", 2)
        report = read_rows(tmp_path / "o" / "fill_report.csv")
        assert {r["feature"]: int(r["filled"]) for r in report} == {"a": 1, "b": 1, "c": 1}
        rows = read_rows(tmp_path / "o" / "imputed.csv")
        assert all(v not in ("", "NA") for r in rows for v in r.values())
        assert float(rows[3]["c"]) == pytest.approx(2 / 3)
        echoed = json.loads((tmp_path / "o" / "impute.json").read_text())["config"]
        assert echoed["m_neighbors"] == 2


class TestPredict:
    @pytest.fixture
    def zero_model(self, sim2, tmp_path):
        run("fit", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
            "--out", tmp_path, "--max-iter", 1, ok=(2,))
        path = tmp_path / "model.json"

        def make(c_weight):
            doc = json.loads(path.read_text())
            for key in ("beta", "delta"):
                doc["params"][key] = np.zeros_like(np.array(doc["params"][key])).tolist()
            doc["hyperparams"]["c_weight"] = c_weight
            out = tmp_path / f"zero_{c_weight}.json"
            out.write_text(json.dumps(doc))
            return out

        return make

    def test_zero_model_predicts_no_change(self, sim2, zero_model, tmp_path):
        run("predict", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
            "--model", zero_model(1.0), "--out", tmp_path / "p")
        rows = read_rows(tmp_path / "p" / "predictions.csv")
        assert len(rows) == 550
        assert all(r["predicted"] == r["c_initial"] for r in rows)
        assert all(r["valid"] == "1" for r in rows)
        probs = np.array([[float(r[f"p{j}"]) for j in (1, 2, 3)] for r in rows])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_strict_invalid_vector(self, sim2, zero_model, tmp_path):
        # a tiny distance weight makes the first two probabilities add up to more than one
        model = zero_model(0.01)
        res = run("predict", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
                  "--model", model, "--out", tmp_path / "s", "--strict", ok=(4,))
        assert "row" in res.output or "observation" in res.output
        run("predict", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
            "--model", model, "--out", tmp_path / "l")
        rows = read_rows(tmp_path / "l" / "predictions.csv")
        assert all(r["valid"] == "0" for r in rows)
        info = json.loads((tmp_path / "l" / "predict.json").read_text())
        assert info["invalid_vectors"] == 550

    def test_missing_model(self, sim2, tmp_path):
        res = run("predict", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
                  "--model", tmp_path / "none.json", "--out", tmp_path, ok=(1,))
        assert "none.json" in res.output

    def test_wrong_format(self, sim2, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "other"}')
        run("predict", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
            "--model", bad, "--out", tmp_path, ok=(1,))


class TestPvalues:
    def test_ten_replicates(self, tiny, tmp_path):
        run("pvalues", "--data", tiny / "data.csv", "--manifest", tiny / "manifest.yaml",
            "--out", tmp_path, "--bootstrap-reps", 10, "--threads", 1, "--seed", 1)
        rows = read_rows(tmp_path / "ranking.csv")
        assert [r["Treatment"] for r in rows] and set(r["Treatment"] for r in rows) == {"y1", "y2"}
        coefs = [float(r["Coefficient"]) for r in rows]
        assert coefs == sorted(coefs)
        for r in rows:
            p = float(r["P-Value"])
            assert 0.0 <= p <= 1.0
            assert round(p / 0.2, 9) == round(p / 0.2)
        md = (tmp_path / "ranking.md").read_text()
        assert md.startswith("| Treatment | Coefficient | P-Value |")
        doc = json.loads((tmp_path / "pvalues.json").read_text())
        assert doc["config"]["bootstrap_reps"] == 10 and doc["config"]["delta"] is True


class TestEvaluate:
    def test_simulated_report(self, tmp_path):
        res = run("evaluate", "--multiplier", 1, "--folds", 2, "--threads", 1, "--out", tmp_path,
                  "--models", "LR,LR_row,DIAG")
        summary = (tmp_path / "summary.txt").read_text()
        for name in ("LR", "LR_row", "DIAG"):
            assert any(line.split()[0] == name for line in summary.splitlines())
        doc = json.loads((tmp_path / "evaluation.json").read_text())
        assert len(doc["assignment"]) == 275
        assert doc["report"]["models"]["DIAG"]["mean_accuracy"] == pytest.approx(192 / 275, abs=0.01)
        assert res.output.strip() == summary.strip()

    def test_thread_count_does_not_change_numbers(self, sim2, tmp_path):
        for t in (1, 3):
            run("evaluate", "--data", sim2 / "data.csv", "--manifest", sim2 / "manifest.yaml",
                "--folds", 3, "--threads", t, "--models", "LR,DIAG", "--out", tmp_path / str(t))
        assert (tmp_path / "1" / "evaluation.csv").read_bytes() == (tmp_path / "3" / "evaluation.csv").read_bytes()

    def test_unknown_model(self, tmp_path):
        res = run("evaluate", "--multiplier", 1, "--models", "SVM", "--out", tmp_path, ok=(1,))
        assert "SVM" in res.output
