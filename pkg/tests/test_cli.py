import csv
import json

import numpy as np
import pytest

from genlaplace import __version__
from genlaplace.cli import main
from genlaplace.datasets import GeneratorSpec, generate

RIDGE = {
    "dataset": {"kind": "heteroskedastic_linear", "n": 50, "slope": 2.0, "intercept": 0.5},
    "hidden_sizes": [],
    "train": {"prior_std": 0.7, "learning_rate": 0.5, "epochs": 3000},
    "seeds": [0],
}

SMALL_CLASSIFIER = {
    "dataset": {"kind": "two_moons", "n": 60, "noise": 0.15},
    "test_dataset": {"kind": "two_moons", "n": 80, "noise": 0.15},
    "ood_dataset": {"kind": "two_moons", "n": 80, "noise": 0.15, "shift": [3.0, 3.0]},
    "hidden_sizes": [6],
    "activation": "relu",
    "train": {"prior_std": 1.0, "learning_rate": 0.05, "epochs": 200},
    "kinds": ["diag", "kfac"],
    "temperatures": [0.1, 1.0],
    "n_samples": 10,
    "seeds": [0],
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    return comments, list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))


class TestTrain:
    def test_ridge_closed_form(self, tmp_path):
        out = tmp_path / "out"
        assert main(["train", "--config", write_config(tmp_path, RIDGE), "--out", str(out)]) == 0
        doc = json.loads((out / "checkpoint.json").read_text())
        w = np.array(doc["weights"][0])[:, 0]
        data = generate(GeneratorSpec.from_dict(RIDGE["dataset"]))
        A = np.hstack([data.X, np.ones((50, 1))])
        ridge = np.linalg.solve(A.T @ A + 0.7**-2 * np.eye(2), A.T @ data.y[:, 0])
        assert np.max(np.abs(w - ridge)) < 1e-4
        comments, rows = read_rows(out / "trace.csv")
        assert rows[0]["epoch"] == "0" and len(rows) == 3001

    def test_byte_identical_rerun(self, tmp_path):
        cfg = write_config(tmp_path, RIDGE)
        main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["train", "--config", cfg, "--out", str(tmp_path / "b")])
        for name in ("checkpoint.json", "trace.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_negative_learning_rate(self, tmp_path, capsys):
        bad = {**RIDGE, "train": {**RIDGE["train"], "learning_rate": -0.1}}
        assert main(["train", "--config", write_config(tmp_path, bad), "--out", str(tmp_path)]) == 2
        assert "train.learning_rate" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "doc,field",
        [
            ({"temperatures": [1.0, 0.5]}, "temperatures"),
            ({"temperatures": [0.0, 1.0]}, "temperatures"),
            ({"kinds": []}, "kinds"),
            ({"colour": "red"}, "colour"),
        ],
    )
    def test_config_errors(self, tmp_path, capsys, doc, field):
        assert main(["sweep", "--config", write_config(tmp_path, {**SMALL_CLASSIFIER, **doc}), "--out", str(tmp_path)]) == 2
        assert f"field: {field}" in capsys.readouterr().err

    def test_usage_errors(self, tmp_path):
        assert main(["bogus"]) == 2
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2


class TestSweepAndOod:
    def test_single_temperature_rows(self, tmp_path):
        cfg = write_config(tmp_path, {**SMALL_CLASSIFIER, "temperatures": [1.0]})
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
        comments, rows = read_rows(tmp_path / "sweep.csv")
        assert len(rows) == 2 and {r["kind"] for r in rows} == {"diag", "kfac"}
        assert comments[0].startswith("# config_sha256: ") and comments[1] == f"# genlaplace_version: {__version__}"
        assert set(rows[0]) >= {"temperature", "kind", "accuracy", "mean_entropy", "mean_nll"}

    def test_kinds_flag(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_CLASSIFIER)
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--kinds", "ekfac"]) == 0
        _, rows = read_rows(tmp_path / "sweep.csv")
        assert {r["kind"] for r in rows} == {"ekfac"} and len(rows) == 2

    def test_ood_null_shift(self, tmp_path):
        same = {**SMALL_CLASSIFIER, "ood_dataset": SMALL_CLASSIFIER["test_dataset"], "n_samples": 200}
        assert main(["ood", "--config", write_config(tmp_path, same), "--out", str(tmp_path)]) == 0
        _, rows = read_rows(tmp_path / "ood.csv")
        for r in rows:
            # the OOD split is an independent draw of the same distribution
            assert abs(float(r["ood_entropy"]) - float(r["in_entropy"])) < 0.05
            assert 0 <= float(r["in_entropy"]) <= np.log(2)

    def test_ood_needs_spec(self, tmp_path):
        doc = {k: v for k, v in SMALL_CLASSIFIER.items() if k != "ood_dataset"}
        assert main(["ood", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == 2


class TestToyRegression:
    CFG = {
        "dataset": {"kind": "cubic_toy", "n": 40},
        "hidden_sizes": [5],
        "train": {"prior_std": 1.0, "learning_rate": 1e-3, "epochs": 300},
        "kinds": ["diag", "kfac"],
        "n_samples": 10,
        "seeds": [0],
    }

    def test_outputs_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path, self.CFG)
        for d in ("a", "b"):
            assert main(["toy-regression", "--config", cfg, "--out", str(tmp_path / d)]) == 0
        for name in ("toy_diag.csv", "toy_kfac.csv", "toy_summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        _, rows = read_rows(tmp_path / "a" / "toy_kfac.csv")
        xs = [float(r["x_grid"]) for r in rows]
        assert len(xs) == 241 and xs[0] == -6.0 and xs[-1] == 6.0
        assert all(float(r["std"]) >= 1.0 for r in rows)

    def test_rejects_classification(self, tmp_path):
        assert main(["toy-regression", "--config", write_config(tmp_path, SMALL_CLASSIFIER), "--out", str(tmp_path)]) == 2

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path, {**self.CFG, "seeds": [0, 1]})
        assert main(["toy-regression", "--config", cfg, "--out", str(tmp_path), "--seed", "3"]) == 0
        _, rows = read_rows(tmp_path / "toy_summary.csv")
        assert {r["seed"] for r in rows} == {"3"}


class TestTheory:
    def test_default_report(self, tmp_path):
        assert main(["theory", "--out", str(tmp_path)]) == 0
        _, identity = read_rows(tmp_path / "theory_identity.csv")
        assert all(float(r["deviation"]) < 1e-10 for r in identity)
        _, mass = read_rows(tmp_path / "theory_central_condition.csv")
        pick = {(float(r["temperature"]), float(r["hypothesis"])): float(r["mass"]) for r in mass}
        assert pick[(0.1, 0.3)] == pytest.approx(0.9953, abs=1e-4)
        assert pick[(1.0, 0.3)] == pytest.approx(1.125, abs=1e-12)
        _, post = read_rows(tmp_path / "theory_grid_posterior.csv")
        zero = [r for r in post if float(r["temperature"]) == 0 and r["form"] == "likelihood_only"]
        assert zero and all(r["posterior"] == r["prior"] for r in zero)

    def test_breach_exit_code(self, tmp_path, monkeypatch, capsys):
        import genlaplace.experiments as ex

        monkeypatch.setattr(ex.theory, "prior_rescale_identity", lambda *a: 1.0)
        assert main(["theory", "--out", str(tmp_path)]) == 1
        assert "prior_rescale_identity" in capsys.readouterr().err
