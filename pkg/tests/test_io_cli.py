import json
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lori import CountTable, CovariateSet, SimSpec, ValidationError, fit, simulate_dataset
from lori.cli import cli
from lori.io import (
    load_covariates,
    read_count_csv,
    read_covariate_csv,
    read_matrix_csv,
    read_params,
    write_count_csv,
    write_results,
)

from conftest import random_instance


def write(path, text):
    path.write_text(text)
    return path


def test_read_counts_example(tmp_path):
    t = read_count_csv(write(tmp_path / "y.csv", "a,b\nr1,1,NA\nr2,2,3\n"))
    assert t.col_names == ("a", "b") and t.row_names == ("r1", "r2")
    np.testing.assert_array_equal(t.mask, [[True, False], [True, True]])
    np.testing.assert_array_equal(t.values, [[1, 0], [2, 3]])
    t = read_count_csv(write(tmp_path / "y2.csv", ",a,b\nr1,,4\nr2,2.0,3\n"))
    assert not t.mask[0, 0] and t.values[1, 0] == 2


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("a,b\nr1,1,-1\nr2,2,3\n", r"\(r1, b\).*negative"),
        ("a,b\nr1,1,0.5\nr2,2,3\n", r"\(r1, b\)"),
        ("a,b\nr1,1,x\nr2,2,3\n", r"\(r1, b\)"),
        ("a,b\nr1,1,2\nr2,2\n", "fields"),
        ("a\nr1,1,2\nr2,2,3\n", "header"),
        ("a,b\nr1,NA,NA\nr2,2,3\n", "r1"),
        ("a,b\nr1,1,NA\nr2,2,NA\n", "b"),
    ],
)
def test_read_counts_errors(tmp_path, text, pattern):
    with pytest.raises(ValidationError, match=pattern):
        read_count_csv(write(tmp_path / "bad.csv", text))


def test_count_round_trip(tmp_path, rng):
    table, _ = random_instance(rng, miss=0.3)
    write_count_csv(table, tmp_path / "y.csv")
    back = read_count_csv(tmp_path / "y.csv")
    assert np.array_equal(back.values, table.values) and np.array_equal(back.mask, table.mask)
    assert back.row_names == table.row_names and back.col_names == table.col_names


def test_covariate_standardization_and_alignment(tmp_path):
    a = read_covariate_csv(write(tmp_path / "r.csv", "id,x\nr1,1\nr2,2\nr3,3\n"), ["r1", "r2", "r3"])
    np.testing.assert_allclose(a.values[:, 0], [-1.0, 0.0, 1.0])
    assert a.mean[0] == 2.0 and a.scale[0] == 1.0
    b = read_covariate_csv(write(tmp_path / "p.csv", "id,x\nr3,3\nr1,1\nr2,2\n"), ["r1", "r2", "r3"])
    np.testing.assert_array_equal(a.values, b.values)


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("id,x\nr1,1\nr2,1\n", "constant"),
        ("id,x\nr1,1\nr9,2\n", "unmatched"),
        ("id,x\nr1,1\nr2,NA\n", "missing"),
        ("id,x\nr1,1\nr2,abc\n", "numeric"),
    ],
)
def test_covariate_errors(tmp_path, text, pattern):
    with pytest.raises(ValidationError, match=pattern):
        read_covariate_csv(write(tmp_path / "c.csv", text), ["r1", "r2"])


def test_results_round_trip_and_manifest(tmp_path, rng):
    import hashlib

    table, cov = random_instance(rng, miss=0.2)
    res = fit(table, cov, 1.0)
    manifest = write_results(res, table, cov, tmp_path)
    names = {f["name"] for f in manifest["files"]}
    assert {"params.json", "theta.csv", "imputed.csv", "completed.csv", "biplot.csv", "correlations.csv",
            "factor_offset.csv", "factor_row.csv", "factor_col.csv", "factor_interaction.csv"} == names
    for f in manifest["files"]:
        assert hashlib.sha256((tmp_path / f["name"]).read_bytes()).hexdigest() == f["sha256"]
    assert read_params(tmp_path).equals(res.params)
    theta, rows, cols = read_matrix_csv(tmp_path / "theta.csv")
    assert np.array_equal(theta, res.params.theta)
    d = json.loads((tmp_path / "params.json").read_text())
    mu0, a0, b0 = cov.to_original_scale(res.params.mu, res.params.alpha, res.params.beta)
    assert d["original_scale"]["mu"] == mu0
    assert d["converged"] == res.converged


def test_zero_theta_biplot(tmp_path, rng):
    table, cov = random_instance(rng)
    write_results(fit(table, cov, 1e6), table, cov, tmp_path)
    vals = [float(v) for line in (tmp_path / "biplot.csv").read_text().splitlines()[1:] for v in line.split(",")[2:]]
    assert vals and all(v == 0.0 for v in vals)


def test_load_covariates_without_files(rng):
    table, _ = random_instance(rng)
    cov = load_covariates(table)
    assert cov.k1 == 0 and cov.k2 == 0


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert cli(["simulate", "--n", "20", "--p", "8", "--tau", "0.5", "--miss-prob", "0.1", "--seed", "3",
                "--out", str(out)]) == 0
    return out


def data_args(d):
    return ["--counts", str(d / "counts.csv"), "--row-cov", str(d / "row_cov.csv"), "--col-cov", str(d / "col_cov.csv")]


def test_cli_fit_qut(dataset, tmp_path, capsys):
    out = tmp_path / "fit"
    assert cli(["fit", *data_args(dataset), "--lambda", "qut", "--nboot", "20", "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert {f["name"] for f in printed["files"]} >= {"params.json", "selection.json"}
    assert json.loads((out / "selection.json").read_text())["method"] == "qut"


def test_cli_impute_writes_subset(dataset, tmp_path):
    out = tmp_path / "imp"
    assert cli(["impute", *data_args(dataset), "--lambda", "2.5", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["completed.csv", "imputed.csv", "manifest.json", "params.json"]


def test_cli_test_prints_decision(dataset, capsys):
    assert cli(["test", *data_args(dataset), "--nboot", "20"]) == 0
    text = capsys.readouterr().out
    assert re.search(r"^lambda0=\S+$", text, re.M)
    assert re.search(r"^threshold=\S+$", text, re.M)
    assert re.search(r"^reject=(true|false)$", text, re.M)


def test_cli_cv(dataset, tmp_path, capsys):
    assert cli(["cv", *data_args(dataset), "--folds", "2", "--grid", "5,1", "--out", str(tmp_path / "cv")]) == 0
    assert "chosen_lambda=" in capsys.readouterr().out
    assert (tmp_path / "cv" / "selection.json").exists()


def test_cli_exit_codes(dataset, tmp_path, capsys):
    assert cli(["fit", "--lambda", "1", "--out", str(tmp_path)]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli(["fit", *data_args(dataset), "--bogus"]) == 1
    assert cli([]) == 1
    assert cli(["fit", "--counts", str(tmp_path / "nope.csv"), "--lambda", "1", "--out", str(tmp_path)]) == 1
    assert cli(["fit", *data_args(dataset), "--lambda", "abc", "--out", str(tmp_path / "x")]) == 1
    bad = write(tmp_path / "neg.csv", "a,b\nr1,1,-2\nr2,2,3\n")
    assert cli(["fit", "--counts", str(bad), "--lambda", "1", "--out", str(tmp_path / "y")]) == 1
    zeros = write(tmp_path / "zero.csv", "a,b\nr1,0,0\nr2,0,0\n")
    assert cli(["fit", "--counts", str(zeros), "--lambda", "1", "--out", str(tmp_path / "z")]) == 2


def test_cli_test_level_under_null(tmp_path, capsys):
    decisions = []
    for seed in range(10):
        d = tmp_path / f"null{seed}"
        assert cli(["simulate", "--n", "20", "--p", "8", "--tau", "0", "--seed", str(seed), "--out", str(d)]) == 0
        capsys.readouterr()
        assert cli(["test", *data_args(d), "--nboot", "40", "--seed", str(seed)]) == 0
        decisions.append("reject=false" in capsys.readouterr().out)
    assert np.mean(decisions) >= 0.9


def test_cli_reruns_are_byte_identical(dataset, tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli(["fit", *data_args(dataset), "--lambda", "cv", "--folds", "2", "--seed", "5", "--out", str(out)]) == 0
        runs.append({p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"})
    assert runs[0] == runs[1]
