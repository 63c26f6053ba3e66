"""CSV ingestion and result serialization.

Count files have a header row of column names and a first column of row
names; the header may omit the corner cell, as R's ``write.csv`` does. An
empty cell or the token ``NA`` marks a missing count. Floats are
written with 17 significant digits so every CSV reads back bit-exact.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
import os
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .analysis import (
    biplot_coordinates,
    completed_table,
    impute,
    interaction_covariate_correlations,
    multiplicative_decomposition,
)
from .exceptions import ValidationError
from .model import CountTable, CovariateSet, ModelParams, standardize_columns
from .solver import FitResult

MISSING_TOKENS = ("", "NA")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _read_rows(path) -> list:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh)]
    rows = [r for r in rows if r]  # tolerate a trailing blank line
    if len(rows) < 2:
        raise ValidationError(f"{path}: expected a header row and at least one data row")
    width = len(rows[1])
    if len(rows[0]) not in (width, width - 1):
        raise ValidationError(f"{path}: header has {len(rows[0])} fields but line 2 has {width}")
    for k, row in enumerate(rows[2:], start=3):
        if len(row) != width:
            raise ValidationError(f"{path}: line {k} has {len(row)} fields, expected {width}")
    return rows


def _header(rows, path):
    header = [h.strip() for h in rows[0]]
    if len(rows[1]) < 2:
        raise ValidationError(f"{path}: need a row-name column and at least one data column")
    return header if len(header) == len(rows[1]) - 1 else header[1:]


def read_count_csv(path) -> CountTable:
    """Read a count table; empty cells and ``NA`` are missing."""
    rows = _read_rows(path)
    col_names = _header(rows, path)
    row_names, values, mask = [], [], []
    for i, row in enumerate(rows[1:]):
        row_names.append(row[0].strip())
        vals, obs = [], []
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell in MISSING_TOKENS:
                vals.append(0)
                obs.append(False)
                continue
            try:
                v = int(cell)
            except ValueError:
                try:
                    fv = float(cell)
                except ValueError:
                    fv = None
                if fv is None or not fv.is_integer():
                    raise ValidationError(
                        f"{path}: cell ({row_names[-1]}, {col_names[j]}) = {cell!r} is not an integer count"
                    ) from None
                v = int(fv)
            if v < 0:
                raise ValidationError(f"{path}: cell ({row_names[-1]}, {col_names[j]}) = {v} is negative")
            vals.append(v)
            obs.append(True)
        values.append(vals)
        mask.append(obs)
    table = CountTable(np.array(values, dtype=np.int64), np.array(mask, dtype=bool), row_names, col_names)
    table.check_coverage()
    return table


def _write_matrix(path, m, row_names, col_names, fmt=_fmt, corner=""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *col_names])
        for name, row in zip(row_names, m):
            w.writerow([name, *(fmt(v) for v in row)])


def write_count_csv(table: CountTable, path) -> None:
    """Write counts with ``NA`` in masked cells (inverse of :func:`read_count_csv`)."""
    cells = np.where(table.mask, table.values, -1)
    _write_matrix(path, cells, table.row_names, table.col_names, fmt=lambda v: "NA" if v < 0 else str(int(v)))


class StandardizedCovariates(NamedTuple):
    values: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    names: tuple


def read_covariate_csv(path, expected_ids: Sequence[str], what: str = "row") -> StandardizedCovariates:
    """Read covariates, align rows to ``expected_ids`` and standardize every column."""
    rows = _read_rows(path)
    names = tuple(_header(rows, path))
    ids = [r[0].strip() for r in rows[1:]]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicated identifiers")
    index = {k: i for i, k in enumerate(ids)}
    expected = list(expected_ids)
    missing = [k for k in expected if k not in index]
    extra = [k for k in ids if k not in set(expected)]
    if missing or extra:
        raise ValidationError(f"{path}: unmatched identifiers (missing {missing[:5]}, unexpected {extra[:5]})")
    raw = np.empty((len(expected), len(names)))
    for i, key in enumerate(expected):
        row = rows[1 + index[key]]
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell in MISSING_TOKENS:
                raise ValidationError(f"{path}: missing value for ({key}, {names[j]})")
            try:
                raw[i, j] = float(cell)
            except ValueError:
                raise ValidationError(f"{path}: ({key}, {names[j]}) = {cell!r} is not numeric") from None
    values, mean, scale = standardize_columns(raw, what, names)
    return StandardizedCovariates(values, mean, scale, names)


def load_covariates(table: CountTable, row_path=None, col_path=None) -> CovariateSet:
    n, p = table.shape
    if row_path:
        r = read_covariate_csv(row_path, table.row_names, "row")
    else:
        r = StandardizedCovariates(np.zeros((n, 0)), np.zeros(0), np.ones(0), ())
    if col_path:
        c = read_covariate_csv(col_path, table.col_names, "column")
    else:
        c = StandardizedCovariates(np.zeros((p, 0)), np.zeros(0), np.ones(0), ())
    return CovariateSet(r.values, c.values, r.mean, r.scale, c.mean, c.scale, r.names, c.names)


def write_covariate_csv(m: np.ndarray, ids, names, path) -> None:
    _write_matrix(path, m, ids, names)


def read_matrix_csv(path) -> tuple:
    """Read a numeric matrix written by this module: ``(values, row_names, col_names)``."""
    rows = _read_rows(path)
    cols = _header(rows, path)
    names = [r[0] for r in rows[1:]]
    vals = np.array([[float(c) for c in r[1:]] for r in rows[1:]], dtype=float).reshape(len(names), len(cols))
    return vals, names, cols


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def params_to_dict(fit: FitResult, cov: CovariateSet) -> dict:
    p = fit.params
    mu0, a0, b0 = cov.to_original_scale(p.mu, p.alpha, p.beta)
    return {
        "lambda": fit.lam,
        "standardized": {
            "mu": p.mu,
            "alpha": dict(zip(cov.row_cov_names, p.alpha.tolist())),
            "beta": dict(zip(cov.col_cov_names, p.beta.tolist())),
        },
        "original_scale": {
            "mu": mu0,
            "alpha": dict(zip(cov.row_cov_names, a0.tolist())),
            "beta": dict(zip(cov.col_cov_names, b0.tolist())),
        },
        "row_cov_names": list(cov.row_cov_names),
        "col_cov_names": list(cov.col_cov_names),
        "standardization": {
            "row_mean": cov.row_mean.tolist(),
            "row_scale": cov.row_scale.tolist(),
            "col_mean": cov.col_mean.tolist(),
            "col_scale": cov.col_scale.tolist(),
        },
        "converged": fit.converged,
        "n_iters": fit.n_iters,
        "effective_rank": fit.effective_rank,
        "objective": fit.objective,
    }


def read_params(out_dir) -> ModelParams:
    """Rebuild the fitted :class:`ModelParams` (standardized scale) from ``params.json`` and ``theta.csv``."""
    out_dir = Path(out_dir)
    with open(out_dir / "params.json") as fh:
        d = json.load(fh)
    std = d["standardized"]
    theta, _, _ = read_matrix_csv(out_dir / "theta.csv")
    alpha = [std["alpha"][k] for k in d["row_cov_names"]]
    beta = [std["beta"][k] for k in d["col_cov_names"]]
    return ModelParams(std["mu"], alpha, beta, theta)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(out_dir, files: Sequence[str]) -> dict:
    """Write ``manifest.json`` listing ``files`` with SHA-256 checksums; the only file with a timestamp."""
    out_dir = Path(out_dir)
    manifest = {
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "files": [{"name": f, "sha256": _sha256(out_dir / f), "bytes": os.path.getsize(out_dir / f)} for f in files],
    }
    _dump_json(manifest, out_dir / "manifest.json")
    return manifest


def write_results(
    fit: FitResult,
    table: CountTable,
    cov: CovariateSet,
    out_dir,
    reports: Optional[dict] = None,
    d: int = 2,
    only: Optional[Sequence[str]] = None,
) -> dict:
    """Write the fitted model and its derived tables to ``out_dir``; returns the manifest.

    ``reports`` maps a name to an object with ``to_dict()`` (e.g. a selection
    report) and is written as ``<name>.json``. ``only`` restricts the
    emitted files to the given names.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, cols = table.row_names, table.col_names
    d = min(d, min(table.shape))
    written = []

    def want(name):
        return only is None or name in only

    def emit(name, writer):
        if want(name):
            writer(out_dir / name)
            written.append(name)

    emit("params.json", lambda path: _dump_json(params_to_dict(fit, cov), path))
    emit("theta.csv", lambda path: _write_matrix(path, fit.params.theta, rows, cols))
    emit("imputed.csv", lambda path: _write_matrix(path, impute(table, fit, cov), rows, cols))
    emit("completed.csv", lambda path: _write_matrix(path, completed_table(table, fit, cov), rows, cols))

    def biplot(path):
        bp = biplot_coordinates(fit, d)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "name", *(f"dim{k + 1}" for k in range(d))])
            for name, pt in zip(rows, bp.row_points):
                w.writerow(["row", name, *map(_fmt, pt)])
            for name, pt in zip(cols, bp.col_points):
                w.writerow(["col", name, *map(_fmt, pt)])

    emit("biplot.csv", biplot)

    if cov.k1 + cov.k2 > 0:

        def correlations(path):
            rc, cc = interaction_covariate_correlations(fit, cov, d)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["kind", "covariate", *(f"dim{k + 1}" for k in range(d))])
                for name, vals in zip(cov.row_cov_names, rc):
                    w.writerow(["row", name, *map(_fmt, vals)])
                for name, vals in zip(cov.col_cov_names, cc):
                    w.writerow(["col", name, *map(_fmt, vals)])

        emit("correlations.csv", correlations)

    dec = multiplicative_decomposition(fit, cov)
    for part in ("offset", "row", "col", "interaction"):
        emit(f"factor_{part}.csv", lambda path, part=part: _write_matrix(path, getattr(dec, part), rows, cols))

    for name, rep in sorted((reports or {}).items()):
        emit(f"{name}.json", lambda path, rep=rep: _dump_json(rep.to_dict(), path))

    return write_manifest(out_dir, written)
