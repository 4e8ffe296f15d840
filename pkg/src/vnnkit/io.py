"""CSV/JSON persistence, dataset ingestion and run configuration.

``features.csv`` has header ``subject_id,<region_1>,...,<region_m>``;
``phenotype.csv`` has ``subject_id,age,sex,diagnosis,severity`` (severity may
be empty).  Floats are written with 17 significant digits so every value
reads back bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .cohort import CohortTable
from .covariance import FeatureMatrix
from .errors import ConfigError, IngestError

OUT_ENV = "VNNKIT_OUT"
DEFAULT_OUT = "vnnkit-out"
PHENOTYPE_COLUMNS = ("subject_id", "age", "sex", "diagnosis", "severity")


def fmt(value) -> str:
    """CSV cell text: floats with 17 significant digits, empty for NaN."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else "%.17g" % value
    return "" if value is None else str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_dict_rows(path, rows: Sequence[Mapping[str, Any]], header: Sequence[str] | None = None) -> None:
    if header is None:
        header = list(rows[0]) if rows else []
    write_csv(path, header, ([r[h] for h in header] for r in rows))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise IngestError(f"{path}: file not found") from None
    except (UnicodeDecodeError, csv.Error) as exc:
        raise IngestError(f"{path}: unreadable CSV ({exc})") from exc
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise IngestError(f"{path}:{i}: expected {len(header)} columns, found {len(row)}")
    return header, body


def _parse_float(text: str, path, line: int, col: int, name: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise IngestError(f"{path}:{line}:{col}: non-numeric value {text!r} in column {name!r}") from None
    if not math.isfinite(v):
        raise IngestError(f"{path}:{line}:{col}: non-finite value {text!r} in column {name!r}")
    return v


def _check_ids(ids: Sequence[str], path) -> None:
    seen = set()
    for i, s in enumerate(ids, start=2):
        if not s:
            raise IngestError(f"{path}:{i}:1: empty subject_id")
        if s in seen:
            raise IngestError(f"{path}:{i}:1: duplicate subject_id {s!r}")
        seen.add(s)


def read_features(path) -> tuple[tuple[str, ...], FeatureMatrix]:
    """Subject IDs and feature matrix from ``features.csv``."""
    header, body = _read_rows(path)
    if header[0] != "subject_id":
        raise IngestError(f"{path}:1:1: first column must be 'subject_id', found {header[0]!r}")
    if len(header) < 2:
        raise IngestError(f"{path}:1: no feature columns")
    names = header[1:]
    if len(set(names)) != len(names):
        raise IngestError(f"{path}:1: duplicate feature column names")
    if not body:
        raise IngestError(f"{path}: no subject rows")
    ids = [row[0].strip() for row in body]
    _check_ids(ids, path)
    values = np.array([[_parse_float(cell, path, i, j + 2, names[j]) for j, cell in enumerate(row[1:])]
                       for i, row in enumerate(body, start=2)])
    return tuple(ids), FeatureMatrix(values, tuple(names))


def write_features(path, ids: Sequence[str], features: FeatureMatrix) -> None:
    write_csv(path, ["subject_id", *features.feature_names],
              ([sid, *row] for sid, row in zip(ids, features.values)))


@dataclass
class Phenotype:
    ids: tuple[str, ...]
    age: np.ndarray
    sex: np.ndarray
    diagnosis: np.ndarray
    severity: np.ndarray


def read_phenotype(path, required: Sequence[str] = ("age",)) -> Phenotype:
    """Phenotype table; ``required`` names the columns the caller needs."""
    header, body = _read_rows(path)
    if not header or header[0] != "subject_id":
        raise IngestError(f"{path}:1:1: first column must be 'subject_id'")
    unknown = [h for h in header if h not in PHENOTYPE_COLUMNS]
    if unknown:
        raise IngestError(f"{path}:1: unexpected column(s) {unknown}; allowed {list(PHENOTYPE_COLUMNS)}")
    for col in required:
        if col not in header:
            raise IngestError(f"{path}:1: missing required column {col!r}")
    pos = {h: i for i, h in enumerate(header)}
    ids = [row[0].strip() for row in body]
    _check_ids(ids, path)
    n = len(body)
    age = np.full(n, np.nan)
    sex = np.array(["F"] * n, dtype=object)
    dx = np.array(["HC"] * n, dtype=object)
    sev = np.full(n, np.nan)
    for i, row in enumerate(body):
        line = i + 2
        if "age" in pos:
            age[i] = _parse_float(row[pos["age"]], path, line, pos["age"] + 1, "age")
            if age[i] <= 0:
                raise IngestError(f"{path}:{line}:{pos['age'] + 1}: age must be positive")
        if "sex" in pos:
            v = row[pos["sex"]].strip()
            if v not in ("F", "M"):
                raise IngestError(f"{path}:{line}:{pos['sex'] + 1}: sex must be F or M, found {v!r}")
            sex[i] = v
        if "diagnosis" in pos:
            v = row[pos["diagnosis"]].strip()
            if v not in ("HC", "D"):
                raise IngestError(f"{path}:{line}:{pos['diagnosis'] + 1}: diagnosis must be HC or D, found {v!r}")
            dx[i] = v
        if "severity" in pos and row[pos["severity"]].strip():
            sev[i] = _parse_float(row[pos["severity"]], path, line, pos["severity"] + 1, "severity")
    return Phenotype(tuple(ids), age, sex, dx, sev)


def write_phenotype(path, cohort: CohortTable) -> None:
    write_csv(path, list(PHENOTYPE_COLUMNS),
              ([sid, a, s, d, v] for sid, a, s, d, v in
               zip(cohort.subject_ids, cohort.age, cohort.sex, cohort.diagnosis, cohort.severity)))


@dataclass
class JoinReport:
    cohort: CohortTable
    only_in_features: list[str] = field(default_factory=list)
    only_in_phenotype: list[str] = field(default_factory=list)


def join_cohort(ids: Sequence[str], features: FeatureMatrix, pheno: Phenotype) -> JoinReport:
    """Inner join on subject_id, in feature-file order; unmatched IDs are reported."""
    where = {s: i for i, s in enumerate(pheno.ids)}
    rows = [i for i, s in enumerate(ids) if s in where]
    if not rows:
        raise IngestError("no subject_id appears in both the features and phenotype files")
    prow = [where[ids[i]] for i in rows]
    idset = set(ids)
    cohort = CohortTable(tuple(ids[i] for i in rows), features.values[rows], features.feature_names,
                         pheno.age[prow], pheno.sex[prow], pheno.diagnosis[prow], pheno.severity[prow])
    return JoinReport(cohort, [s for s in ids if s not in where], [s for s in pheno.ids if s not in idset])


def ingest_cohort(features_path, phenotype_path, required: Sequence[str] = ("age",)) -> JoinReport:
    ids, feats = read_features(features_path)
    return join_cohort(ids, feats, read_phenotype(phenotype_path, required))


# --- run configuration ---------------------------------------------------


def load_config(path, allowed: Iterable[str]) -> dict:
    """JSON object of option overrides; keys outside ``allowed`` are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    allowed = set(allowed)
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s) {unknown}")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def resolve_output_dir(flag: str | None) -> Path:
    """``--out`` if given, else ``$VNNKIT_OUT``, else ``./vnnkit-out``; created if needed."""
    out = Path(flag or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out
