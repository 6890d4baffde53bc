"""CSV ingestion, synthetic generators and party splits."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, DatasetError
from ..protocols import DesignMatrix

log = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "?"}
BUILTIN_PREFIX = "builtin:"


@dataclass
class Dataset:
    features: DesignMatrix
    labels: Optional[np.ndarray]
    dropped: int = 0
    source: str = ""

    @property
    def shape(self):
        return self.features.values.shape


def _resolve(path: str | Path) -> Path:
    p = str(path)
    if p.startswith(BUILTIN_PREFIX):
        name = p[len(BUILTIN_PREFIX):]
        res = resources.files("fedleak") / "data" / f"{name}.csv"
        if not res.is_file():
            raise DatasetError(f"no builtin dataset {name!r}")
        return Path(str(res))
    return Path(p)


def load_dataset(path: str | Path, format: str = "csv", label_column: Optional[str] = None,
                 party_id: str = "data") -> Dataset:
    """Read a numeric table with a header row.

    Rows holding a missing cell are dropped with a warning.  ``label_column``
    (if given) is split off as the label vector.
    """
    if format != "csv":
        raise DatasetError(f"unsupported format {format!r}")
    p = _resolve(path)
    if not p.is_file():
        raise DatasetError(f"no such file: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DatasetError("empty file: no header row", line=1)
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DatasetError("duplicate column names in header", line=1)
    values, dropped = [], 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
        rec = []
        missing = False
        for name, cell in zip(header, row):
            tok = cell.strip()
            if tok.lower() in MISSING:
                missing = True
                continue
            try:
                v = float(tok)
            except ValueError:
                raise DatasetError(f"non-numeric value {tok!r} in column {name!r}",
                                   line=lineno) from None
            if not np.isfinite(v):
                raise DatasetError(f"non-finite value in column {name!r}", line=lineno)
            rec.append(v)
        if missing:
            dropped += 1
            continue
        values.append(rec)
    if not values:
        raise DatasetError("no complete data rows", line=len(rows))
    if dropped:
        log.warning("dropped %d row(s) with missing values from %s", dropped, p.name)
    mat = np.array(values, dtype=float)
    labels = None
    names = header
    if label_column is not None:
        if label_column not in header:
            raise DatasetError(f"label column {label_column!r} not in header", line=1)
        j = header.index(label_column)
        labels = mat[:, j].copy()
        mat = np.delete(mat, j, axis=1)
        names = header[:j] + header[j + 1:]
    return Dataset(DesignMatrix(mat, party_id, tuple(names)), labels, dropped, str(path))


def synthetic_regression(m: int, n: int, seed: int, noise: float = 0.1) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n))
    y = x @ rng.standard_normal(n) + noise * rng.standard_normal(m)
    names = tuple(f"x{j}" for j in range(n))
    return Dataset(DesignMatrix(x, "data", names), y, 0, f"synthetic:{m}x{n}:{seed}")


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns are only centered."""
    x = np.asarray(x, dtype=float)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - x.mean(axis=0)) / sd


def split_vertical(matrix: DesignMatrix, attacker_n: int, victim_n: int,
                   attacker: str = "B", victim: str = "A") -> tuple[DesignMatrix, DesignMatrix]:
    """Leading columns go to the attacker, the following ones to the victim.

    Returns ``(victim, attacker)``.
    """
    n = matrix.n
    if attacker_n < 1 or victim_n < 1:
        raise ConfigError("each party needs at least one feature")
    if attacker_n + victim_n != n:
        raise ConfigError(f"split {attacker_n}+{victim_n} does not match {n} features")
    names = matrix.feature_names
    xb = DesignMatrix(matrix.values[:, :attacker_n], attacker, names[:attacker_n])
    xa = DesignMatrix(matrix.values[:, attacker_n:], victim, names[attacker_n:])
    return xa, xb


def split_horizontal(matrix: DesignMatrix, labels: np.ndarray, counts: Sequence[int],
                     party_ids: Optional[Sequence[str]] = None):
    """Consecutive row blocks, one per party, as ``(DesignMatrix, labels)`` pairs."""
    counts = [int(c) for c in counts]
    if any(c < 1 for c in counts):
        raise ConfigError("every party needs at least one sample")
    if sum(counts) > matrix.m:
        raise ConfigError(f"split allocates {sum(counts)} rows but only {matrix.m} exist")
    if sum(counts) != matrix.m:
        raise ConfigError(f"split {counts} does not cover all {matrix.m} rows")
    party_ids = list(party_ids) if party_ids is not None else [f"P{i}" for i in range(len(counts))]
    if len(party_ids) != len(counts):
        raise ConfigError("one party label per row block is required")
    out, start = [], 0
    y = np.asarray(labels, dtype=float)
    for lab, c in zip(party_ids, counts):
        out.append((DesignMatrix(matrix.values[start:start + c], lab, matrix.feature_names),
                    y[start:start + c]))
        start += c
    return out
