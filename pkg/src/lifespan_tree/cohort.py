"""Subject tables: CSV ingestion, validation and population partitioning."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

log = logging.getLogger(__name__)

SEX_TOKENS = {"F": "female", "M": "male", "U": "unknown"}
SEX_CODES = {v: k for k, v in SEX_TOKENS.items()}
BASE_COLUMNS = ["subject_id", "age", "sex", "diagnosis", "icv_mm3"]
QC_COLUMN = "qc_pass"
_TRUE = {"", "1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    age: float
    sex: str
    diagnosis: str
    icv: float
    volumes: tuple
    row: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (0.0 < self.age < 130.0) or not math.isfinite(self.age):
            raise ValidationError(f"age {self.age!r} outside (0, 130)", self.row)
        if not (self.icv > 0.0) or not math.isfinite(self.icv):
            raise ValidationError(f"icv {self.icv!r} must be > 0", self.row)
        if self.sex not in SEX_CODES:
            raise ValidationError(f"unknown sex {self.sex!r}", self.row)
        if any((not math.isfinite(v)) or v < 0 for v in self.volumes):
            raise ValidationError("volumes must be finite and >= 0", self.row)

    @property
    def is_male(self):
        return self.sex == "male"

    def volume_array(self):
        return np.asarray(self.volumes, dtype=float)


@dataclass
class LoadReport:
    n_rows: int = 0
    n_loaded: int = 0
    n_qc_dropped: int = 0


@dataclass
class PopulationPartition:
    groups: dict
    control: str | None = None

    @property
    def counts(self):
        return {label: len(recs) for label, recs in self.groups.items()}

    def __getitem__(self, label):
        return self.groups[label]

    def __contains__(self, label):
        return label in self.groups

    def __len__(self):
        return sum(len(v) for v in self.groups.values())


def _header(structure_names, with_qc=True):
    cols = list(BASE_COLUMNS)
    if with_qc:
        cols.append(QC_COLUMN)
    return cols + [f"vol_{name}" for name in structure_names]


def _parse_float(text, what, row):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric {what} {text!r}", row) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", row)
    return value


def load_subjects(path, structure_names: Sequence[str], with_report=False):
    """Read a subjects CSV into records ordered by ``structure_names``.

    Row numbers (1-based, header is row 1) are kept on each record so later
    stages can point back at the offending line.  Rows with ``qc_pass``
    false are dropped and counted.
    """
    path = Path(path)
    report = LoadReport()
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = set(_header(structure_names, with_qc=False))
        present = set(header)
        for col in _header(structure_names, with_qc=False):
            if col not in present:
                raise SchemaError(f"missing column {col!r}")
        for col in header:
            if col not in expected and col != QC_COLUMN:
                raise SchemaError(f"unexpected column {col!r}")
        if len(present) != len(header):
            dup = [c for c, n in Counter(header).items() if n > 1]
            raise SchemaError(f"duplicated column(s) {dup}")
        idx = {name: i for i, name in enumerate(header)}
        vol_idx = [idx[f"vol_{name}"] for name in structure_names]
        qc_idx = idx.get(QC_COLUMN)

        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            report.n_rows += 1
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row_no)
            if qc_idx is not None:
                token = row[qc_idx].strip().lower()
                if token in _FALSE:
                    report.n_qc_dropped += 1
                    continue
                if token not in _TRUE:
                    raise ParseError(f"bad qc_pass value {row[qc_idx]!r}", row_no)
            sex_token = row[idx["sex"]].strip().upper()
            if sex_token not in SEX_TOKENS:
                raise ValidationError(f"unknown sex token {row[idx['sex']]!r}", row_no)
            age = _parse_float(row[idx["age"]], "age", row_no)
            icv = _parse_float(row[idx["icv_mm3"]], "icv_mm3", row_no)
            vols = tuple(_parse_float(row[i], f"volume {header[i]}", row_no) for i in vol_idx)
            records.append(
                SubjectRecord(
                    subject_id=row[idx["subject_id"]].strip(),
                    age=age,
                    sex=SEX_TOKENS[sex_token],
                    diagnosis=row[idx["diagnosis"]].strip(),
                    icv=icv,
                    volumes=vols,
                    row=row_no,
                )
            )
    report.n_loaded = len(records)
    if report.n_qc_dropped:
        log.info("%s: dropped %d row(s) failing QC", path, report.n_qc_dropped)
    return (records, report) if with_report else records


def save_subjects(path, records: Iterable[SubjectRecord], structure_names: Sequence[str]):
    """Write records in the subjects CSV schema (floats use shortest round-trip repr)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(structure_names))
        for rec in records:
            if len(rec.volumes) != len(structure_names):
                raise SchemaError(
                    f"subject {rec.subject_id}: {len(rec.volumes)} volumes, "
                    f"manifest has {len(structure_names)}"
                )
            writer.writerow(
                [rec.subject_id, repr(float(rec.age)), SEX_CODES[rec.sex], rec.diagnosis,
                 repr(float(rec.icv)), "true"]
                + [repr(float(v)) for v in rec.volumes]
            )


def partition(records: Sequence[SubjectRecord], labels: Sequence[str], control=None):
    """Split records by diagnosis; every diagnosis must be one of ``labels``."""
    labels = list(labels)
    allowed = set(labels)
    offending = sorted({r.diagnosis for r in records if r.diagnosis not in allowed})
    if offending:
        raise ValidationError(f"diagnosis label(s) outside the declared set: {', '.join(offending)}")
    if control is not None and control not in allowed:
        raise ValidationError(f"control label {control!r} not among declared labels")
    groups = {label: [] for label in labels}
    for rec in records:
        groups[rec.diagnosis].append(rec)
    part = PopulationPartition(groups=groups, control=control)
    log.debug("partition counts: %s", part.counts)
    return part
