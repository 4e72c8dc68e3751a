"""Embedding data model and on-disk interchange formats.

A cohort is a flat list of lesion records, each carrying a fixed-width
feature embedding. Two file formats are supported:

* CSV with header ``patient_id,region,lesion_id,label,f0,...,f{D-1}``,
  UTF-8, LF line endings, label empty or 0/1;
* JSONL with one object per line: ``patient_id``, ``region``, ``lesion_id``,
  optional ``label``, and ``embedding`` (array of D numbers).

The embedding width D is fixed by the header (CSV) or the first record
(JSONL) and enforced on every subsequent row. Feature values must be finite,
and nonnegative unless the cohort is loaded in signed mode. Errors carry the
1-based data-row number they were found on.

All types are immutable once constructed; loading is single-threaded.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from duckling.errors import ValidationError

_FIXED_COLUMNS = ("patient_id", "region", "lesion_id", "label")


@dataclass(frozen=True)
class LesionRecord:
    """One lesion: identifiers, embedding vector, optional binary label."""

    lesion_id: str
    patient_id: str
    region: str
    embedding: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class ContextSet:
    """All lesions of one patient in one region, in file order."""

    patient_id: str
    region: str
    lesions: tuple[LesionRecord, ...]

    def __len__(self):
        return len(self.lesions)


@dataclass(frozen=True)
class Cohort:
    """A validated set of lesion records sharing one embedding width."""

    records: tuple[LesionRecord, ...] = field(default_factory=tuple)
    dimension: int = 0
    signed: bool = False

    def __len__(self):
        return len(self.records)


def _freeze(values):
    arr = np.asarray(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _check_values(values, row, signed):
    for v in values:
        if not math.isfinite(v):
            raise ValidationError(f"row {row}: non-finite feature value {v!r}")
        if not signed and v < 0.0:
            raise ValidationError(
                f"row {row}: negative feature value {v!r} (load with signed mode to allow)"
            )


def _parse_label(raw, row):
    if raw is None or raw == "":
        return None
    if raw in ("0", "1"):
        return int(raw)
    if isinstance(raw, bool) or raw in (0, 1):
        return int(raw)
    raise ValidationError(f"row {row}: label must be empty, 0 or 1, got {raw!r}")


def load_cohort(path, fmt="csv", signed=False):
    """Load and validate a cohort file.

    Parameters
    ----------
    path : str or Path
        Input file.
    fmt : {"csv", "jsonl"}
    signed : bool
        Allow negative feature values.

    Raises
    ------
    ValidationError
        Malformed row, inconsistent dimension, non-finite or negative value,
        bad label, or duplicate lesion_id; messages name the data row.
    """
    if fmt == "csv":
        return _load_csv(path, signed)
    if fmt == "jsonl":
        return _load_jsonl(path, signed)
    raise ValidationError(f"unknown cohort format {fmt!r}")


def _load_csv(path, signed):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty file: missing header") from None
        dim = len(header) - len(_FIXED_COLUMNS)
        expected = list(_FIXED_COLUMNS) + [f"f{i}" for i in range(dim)]
        if dim < 1 or header != expected:
            raise ValidationError(
                "bad header: expected patient_id,region,lesion_id,label,f0,...,f{D-1}"
            )
        records = []
        seen = {}
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                if len(row) > len(_FIXED_COLUMNS):
                    raise ValidationError(
                        f"inconsistent dimension at row {row_no}: "
                        f"expected D={dim}, got D={len(row) - len(_FIXED_COLUMNS)}"
                    )
                raise ValidationError(
                    f"row {row_no}: expected {len(header)} columns, got {len(row)}"
                )
            patient_id, region, lesion_id, raw_label = row[:4]
            try:
                values = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise ValidationError(f"row {row_no}: non-numeric feature value ({exc})") from None
            _check_values(values, row_no, signed)
            label = _parse_label(raw_label, row_no)
            if lesion_id in seen:
                raise ValidationError(
                    f"row {row_no}: duplicate lesion_id {lesion_id!r} (first seen at row {seen[lesion_id]})"
                )
            seen[lesion_id] = row_no
            records.append(
                LesionRecord(lesion_id, patient_id, region, _freeze(values), label)
            )
    return Cohort(tuple(records), dim, signed)


def _load_jsonl(path, signed):
    records = []
    seen = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        row_no = 0
        for line in fh:
            if not line.strip():
                continue
            row_no += 1
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"row {row_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ValidationError(f"row {row_no}: expected a JSON object")
            try:
                patient_id = str(obj["patient_id"])
                region = str(obj["region"])
                lesion_id = str(obj["lesion_id"])
                embedding = obj["embedding"]
            except KeyError as exc:
                raise ValidationError(f"row {row_no}: missing key {exc.args[0]!r}") from None
            if not isinstance(embedding, list) or not embedding:
                raise ValidationError(f"row {row_no}: embedding must be a nonempty array")
            try:
                values = [float(v) for v in embedding]
            except (TypeError, ValueError):
                raise ValidationError(f"row {row_no}: non-numeric feature value") from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ValidationError(
                    f"row {row_no}: inconsistent dimension (expected {dim}, got {len(values)})"
                )
            _check_values(values, row_no, signed)
            label = _parse_label(obj.get("label"), row_no)
            if lesion_id in seen:
                raise ValidationError(
                    f"row {row_no}: duplicate lesion_id {lesion_id!r} (first seen at row {seen[lesion_id]})"
                )
            seen[lesion_id] = row_no
            records.append(
                LesionRecord(lesion_id, patient_id, region, _freeze(values), label)
            )
    return Cohort(tuple(records), dim if dim is not None else 0, signed)


def save_cohort(cohort, path, fmt="csv"):
    """Write a cohort so that ``load_cohort`` reproduces it value for value.

    Floats are written with ``repr`` (shortest round-trip form), so
    save -> load -> save is byte-stable.
    """
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                list(_FIXED_COLUMNS) + [f"f{i}" for i in range(cohort.dimension)]
            )
            for rec in cohort.records:
                label = "" if rec.label is None else str(rec.label)
                writer.writerow(
                    [rec.patient_id, rec.region, rec.lesion_id, label]
                    + [repr(float(v)) for v in rec.embedding]
                )
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for rec in cohort.records:
                obj = {
                    "patient_id": rec.patient_id,
                    "region": rec.region,
                    "lesion_id": rec.lesion_id,
                }
                if rec.label is not None:
                    obj["label"] = rec.label
                obj["embedding"] = [float(v) for v in rec.embedding]
                fh.write(json.dumps(obj) + "\n")
    else:
        raise ValidationError(f"unknown cohort format {fmt!r}")


def group_contexts(cohort):
    """Partition a cohort into per-(patient, region) context sets.

    Returns the sets in first-appearance order; lesions keep file order
    within each set. The sets are disjoint and cover the cohort.
    """
    groups = {}
    for rec in cohort.records:
        groups.setdefault((rec.patient_id, rec.region), []).append(rec)
    return [
        ContextSet(patient_id, region, tuple(lesions))
        for (patient_id, region), lesions in groups.items()
    ]


def detect_format(path):
    """Guess the cohort format from a file extension (jsonl or csv)."""
    return "jsonl" if str(path).lower().endswith((".jsonl", ".ndjson")) else "csv"
