"""Manifest loading: path,patient_id,region,lesion_id,label rows."""

import csv
from dataclasses import dataclass
from pathlib import Path

HEADER = ["path", "patient_id", "region", "lesion_id", "label"]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    patient_id: str
    region: str
    lesion_id: str
    label: int | None


def load_manifest(path):
    """Parse and validate a manifest CSV.

    Relative image paths resolve against the manifest's own directory.
    Lesion ids must be unique; labels are empty or 0/1. Whether each image
    is readable is decided at extraction time, where unreadable files are
    skipped with a warning.
    """
    base = Path(path).parent
    rows = []
    seen = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise ManifestError(f"bad manifest header: expected {','.join(HEADER)}")
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(HEADER):
                raise ManifestError(
                    f"row {row_no}: expected {len(HEADER)} columns, got {len(row)}"
                )
            raw_path, patient_id, region, lesion_id, raw_label = row
            if raw_label == "":
                label = None
            elif raw_label in ("0", "1"):
                label = int(raw_label)
            else:
                raise ManifestError(f"row {row_no}: label must be empty, 0 or 1")
            if lesion_id in seen:
                raise ManifestError(
                    f"row {row_no}: duplicate lesion_id {lesion_id!r} "
                    f"(first seen at row {seen[lesion_id]})"
                )
            seen[lesion_id] = row_no
            img = Path(raw_path)
            if not img.is_absolute():
                img = base / img
            rows.append(ManifestRow(img, patient_id, region, lesion_id, label))
    return rows
