"""Image -> embedding pipeline.

Each image is resized to a fixed square, normalized with ImageNet
statistics, run through the backbone trunk, and global-average-pooled over
the spatial dimensions into one fixed-width vector. Rows come out in
manifest order regardless of internal batching, and inference is
deterministic, so rerunning an extraction reproduces the output file byte
for byte.
"""

import csv
import json
import sys

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def load_image(path, image_size):
    """Read, resize, and normalize one image into a CHW float32 array."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def extract_embeddings(rows, trunk, image_size=512, batch_size=8, warn=None):
    """Pooled embeddings for every readable manifest row.

    Returns ``(kept_rows, embeddings, skipped)``: rows whose image loaded,
    their embeddings in the same order, and the rows that were skipped.
    ``warn`` (callable) receives one message per unreadable image; default
    writes to stderr.
    """
    warn = warn or (lambda msg: print(f"warning: {msg}", file=sys.stderr))
    kept, images, skipped = [], [], []
    for row in rows:
        try:
            images.append(load_image(row.path, image_size))
            kept.append(row)
        except (OSError, ValueError) as exc:
            skipped.append(row)
            warn(f"skipping {row.lesion_id!r}: cannot read {row.path} ({exc})")

    embeddings = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = torch.from_numpy(np.stack(images[start : start + batch_size]))
            feats = trunk(batch)
            pooled = feats.mean(dim=(2, 3)).to(torch.float64).numpy()
            embeddings.extend(pooled)
    return kept, embeddings, skipped


def write_cohort_csv(rows, embeddings, path):
    dim = len(embeddings[0]) if embeddings else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["patient_id", "region", "lesion_id", "label"] + [f"f{i}" for i in range(dim)]
        )
        for row, emb in zip(rows, embeddings):
            label = "" if row.label is None else str(row.label)
            writer.writerow(
                [row.patient_id, row.region, row.lesion_id, label]
                + [repr(float(v)) for v in emb]
            )


def write_cohort_jsonl(rows, embeddings, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row, emb in zip(rows, embeddings):
            obj = {
                "patient_id": row.patient_id,
                "region": row.region,
                "lesion_id": row.lesion_id,
            }
            if row.label is not None:
                obj["label"] = row.label
            obj["embedding"] = [float(v) for v in emb]
            fh.write(json.dumps(obj) + "\n")
