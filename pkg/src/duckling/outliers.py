"""Ugly-duckling detection for one patient region.

Every lesion in a context set is compared against the others through the
pairwise cosine-distance matrix; a lesion's outlier score is its mean
distance to the rest, and scores are flagged with a Tukey-style fence at
``Q3 + k * IQR``. Contexts smaller than ``min_context`` cannot support the
comparison, so every lesion there receives the maximal score 1 and a
"not applicable" flag: with no usable context, every lesion stays suspect
and downstream decisions fall back to per-lesion appearance alone.

All functions are pure; scoring different contexts is safe to run
concurrently.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from duckling import kernels
from duckling.errors import ComputationError, ValidationError

FLAG_OUTLIER = "outlier"
FLAG_NORMAL = "normal"
FLAG_NA = "na"


@dataclass(frozen=True)
class ScoreConfig:
    """Detector knobs.

    k : fence multiplier; higher k raises the threshold and flags less.
    min_context : smallest context size the comparison is trusted on;
        smaller contexts take the fallback path.
    signed : embeddings may contain negative values (distances then range
        over [0, 2] instead of [0, 1]).
    """

    k: float = 1.0
    min_context: int = 6
    signed: bool = False

    def __post_init__(self):
        if not (self.k >= 0.0):
            raise ValidationError(f"k must be >= 0, got {self.k!r}")
        if self.min_context < 2:
            raise ValidationError(f"min_context must be >= 2, got {self.min_context!r}")


@dataclass(frozen=True)
class OutlierReport:
    """Scores, quartile stats and flags for one context set."""

    patient_id: str
    region: str
    scores: np.ndarray
    q1: float
    q3: float
    iqr: float
    threshold: float
    flags: tuple[str, ...]
    fallback: bool
    k: float


def cosine_distance_matrix(ctx):
    """Pairwise cosine-distance matrix for a context set.

    Returns an N x N float64 matrix: entry (i, j) is
    ``1 - (g_i . g_j) / (|g_i| |g_j|)``. The matrix is exactly symmetric
    with an exactly zero diagonal, and entries lie in [0, 1] for
    nonnegative embeddings ([0, 2] in signed mode).

    Raises
    ------
    ValidationError
        Fewer than two lesions.
    ComputationError
        A zero-norm embedding (cosine distance is undefined); the message
        names the lesion.
    """
    n = len(ctx.lesions)
    if n < 2:
        raise ValidationError(f"context {ctx.patient_id}/{ctx.region}: need at least 2 lesions, got {n}")
    emb = np.stack([rec.embedding for rec in ctx.lesions]).astype(np.float64, copy=False)
    norms = np.sqrt(np.einsum("ij,ij->i", emb, emb))
    for rec, nrm in zip(ctx.lesions, norms):
        if nrm == 0.0:
            raise ComputationError(
                f"lesion {rec.lesion_id!r}: zero-norm embedding, cosine distance undefined"
            )
    return kernels.cosine_distance_matrix(emb)


def outlier_scores(dist, signed=False):
    """Per-lesion outlier scores: mean distance to the other lesions.

    ``scores[i] = sum_{j != i} dist[i, j] / (N - 1)``. Scores are clipped
    to the attainable distance range so floating-point summation cannot
    push them past it.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1] or dist.shape[0] < 2:
        raise ValidationError(f"distance matrix must be square with N >= 2, got shape {dist.shape}")
    scores = kernels.mean_offdiagonal(dist)
    return np.clip(scores, 0.0, 2.0 if signed else 1.0)


def quantile(sorted_values, q):
    """Linear-interpolation quantile of an ascending-sorted sequence.

    The quantile sits at fractional position ``(N - 1) * q``; adjacent
    order statistics are interpolated.
    """
    values = np.asarray(sorted_values, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("quantile of an empty sequence")
    if not (0.0 <= q <= 1.0):
        raise ValidationError(f"q must be in [0, 1], got {q!r}")
    pos = (values.size - 1) * q
    lo = int(math.floor(pos))
    hi = min(lo + 1, values.size - 1)
    frac = pos - lo
    return float(values[lo] * (1.0 - frac) + values[hi] * frac)


def iqr_flags(scores, k):
    """Flag scores at or above the interquartile fence ``Q3 + k * IQR``.

    When the IQR degenerates to zero (all central values equal, e.g. a
    context of duplicates) the fence equals Q3 and the >= rule would flag
    everything; the comparison switches to strictly greater so a flat
    context yields no outliers.

    Returns ``(flags, q1, q3, threshold)`` with ``flags`` a boolean array.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise ValidationError(f"need at least 2 scores, got {scores.size}")
    if not (k >= 0.0):
        raise ValidationError(f"k must be >= 0, got {k!r}")
    ordered = np.sort(scores)
    q1 = quantile(ordered, 0.25)
    q3 = quantile(ordered, 0.75)
    iqr = q3 - q1
    threshold = q3 + k * iqr
    if iqr > 0.0:
        flags = scores >= threshold
    else:
        flags = scores > q3
    return flags, q1, q3, threshold


def score_context(ctx, cfg=ScoreConfig()):
    """Score one context set and flag its ugly ducklings.

    Contexts with fewer than ``cfg.min_context`` lesions take the fallback
    path: every score is exactly 1, every flag is "na", and the report is
    marked ``fallback=True``.
    """
    n = len(ctx.lesions)
    if n < cfg.min_context:
        ones = np.ones(n, dtype=np.float64)
        return OutlierReport(
            patient_id=ctx.patient_id,
            region=ctx.region,
            scores=ones,
            q1=1.0,
            q3=1.0,
            iqr=0.0,
            threshold=1.0,
            flags=(FLAG_NA,) * n,
            fallback=True,
            k=cfg.k,
        )
    dist = cosine_distance_matrix(ctx)
    scores = outlier_scores(dist, signed=cfg.signed)
    flags, q1, q3, threshold = iqr_flags(scores, cfg.k)
    return OutlierReport(
        patient_id=ctx.patient_id,
        region=ctx.region,
        scores=scores,
        q1=q1,
        q3=q3,
        iqr=q3 - q1,
        threshold=threshold,
        flags=tuple(FLAG_OUTLIER if f else FLAG_NORMAL for f in flags),
        fallback=False,
        k=cfg.k,
    )


def score_cohort(cohort, cfg=ScoreConfig()):
    """Score every context set of a cohort; returns the reports in
    first-appearance order of (patient_id, region)."""
    from duckling.cohort import group_contexts

    return [score_context(ctx, cfg) for ctx in group_contexts(cohort)]


# ---------------------------------------------------------------------------
# score file format: patient_id,region,lesion_id,outlier_score,flag,fallback


def collect_scores(cohort, reports):
    """Flatten per-context reports into ``{lesion_id: (score, flag, fallback)}``."""
    from duckling.cohort import group_contexts

    out = {}
    for ctx, report in zip(group_contexts(cohort), reports):
        for rec, score, flag in zip(ctx.lesions, report.scores, report.flags):
            out[rec.lesion_id] = (float(score), flag, report.fallback)
    return out


def write_scores_csv(cohort, reports, path):
    """Write per-lesion scores in cohort record order."""
    by_lesion = collect_scores(cohort, reports)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "region", "lesion_id", "outlier_score", "flag", "fallback"])
        for rec in cohort.records:
            score, flag, fallback = by_lesion[rec.lesion_id]
            writer.writerow(
                [rec.patient_id, rec.region, rec.lesion_id, repr(float(score)), flag,
                 "true" if fallback else "false"]
            )


def load_scores_csv(path):
    """Read a scores file into ``{lesion_id: (score, flag, fallback)}``."""
    out = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["patient_id", "region", "lesion_id", "outlier_score", "flag", "fallback"]:
            raise ValidationError(f"{path}: not a scores file (bad header)")
        for row_no, row in enumerate(reader, start=1):
            if len(row) != 6:
                raise ValidationError(f"{path} row {row_no}: expected 6 columns, got {len(row)}")
            _, _, lesion_id, raw_score, flag, raw_fallback = row
            try:
                score = float(raw_score)
            except ValueError:
                raise ValidationError(f"{path} row {row_no}: bad score {raw_score!r}") from None
            if flag not in (FLAG_OUTLIER, FLAG_NORMAL, FLAG_NA):
                raise ValidationError(f"{path} row {row_no}: bad flag {flag!r}")
            if raw_fallback not in ("true", "false"):
                raise ValidationError(f"{path} row {row_no}: bad fallback {raw_fallback!r}")
            if lesion_id in out:
                raise ValidationError(f"{path} row {row_no}: duplicate lesion_id {lesion_id!r}")
            out[lesion_id] = (score, flag, raw_fallback == "true")
    return out


# ---------------------------------------------------------------------------
# heatmap emission (plain PGM P2 plus a raw CSV dump)


def write_heatmap_pgm(dist, path):
    """Render a distance matrix as an ASCII PGM image.

    One pixel per entry; values map linearly from [0, max entry] to
    [0, 255]. An all-zero matrix renders as all-black.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    vmax = float(dist.max()) if dist.size else 0.0
    if vmax > 0.0:
        pixels = np.rint(dist / vmax * 255.0).astype(int)
    else:
        pixels = np.zeros_like(dist, dtype=int)
    lines = [f"P2\n{n} {n}\n255\n"]
    for row in pixels:
        lines.append(" ".join(str(v) for v in row) + "\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)


def write_matrix_csv(dist, path):
    """Dump the raw distance-matrix entries as CSV rows."""
    dist = np.asarray(dist, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in dist:
            writer.writerow([repr(float(v)) for v in row])
