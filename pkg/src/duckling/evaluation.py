"""ROC/AUC metrics, knee-point operating characteristics, patient-grouped
cross-validation folds, and score ensembling.

The knee point reported here is the ROC point maximizing Youden's J
(TPR - FPR); ties break toward lower FPR, then lower threshold. AUC is the
trapezoidal area, which equals the Mann-Whitney statistic with ties counted
as one half.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from duckling.errors import ValidationError


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept from the strictest threshold to the loosest.

    ``thresholds`` is descending; a point's rates are those of the rule
    ``predict positive when score >= threshold``. The first threshold sits
    above every score (one plus the max), giving the (0, 0) endpoint, and
    the last equals the minimum score, giving (1, 1).
    """

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray


@dataclass(frozen=True)
class FoldAssignment:
    """Per-record fold indices; all records of one patient share a fold."""

    fold_of: np.ndarray
    n_folds: int


def roc_curve(labels, scores):
    """ROC curve over all distinct score thresholds, ties grouped.

    Requires at least one positive and one negative label.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValidationError("labels and scores must be 1-d and the same length")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("need at least one positive and one negative label")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    thresholds = [float(sorted_scores[0]) + 1.0]
    tpr = [0.0]
    fpr = [0.0]
    tp = fp = 0
    i = 0
    n = len(sorted_scores)
    while i < n:
        t = sorted_scores[i]
        while i < n and sorted_scores[i] == t:
            if sorted_labels[i] == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        thresholds.append(float(t))
        tpr.append(tp / n_pos)
        fpr.append(fp / n_neg)
    return RocCurve(np.array(thresholds), np.array(tpr), np.array(fpr))


def auc(curve):
    """Trapezoidal area under the ROC curve."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def knee_point(curve):
    """Operating point maximizing Youden's J = TPR - FPR.

    Ties break toward lower FPR, then lower threshold. Returns
    ``(threshold, sensitivity, specificity)``.
    """
    j = curve.tpr - curve.fpr
    best = np.lexsort((curve.thresholds, curve.fpr, -j))[0]
    return (
        float(curve.thresholds[best]),
        float(curve.tpr[best]),
        float(1.0 - curve.fpr[best]),
    )


def group_kfold(cohort, n_folds=5, seed=0):
    """Partition patients into folds of near-equal patient counts.

    Patient ids are shuffled with the seeded generator and dealt
    round-robin, so fold sizes differ by at most one patient and every
    record of a patient lands in the same fold. Requires at least
    ``n_folds`` distinct patients.
    """
    if n_folds < 2:
        raise ValidationError(f"need at least 2 folds, got {n_folds}")
    patients = []
    seen = set()
    for rec in cohort.records:
        if rec.patient_id not in seen:
            seen.add(rec.patient_id)
            patients.append(rec.patient_id)
    if len(patients) < n_folds:
        raise ValidationError(f"need at least {n_folds} patients, got {len(patients)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    fold_of_patient = {patients[idx]: pos % n_folds for pos, idx in enumerate(order)}
    fold_of = np.array([fold_of_patient[rec.patient_id] for rec in cohort.records], dtype=np.int64)
    return FoldAssignment(fold_of, n_folds)


def ensemble_scores(score_lists, weights):
    """Per-record weighted mean of several score lists.

    Weights must be nonnegative with a positive sum; they are normalized
    internally, so scale does not matter.
    """
    if not score_lists:
        raise ValidationError("no score lists given")
    arrays = [np.asarray(s, dtype=np.float64) for s in score_lists]
    length = arrays[0].shape[0]
    for i, arr in enumerate(arrays):
        if arr.ndim != 1 or arr.shape[0] != length:
            raise ValidationError(f"score list {i} has length {arr.shape[0]}, expected {length}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != len(arrays):
        raise ValidationError(f"{len(arrays)} score lists but {w.shape[0]} weights")
    if (w < 0).any() or w.sum() <= 0:
        raise ValidationError("weights must be nonnegative and sum to a positive value")
    return np.average(np.stack(arrays), axis=0, weights=w)


def build_metrics(labels, scores):
    """AUC plus knee-point operating metrics as a JSON-ready dict."""
    curve = roc_curve(labels, scores)
    threshold, sensitivity, specificity = knee_point(curve)
    return {
        "auc": auc(curve),
        "knee_threshold": threshold,
        "sensitivity": sensitivity,
        "specificity": specificity,
    }


def write_metrics_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_roc_csv(curve, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "tpr", "fpr"])
        for t, tp, fp in zip(curve.thresholds, curve.tpr, curve.fpr):
            writer.writerow([repr(float(t)), repr(float(tp)), repr(float(fp))])
