"""Command-line entry point.

Subcommands: validate, score, train, eval, synth, ensemble. Every command
leaves its input files untouched and, given the same flags and seeds,
writes byte-identical outputs (nothing is timestamped).

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 computation
error.
"""

import argparse
import json
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from duckling import classifier, evaluation, outliers, synth
from duckling.cohort import detect_format, group_contexts, load_cohort, save_cohort
from duckling.errors import ComputationError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_COMPUTE = 3


def _add_cohort_args(p):
    p.add_argument("--input", required=True, help="cohort file (CSV or JSONL)")
    p.add_argument("--format", choices=["csv", "jsonl"], default=None,
                   help="cohort format; default: guessed from the extension")
    p.add_argument("--signed", action="store_true",
                   help="allow negative feature values (distances range over [0, 2])")


def _load(args):
    fmt = args.format or detect_format(args.input)
    return load_cohort(args.input, fmt, signed=args.signed)


def cmd_validate(args):
    cohort = _load(args)
    contexts = group_contexts(cohort)
    labeled = sum(1 for r in cohort.records if r.label is not None)
    patients = len({r.patient_id for r in cohort.records})
    print(
        f"ok: {len(cohort.records)} records, {patients} patients, "
        f"{len(contexts)} contexts, dimension {cohort.dimension}, {labeled} labeled"
    )
    return EXIT_OK


def _safe_name(text):
    return re.sub(r"[^A-Za-z0-9._-]", "_", text)


def cmd_score(args):
    cohort = _load(args)
    cfg = outliers.ScoreConfig(k=args.k, min_context=args.min_context, signed=args.signed)
    contexts = group_contexts(cohort)
    reports = [outliers.score_context(ctx, cfg) for ctx in contexts]
    outliers.write_scores_csv(cohort, reports, args.output)
    if args.heatmap_dir:
        heat_dir = Path(args.heatmap_dir)
        heat_dir.mkdir(parents=True, exist_ok=True)
        for ctx, report in zip(contexts, reports):
            if report.fallback or len(ctx) < 2:
                continue
            dist = outliers.cosine_distance_matrix(ctx)
            stem = f"{_safe_name(ctx.patient_id)}__{_safe_name(ctx.region)}"
            outliers.write_heatmap_pgm(dist, heat_dir / f"{stem}.pgm")
            outliers.write_matrix_csv(dist, heat_dir / f"{stem}.csv")
    n_flagged = sum(1 for r in reports for f in r.flags if f == outliers.FLAG_OUTLIER)
    n_fallback = sum(len(r.scores) for r in reports if r.fallback)
    print(f"scored {len(cohort.records)} lesions in {len(contexts)} contexts: "
          f"{n_flagged} flagged, {n_fallback} fallback")
    return EXIT_OK


def _fold_path(path, fold):
    p = Path(path)
    return p.with_name(f"{p.stem}_fold{fold}{p.suffix}")


def _train_config(args):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{args.config}: invalid JSON ({exc.msg})") from None
        cfg = classifier.TrainConfig.from_dict(raw)
    else:
        cfg = classifier.TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.ablation == "without-ducklings":
        cfg = replace(cfg, use_scores=False)
    return cfg


def cmd_train(args):
    cohort = _load(args)
    score_map = outliers.load_scores_csv(args.scores)
    cfg = _train_config(args)
    folds = evaluation.group_kfold(cohort, n_folds=args.folds, seed=cfg.seed)

    label_of = {r.lesion_id: r.label for r in cohort.records}
    fold_of_lesion = {r.lesion_id: int(folds.fold_of[i]) for i, r in enumerate(cohort.records)}
    pooled_ids, pooled_labels, pooled_probs = [], [], []
    fold_rows = []
    for fold in range(args.folds):
        params, history = classifier.train(cohort, score_map, cfg, folds, fold)
        classifier.save_model(params, cfg, _fold_path(args.out_model, fold))
        classifier.write_history_csv(history, _fold_path(args.out_history, fold))
        preds = classifier.predict(params, cohort, score_map,
                                   injection=cfg.injection, use_scores=cfg.use_scores)
        fold_ids, fold_labels, fold_probs = [], [], []
        for lesion_id, prob, _score in preds:
            if label_of[lesion_id] is None or fold_of_lesion[lesion_id] != fold:
                continue
            fold_ids.append(lesion_id)
            fold_labels.append(label_of[lesion_id])
            fold_probs.append(prob)
        pooled_ids += fold_ids
        pooled_labels += fold_labels
        pooled_probs += fold_probs
        row = {"fold": fold, "n_val": len(fold_ids), "epochs_run": len(history)}
        try:
            row.update(evaluation.build_metrics(fold_labels, fold_probs))
        except ValidationError:
            row.update({"auc": None, "knee_threshold": None,
                        "sensitivity": None, "specificity": None})
        fold_rows.append(row)

    report = evaluation.build_metrics(pooled_labels, pooled_probs)
    report["folds"] = fold_rows
    if args.out_report:
        evaluation.write_metrics_json(report, args.out_report)
    else:
        print(json.dumps(report, indent=1, sort_keys=True))
    print(f"trained {args.folds} folds on {len(pooled_ids)} labeled lesions; "
          f"pooled auc {report['auc']:.4f}")
    return EXIT_OK


def cmd_eval(args):
    params, cfg, _ = classifier.load_model(args.model)
    cohort = _load(args)
    score_map = outliers.load_scores_csv(args.scores)
    preds = classifier.predict(params, cohort, score_map,
                               injection=cfg.injection, use_scores=cfg.use_scores)
    label_of = {r.lesion_id: r.label for r in cohort.records}
    labels = [label_of[i] for i, _, _ in preds if label_of[i] is not None]
    probs = [p for i, p, _ in preds if label_of[i] is not None]
    report = evaluation.build_metrics(labels, probs)
    report["predictions"] = [
        {"lesion_id": lesion_id, "prob": prob, "outlier_score": score}
        for lesion_id, prob, score in preds
    ]
    evaluation.write_metrics_json(report, args.out_report)
    if args.out_scores:
        with open(args.out_scores, "w", encoding="utf-8", newline="") as fh:
            fh.write("lesion_id,score\n")
            for lesion_id, prob, _ in preds:
                fh.write(f"{lesion_id},{repr(prob)}\n")
    print(f"evaluated {len(preds)} lesions ({len(labels)} labeled): "
          f"auc {report['auc']:.4f}, sensitivity {report['sensitivity']:.4f}, "
          f"specificity {report['specificity']:.4f}")
    return EXIT_OK


def cmd_synth(args):
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{args.config}: invalid JSON ({exc.msg})") from None
        cfg = synth.SynthConfig.from_dict(raw)
    else:
        cfg = synth.SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cohort, mask = synth.generate_cohort(cfg)
    fmt = args.format or detect_format(args.out)
    save_cohort(cohort, args.out, fmt)
    mask_path = args.mask_out or str(Path(args.out).with_name(Path(args.out).stem + "_mask.csv"))
    synth.write_mask_csv(cohort, mask, mask_path)
    print(f"wrote {len(cohort.records)} records ({int(mask.sum())} planted outliers) "
          f"to {args.out}; mask in {mask_path}")
    return EXIT_OK


def _read_score_file(path):
    ids, scores = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "lesion_id,score":
            raise ValidationError(f"{path}: expected header 'lesion_id,score'")
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            lesion_id, _, raw = line.partition(",")
            try:
                scores.append(float(raw))
            except ValueError:
                raise ValidationError(f"{path} row {line_no}: bad score {raw!r}") from None
            ids.append(lesion_id)
    return ids, scores


def cmd_ensemble(args):
    paths = [p for p in args.scores.split(",") if p]
    try:
        weights = [float(w) for w in args.weights.split(",")]
    except ValueError:
        raise ValidationError(f"bad weights {args.weights!r}") from None
    id_lists, score_lists = [], []
    for path in paths:
        ids, scores = _read_score_file(path)
        id_lists.append(ids)
        score_lists.append(scores)
    for i, ids in enumerate(id_lists[1:], start=1):
        if ids != id_lists[0]:
            raise ValidationError(f"{paths[i]}: lesion ids do not match {paths[0]}")
    combined = evaluation.ensemble_scores(score_lists, weights)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("lesion_id,score\n")
        for lesion_id, score in zip(id_lists[0], combined):
            fh.write(f"{lesion_id},{repr(float(score))}\n")
    print(f"ensembled {len(paths)} score files over {len(combined)} lesions into {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="duckling",
        description="Ugly-duckling lesion detection and outlier-gated classification "
                    "over feature embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a cohort file against the format contract")
    _add_cohort_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("score", help="compute outlier scores and ugly-duckling flags")
    _add_cohort_args(p)
    p.add_argument("--k", type=float, default=1.0, help="IQR fence multiplier (default 1.0)")
    p.add_argument("--min-context", type=int, default=6,
                   help="smallest context size scored by comparison (default 6)")
    p.add_argument("--output", required=True, help="scores CSV to write")
    p.add_argument("--heatmap-dir", default=None,
                   help="directory for per-context PGM heatmaps and raw matrix CSVs")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train per-fold gated classifiers")
    _add_cohort_args(p)
    p.add_argument("--scores", required=True, help="scores CSV from 'duckling score'")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", default=None, help="training config JSON")
    p.add_argument("--ablation", choices=["with-ducklings", "without-ducklings"],
                   default="with-ducklings",
                   help="'without-ducklings' trains with every score forced to 1")
    p.add_argument("--out-model", required=True,
                   help="model JSON path; '_foldK' is inserted per fold")
    p.add_argument("--out-history", required=True,
                   help="history CSV path; '_foldK' is inserted per fold")
    p.add_argument("--out-report", default=None,
                   help="pooled out-of-fold metrics JSON (default: print to stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a cohort")
    _add_cohort_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--scores", required=True, help="scores CSV from 'duckling score'")
    p.add_argument("--out-report", required=True, help="metrics report JSON")
    p.add_argument("--out-scores", default=None,
                   help="optional per-lesion probability CSV (lesion_id,score)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic cohort with planted outliers")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", default=None, help="generator config JSON")
    p.add_argument("--out", required=True, help="cohort file to write")
    p.add_argument("--format", choices=["csv", "jsonl"], default=None)
    p.add_argument("--mask-out", default=None,
                   help="planted-outlier sidecar CSV (default: <out>_mask.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ensemble", help="weighted average of per-lesion score files")
    p.add_argument("--scores", required=True, help="comma-separated lesion_id,score CSVs")
    p.add_argument("--weights", required=True, help="comma-separated nonnegative weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
