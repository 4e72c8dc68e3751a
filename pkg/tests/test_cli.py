import json

import numpy as np
import pytest

from duckling.cli import main
from duckling.cohort import load_cohort, save_cohort
from duckling.outliers import load_scores_csv
from duckling.synth import SynthConfig, generate_cohort, load_mask_csv

from conftest import make_cohort


def write_csv(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def small_cohort_file(tmp_path):
    cohort, _ = generate_cohort(SynthConfig(seed=11, n_patients=12, lesions_min=6,
                                            lesions_max=10, fraction_small_context=0.2))
    path = tmp_path / "cohort.csv"
    save_cohort(cohort, path, "csv")
    return str(path)


# --- validate -----------------------------------------------------------------

def test_validate_ok(small_cohort_file, capsys):
    assert main(["validate", "--input", small_cohort_file]) == 0
    assert "ok:" in capsys.readouterr().out


def test_validate_bad_dimension_exits_1(tmp_path, capsys):
    path = write_csv(
        tmp_path, "bad.csv",
        "patient_id,region,lesion_id,label,f0,f1\nP1,t,L1,,1,2\nP1,t,L2,,1,2,3\n",
    )
    assert main(["validate", "--input", path]) == 1
    assert "row 2" in capsys.readouterr().err


def test_validate_missing_file_exits_2(tmp_path):
    assert main(["validate", "--input", str(tmp_path / "nope.csv")]) == 2


def test_validate_signed_flag(tmp_path):
    path = write_csv(tmp_path, "s.csv",
                     "patient_id,region,lesion_id,label,f0\nP1,t,L1,,-1.0\n")
    assert main(["validate", "--input", path]) == 1
    assert main(["validate", "--input", path, "--signed"]) == 0


# --- score --------------------------------------------------------------------

def test_score_duplicates_all_zero(tmp_path):
    rows = [(f"L{i}", "P1", "t", [1.0, 2.0], None) for i in range(6)]
    cohort_path = tmp_path / "dup.csv"
    save_cohort(make_cohort(rows), cohort_path, "csv")
    out = tmp_path / "scores.csv"
    assert main(["score", "--input", str(cohort_path), "--output", str(out)]) == 0
    scores = load_scores_csv(out)
    assert all(abs(s) <= 1e-12 for s, _, _ in scores.values())
    assert all(flag == "normal" for _, flag, _ in scores.values())


def test_score_small_context_rows_marked_na(tmp_path):
    rows = [(f"L{i}", "P1", "t", [1.0, float(i + 1)], None) for i in range(5)]
    cohort_path = tmp_path / "small.csv"
    save_cohort(make_cohort(rows), cohort_path, "csv")
    out = tmp_path / "scores.csv"
    assert main(["score", "--input", str(cohort_path), "--output", str(out)]) == 0
    for score, flag, fallback in load_scores_csv(out).values():
        assert score == 1.0
        assert flag == "na"
        assert fallback


def test_score_zero_norm_exits_3(tmp_path, capsys):
    rows = [(f"L{i}", "P1", "t", [1.0, 1.0], None) for i in range(5)]
    rows.append(("L5", "P1", "t", [0.0, 0.0], None))
    cohort_path = tmp_path / "zn.csv"
    save_cohort(make_cohort(rows), cohort_path, "csv")
    assert main(["score", "--input", str(cohort_path),
                 "--output", str(tmp_path / "s.csv")]) == 3
    assert "L5" in capsys.readouterr().err


def test_score_writes_heatmaps(small_cohort_file, tmp_path):
    heat = tmp_path / "heat"
    out = tmp_path / "scores.csv"
    assert main(["score", "--input", small_cohort_file, "--output", str(out),
                 "--heatmap-dir", str(heat)]) == 0
    pgms = sorted(heat.glob("*.pgm"))
    assert pgms
    header = pgms[0].read_text().splitlines()
    assert header[0] == "P2"
    n, m = header[1].split()
    assert n == m
    assert header[2] == "255"
    assert (heat / (pgms[0].stem + ".csv")).exists()


def test_score_flags_match_engine(small_cohort_file, tmp_path):
    from duckling.outliers import collect_scores, score_cohort

    out = tmp_path / "scores.csv"
    assert main(["score", "--input", small_cohort_file, "--output", str(out)]) == 0
    cohort = load_cohort(small_cohort_file, "csv")
    expected = collect_scores(cohort, score_cohort(cohort))
    assert load_scores_csv(out) == expected


def test_score_does_not_mutate_input(small_cohort_file, tmp_path):
    before = open(small_cohort_file, "rb").read()
    main(["score", "--input", small_cohort_file, "--output", str(tmp_path / "s.csv")])
    assert open(small_cohort_file, "rb").read() == before


# --- synth ---------------------------------------------------------------------

def test_synth_writes_cohort_and_mask(tmp_path):
    out = tmp_path / "synth.csv"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_patients": 8, "seed": 3}), encoding="utf-8")
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    cohort = load_cohort(out, "csv")
    assert len({r.patient_id for r in cohort.records}) == 8
    mask = load_mask_csv(tmp_path / "synth_mask.csv")
    assert set(mask) == {r.lesion_id for r in cohort.records}


def test_synth_seed_flag_overrides_config(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    main(["synth", "--seed", "1", "--out", str(a)])
    main(["synth", "--seed", "1", "--out", str(b)])
    main(["synth", "--seed", "2", "--out", str(c)])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_synth_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 1


# --- train / eval ----------------------------------------------------------------

@pytest.fixture
def trained(tmp_path, small_cohort_file):
    scores = tmp_path / "scores.csv"
    assert main(["score", "--input", small_cohort_file, "--output", str(scores)]) == 0
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"epochs": 4, "batch_size": 16, "seed": 2}), encoding="utf-8")
    model = tmp_path / "model.json"
    history = tmp_path / "history.csv"
    report = tmp_path / "report.json"
    code = main(["train", "--input", small_cohort_file, "--scores", str(scores),
                 "--folds", "3", "--config", str(cfg),
                 "--out-model", str(model), "--out-history", str(history),
                 "--out-report", str(report)])
    assert code == 0
    return small_cohort_file, scores, tmp_path


def test_train_writes_per_fold_artifacts(trained):
    _, _, tmp = trained
    for fold in range(3):
        assert (tmp / f"model_fold{fold}.json").exists()
        hist = (tmp / f"history_fold{fold}.csv").read_text().splitlines()
        assert hist[0] == "epoch,train_loss,val_loss,lr"
        assert len(hist) >= 2
    report = json.loads((tmp / "report.json").read_text())
    assert set(report) >= {"auc", "knee_threshold", "sensitivity", "specificity", "folds"}
    assert len(report["folds"]) == 3


def test_train_zero_epochs_saves_initialized_model(tmp_path, small_cohort_file):
    scores = tmp_path / "scores.csv"
    main(["score", "--input", small_cohort_file, "--output", str(scores)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 0, "seed": 1}), encoding="utf-8")
    code = main(["train", "--input", small_cohort_file, "--scores", str(scores),
                 "--folds", "3", "--config", str(cfg),
                 "--out-model", str(tmp_path / "m.json"),
                 "--out-history", str(tmp_path / "h.csv"),
                 "--out-report", str(tmp_path / "r.json")])
    assert code == 0
    hist = (tmp_path / "h_fold0.csv").read_text().splitlines()
    assert hist == ["epoch,train_loss,val_loss,lr"]
    assert (tmp_path / "m_fold0.json").exists()


def test_train_deterministic_artifacts(tmp_path, small_cohort_file):
    scores = tmp_path / "scores.csv"
    main(["score", "--input", small_cohort_file, "--output", str(scores)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 3, "batch_size": 8, "seed": 7}), encoding="utf-8")
    outs = []
    for run in ("x", "y"):
        d = tmp_path / run
        d.mkdir()
        main(["train", "--input", small_cohort_file, "--scores", str(scores),
              "--folds", "3", "--config", str(cfg),
              "--out-model", str(d / "m.json"), "--out-history", str(d / "h.csv"),
              "--out-report", str(d / "r.json")])
        outs.append(d)
    for name in ("m_fold0.json", "m_fold1.json", "h_fold0.csv", "r.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_eval_report_and_scores(trained, tmp_path):
    cohort_file, scores, tmp = trained
    report = tmp / "eval.json"
    pred = tmp / "pred.csv"
    code = main(["eval", "--input", cohort_file, "--scores", str(scores),
                 "--model", str(tmp / "model_fold0.json"),
                 "--out-report", str(report), "--out-scores", str(pred)])
    assert code == 0
    doc = json.loads(report.read_text())
    assert 0.0 <= doc["auc"] <= 1.0
    assert 0.0 <= doc["sensitivity"] <= 1.0
    assert 0.0 <= doc["specificity"] <= 1.0
    cohort = load_cohort(cohort_file, "csv")
    assert len(doc["predictions"]) == len(cohort.records)
    lines = pred.read_text().splitlines()
    assert lines[0] == "lesion_id,score"
    assert len(lines) == 1 + len(cohort.records)


def test_eval_dimension_mismatch_exits_3(trained, tmp_path):
    cohort_file, scores, tmp = trained
    other = tmp / "wide.csv"
    cohort, _ = generate_cohort(SynthConfig(seed=1, n_patients=6, dimension=8))
    save_cohort(cohort, other, "csv")
    wide_scores = tmp / "wide_scores.csv"
    main(["score", "--input", str(other), "--output", str(wide_scores)])
    code = main(["eval", "--input", str(other), "--scores", str(wide_scores),
                 "--model", str(tmp / "model_fold0.json"),
                 "--out-report", str(tmp / "e.json")])
    assert code == 3


def test_eval_perfect_separation_reports_perfect_knee(tmp_path):
    # A hand-built model that fires on coordinate 0: label 1 lesions have
    # f0 large, so predictions separate the classes perfectly.
    from duckling import classifier as C

    rows = []
    for i in range(8):
        y = i % 2
        rows.append((f"L{i}", f"P{i}", "t", [3.0 if y else 0.1, 0.5], y))
    cohort_path = tmp_path / "sep.csv"
    save_cohort(make_cohort(rows), cohort_path, "csv")
    scores = tmp_path / "scores.csv"
    main(["score", "--input", str(cohort_path), "--output", str(scores)])
    params = C.ModelParams(
        adapter_w=np.array([[1.0, 0.0]]), adapter_b=np.zeros(1),
        head_w=np.array([[1.0]]), head_b=np.zeros(1),
        out_w=np.array([4.0]), out_b=np.array([-2.0]),
    )
    model = tmp_path / "hand.json"
    C.save_model(params, C.TrainConfig(), model)
    report = tmp_path / "r.json"
    assert main(["eval", "--input", str(cohort_path), "--scores", str(scores),
                 "--model", str(model), "--out-report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["sensitivity"] == 1.0
    assert doc["specificity"] == 1.0
    assert doc["auc"] == 1.0


# --- ensemble ----------------------------------------------------------------------

def write_score_file(path, pairs):
    path.write_text("lesion_id,score\n" + "".join(f"{i},{s}\n" for i, s in pairs),
                    encoding="utf-8")
    return str(path)


def test_ensemble_hand_example(tmp_path):
    a = write_score_file(tmp_path / "a.csv", [("L1", 0.2), ("L2", 0.8)])
    b = write_score_file(tmp_path / "b.csv", [("L1", 0.6), ("L2", 0.4)])
    out = tmp_path / "out.csv"
    assert main(["ensemble", "--scores", f"{a},{b}", "--weights", "1,3",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    for line in lines[1:]:
        lesion_id, _, score = line.partition(",")
        assert float(score) == pytest.approx(0.5, abs=1e-12)
    assert [l.split(",")[0] for l in lines[1:]] == ["L1", "L2"]


def test_ensemble_single_identity(tmp_path):
    a = write_score_file(tmp_path / "a.csv", [("L1", 0.25), ("L2", 0.75)])
    out = tmp_path / "out.csv"
    assert main(["ensemble", "--scores", a, "--weights", "1", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1:] == ["L1,0.25", "L2,0.75"]


def test_ensemble_mismatched_ids_exits_1(tmp_path):
    a = write_score_file(tmp_path / "a.csv", [("L1", 0.2)])
    b = write_score_file(tmp_path / "b.csv", [("L9", 0.2)])
    assert main(["ensemble", "--scores", f"{a},{b}", "--weights", "1,1",
                 "--out", str(tmp_path / "o.csv")]) == 1
