import csv
import json

import numpy as np
import pytest

from lesionfeat.backbones import BACKBONES, BackboneError, build_backbone
from lesionfeat.cli import main
from lesionfeat.extract import extract_embeddings, load_image
from lesionfeat.manifest import ManifestError, load_manifest

from conftest import make_image


def run_extract(manifest_file, out, backbone="resnet18", fmt=None, extra=()):
    args = ["--manifest", str(manifest_file), "--backbone", backbone,
            "--weights", "random", "--seed", "0", "--image-size", "48",
            "--output", str(out)]
    if fmt:
        args += ["--format", fmt]
    return main(args + list(extra))


# --- manifest ----------------------------------------------------------------

def test_manifest_parses_and_resolves_paths(manifest_file):
    rows = load_manifest(manifest_file)
    assert [r.lesion_id for r in rows] == ["L0", "L1", "L2"]
    assert all(r.path.is_absolute() or r.path.exists() for r in rows)
    assert rows[0].label == 0 and rows[1].label == 1 and rows[2].label is None


def test_manifest_rejects_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("file,patient\nx,y\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="header"):
        load_manifest(path)


def test_manifest_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "path,patient_id,region,lesion_id,label\na.png,P1,t,L1,\nb.png,P1,t,L1,\n",
        encoding="utf-8",
    )
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(path)


def test_manifest_rejects_bad_label(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        "path,patient_id,region,lesion_id,label\na.png,P1,t,L1,yes\n", encoding="utf-8"
    )
    with pytest.raises(ManifestError, match="label"):
        load_manifest(path)


# --- backbones ----------------------------------------------------------------

def test_unknown_backbone_rejected():
    with pytest.raises(BackboneError, match="unknown backbone"):
        build_backbone("mystery_net", "random", 0)


def test_random_weights_are_seeded():
    t1, w1, _ = build_backbone("resnet18", "random", seed=3)
    t2, _, _ = build_backbone("resnet18", "random", seed=3)
    t3, _, _ = build_backbone("resnet18", "random", seed=4)
    p1 = next(iter(t1.parameters()))
    p2 = next(iter(t2.parameters()))
    p3 = next(iter(t3.parameters()))
    assert w1 == 512
    assert p1.equal(p2)
    assert not p1.equal(p3)


@pytest.mark.parametrize("name,width", [("resnet18", 512), ("efficientnet_b0", 1280)])
def test_feature_width_matches_registry(manifest_file, name, width):
    rows = load_manifest(manifest_file)
    trunk, declared, _ = build_backbone(name, "random", 0)
    assert declared == BACKBONES[name][1] == width
    kept, embeddings, skipped = extract_embeddings(rows, trunk, image_size=48, batch_size=2)
    assert not skipped
    assert all(e.shape == (width,) for e in embeddings)


# --- preprocessing ---------------------------------------------------------------

def test_load_image_shape_and_normalization(image_dir):
    arr = load_image(image_dir / "img0.png", 32)
    assert arr.shape == (3, 32, 32)
    assert arr.dtype == np.float32
    # ImageNet normalization maps [0, 1] pixels into roughly [-2.2, 2.7]
    assert arr.min() >= -3.0 and arr.max() <= 3.0


# --- extraction behavior ----------------------------------------------------------

def test_rows_follow_manifest_order_across_batch_sizes(manifest_file):
    rows = load_manifest(manifest_file)
    trunk, _, _ = build_backbone("resnet18", "random", 0)
    _, e1, _ = extract_embeddings(rows, trunk, image_size=48, batch_size=1)
    _, e3, _ = extract_embeddings(rows, trunk, image_size=48, batch_size=3)
    for a, b in zip(e1, e3):
        assert np.allclose(a, b, atol=1e-6)


def test_duplicate_image_rows_are_identical(tmp_path, image_dir):
    manifest = tmp_path / "dup.csv"
    manifest.write_text(
        "path,patient_id,region,lesion_id,label\n"
        "images/img0.png,P1,t,A,\n"
        "images/img0.png,P1,t,B,\n",
        encoding="utf-8",
    )
    out = tmp_path / "out.csv"
    assert run_extract(manifest, out) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[1][4:] == rows[2][4:]


def test_unreadable_image_skipped_with_warning_and_nonzero_exit(tmp_path, image_dir, capsys):
    manifest = tmp_path / "m.csv"
    manifest.write_text(
        "path,patient_id,region,lesion_id,label\n"
        "images/img0.png,P1,t,L0,\n"
        "images/missing.png,P1,t,L1,\n"
        "images/img2.png,P2,t,L2,\n",
        encoding="utf-8",
    )
    out = tmp_path / "out.csv"
    assert run_extract(manifest, out) == 1
    err = capsys.readouterr().err
    assert "L1" in err and "skipping" in err
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert [r[2] for r in rows[1:]] == ["L0", "L2"]


def test_unknown_backbone_exit_code(manifest_file, tmp_path, capsys):
    code = main(["--manifest", str(manifest_file), "--backbone", "nope",
                 "--output", str(tmp_path / "o.csv")])
    assert code == 1
    assert "unknown backbone" in capsys.readouterr().err


def test_missing_manifest_exit_code(tmp_path):
    assert main(["--manifest", str(tmp_path / "absent.csv"),
                 "--output", str(tmp_path / "o.csv")]) == 2


def test_jsonl_output(manifest_file, tmp_path):
    out = tmp_path / "out.jsonl"
    assert run_extract(manifest_file, out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3
    first = json.loads(lines[0])
    assert first["lesion_id"] == "L0"
    assert len(first["embedding"]) == 512
    assert "label" in first and first["label"] == 0
    assert "label" not in json.loads(lines[2])


def test_labels_forwarded_to_csv(manifest_file, tmp_path):
    out = tmp_path / "out.csv"
    assert run_extract(manifest_file, out) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert [r[3] for r in rows[1:]] == ["0", "1", ""]
