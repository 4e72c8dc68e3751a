import numpy as np
import pytest
from PIL import Image


def make_image(path, seed, size=48):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
    Image.fromarray(base, "RGB").save(path)
    return path


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    for i in range(3):
        make_image(d / f"img{i}.png", seed=i)
    return d


@pytest.fixture
def manifest_file(tmp_path, image_dir):
    lines = ["path,patient_id,region,lesion_id,label"]
    lines.append(f"images/img0.png,P1,torso,L0,0")
    lines.append(f"images/img1.png,P1,torso,L1,1")
    lines.append(f"images/img2.png,P2,arm,L2,")
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
