import numpy as np
import pytest

from duckling.cohort import Cohort, ContextSet, LesionRecord


def make_record(lesion_id, values, patient_id="P0", region="torso", label=None):
    emb = np.asarray(values, dtype=np.float64)
    emb.setflags(write=False)
    return LesionRecord(lesion_id, patient_id, region, emb, label)


def make_context(vectors, patient_id="P0", region="torso", labels=None):
    labels = labels if labels is not None else [None] * len(vectors)
    records = tuple(
        make_record(f"{patient_id}L{i}", v, patient_id, region, y)
        for i, (v, y) in enumerate(zip(vectors, labels))
    )
    return ContextSet(patient_id, region, records)


def make_cohort(rows, dimension=None, signed=False):
    """rows: list of (lesion_id, patient_id, region, values, label)."""
    records = tuple(
        make_record(lesion_id, values, patient_id, region, label)
        for lesion_id, patient_id, region, values, label in rows
    )
    dim = dimension if dimension is not None else (len(rows[0][3]) if rows else 0)
    return Cohort(records, dim, signed)


def random_cohort(rng, n_patients=4, dim=3, max_lesions=4, labeled=True, signed=False):
    rows = []
    counter = 0
    for p in range(n_patients):
        for _ in range(int(rng.integers(1, max_lesions + 1))):
            values = rng.uniform(-1.0 if signed else 0.0, 1.0, dim)
            label = int(rng.integers(0, 2)) if labeled and rng.random() < 0.8 else None
            rows.append((f"L{counter:04d}", f"P{p}", "torso", values, label))
            counter += 1
    return make_cohort(rows, dim, signed)


def assert_cohorts_equal(a, b):
    assert a.dimension == b.dimension
    assert len(a.records) == len(b.records)
    for ra, rb in zip(a.records, b.records):
        assert ra.lesion_id == rb.lesion_id
        assert ra.patient_id == rb.patient_id
        assert ra.region == rb.region
        assert ra.label == rb.label
        assert np.array_equal(ra.embedding, rb.embedding)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
