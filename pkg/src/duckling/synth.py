"""Seeded synthetic cohorts with planted ugly ducklings.

Each patient gets a sparse nonnegative prototype direction; benign lesions
are the prototype plus small noise, while planted outliers are drawn around
a second, independently drawn direction, so they sit far from their own
patient's cluster in cosine distance. Because prototypes and outlier
directions come from the same distribution, a single embedding carries no
marginal information about outlier-ness: the signal exists only relative to
the patient's other lesions. Labels follow the planted-outlier indicator
XOR a Bernoulli flip, which keeps the classification task noisy.

Randomness comes from one ``numpy.random.default_rng`` (PCG64) stream in a
fixed draw order (per patient: small-context draw, lesion count, prototype,
outlier direction; per lesion: outlier draw, noise vector, label flip), so
identical configs reproduce identical cohorts on any platform with the same
generator.
"""

from dataclasses import dataclass

import numpy as np

from duckling.cohort import Cohort, LesionRecord
from duckling.errors import ValidationError


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    n_patients: int = 200
    lesions_min: int = 8
    lesions_max: int = 24
    dimension: int = 16
    outlier_rate: float = 0.1
    label_flip_rate: float = 0.1
    noise_scale: float = 0.05
    fraction_small_context: float = 0.1

    def __post_init__(self):
        for name in ("outlier_rate", "label_flip_rate", "fraction_small_context"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v!r}")
        if self.dimension < 2:
            raise ValidationError(f"dimension must be >= 2, got {self.dimension!r}")
        if self.noise_scale <= 0.0:
            raise ValidationError(f"noise_scale must be > 0, got {self.noise_scale!r}")
        if not (1 <= self.lesions_min <= self.lesions_max):
            raise ValidationError("need 1 <= lesions_min <= lesions_max")
        if self.n_patients < 0:
            raise ValidationError("n_patients must be >= 0")

    def to_dict(self):
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def _sparse_direction(rng, dim, exclude=None):
    # A quarter of the coordinates active; the outlier direction avoids the
    # prototype's coordinates when the dimension allows, so "distinct"
    # means distinct and not merely unlikely-to-overlap.
    size = max(2, dim // 4)
    if exclude is not None and dim - exclude.size >= size:
        pool = np.setdiff1d(np.arange(dim), exclude)
        idx = pool[rng.choice(pool.size, size=size, replace=False)]
    else:
        idx = rng.choice(dim, size=size, replace=False)
    vec = np.zeros(dim)
    vec[idx] = rng.uniform(0.5, 1.0, size)
    return vec, idx


def generate_cohort(cfg):
    """Generate a cohort plus the ground-truth planted-outlier mask.

    Returns ``(cohort, mask)`` with ``mask`` a boolean array aligned with
    ``cohort.records``. All embeddings are nonnegative. Patients drawn into
    the small-context arm get 1 to 5 lesions; everyone else draws a count
    uniformly from [lesions_min, lesions_max].
    """
    rng = np.random.default_rng(cfg.seed)
    records = []
    mask = []
    for p in range(cfg.n_patients):
        patient_id = f"P{p:04d}"
        small = rng.random() < cfg.fraction_small_context
        if small:
            n = int(rng.integers(1, 6))
        else:
            n = int(rng.integers(cfg.lesions_min, cfg.lesions_max + 1))
        prototype, proto_idx = _sparse_direction(rng, cfg.dimension)
        outlier_dir, _ = _sparse_direction(rng, cfg.dimension, exclude=proto_idx)
        # Cap planted outliers at a quarter of the context (rounded up) so
        # they stay a strict minority; otherwise a lucky run of draws can
        # make the "outliers" the patient's dominant cluster, and the mask
        # would no longer mark the lesions that actually stand out.
        cap = max(1, -(-n // 4))
        planted_in_patient = 0
        for j in range(n):
            is_outlier = (rng.random() < cfg.outlier_rate) and planted_in_patient < cap
            if is_outlier:
                planted_in_patient += 1
            base = outlier_dir if is_outlier else prototype
            emb = np.clip(base + rng.normal(0.0, cfg.noise_scale, cfg.dimension), 0.0, None)
            flip = rng.random() < cfg.label_flip_rate
            label = int(is_outlier) ^ int(flip)
            emb.setflags(write=False)
            records.append(
                LesionRecord(
                    lesion_id=f"{patient_id}L{j:03d}",
                    patient_id=patient_id,
                    region="torso",
                    embedding=emb,
                    label=label,
                )
            )
            mask.append(bool(is_outlier))
    return Cohort(tuple(records), cfg.dimension, signed=False), np.array(mask, dtype=bool)


def write_mask_csv(cohort, mask, path):
    """Sidecar with the planted-outlier ground truth, one row per lesion."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("lesion_id,planted_outlier\n")
        for rec, m in zip(cohort.records, mask):
            fh.write(f"{rec.lesion_id},{1 if m else 0}\n")


def load_mask_csv(path):
    """Read a sidecar back into ``{lesion_id: bool}``."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "lesion_id,planted_outlier":
            raise ValidationError(f"{path}: not a planted-outlier sidecar")
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            lesion_id, _, raw = line.partition(",")
            if raw not in ("0", "1"):
                raise ValidationError(f"{path} row {line_no}: planted_outlier must be 0 or 1")
            out[lesion_id] = raw == "1"
    return out
