"""Outlier-gated classifier stack and its training loop.

The trainable stack is ``adapter -> head -> (x score) -> output``:

* adapter: linear D -> adapter_dim, ReLU (the trainable tail standing in
  for a feature backbone over precomputed embeddings);
* head: linear adapter_dim -> head_dim, ReLU;
* gate: the per-lesion outlier score multiplies the head features, so
  suspect lesions are weighted up and, in backprop, the same score scales
  every gradient upstream of the gate;
* output: linear head_dim -> 1, sigmoid.

Training minimizes mean focal loss with rectified Adam, halves the learning
rate when validation loss plateaus, and stops early when it stops improving.
Everything is deterministic given the config seed.

Score injection is configurable: "feature" gates the features (scores act
at training and inference), "loss" leaves features alone and weights each
record's loss term instead (scores act only during learning).
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from duckling import kernels
from duckling.errors import ComputationError, ValidationError
from duckling.optim import RAdam

PROB_EPS = 1e-12

INJECT_FEATURE = "feature"
INJECT_LOSS = "loss"


@dataclass
class ModelParams:
    """Weights of the three trainable networks. ``out_b`` has shape (1,) so
    every parameter is an ndarray the optimizer can update in place."""

    adapter_w: np.ndarray
    adapter_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    @property
    def input_dim(self):
        return self.adapter_w.shape[1]

    @property
    def adapter_dim(self):
        return self.adapter_w.shape[0]

    @property
    def head_dim(self):
        return self.head_w.shape[0]

    def param_list(self):
        return [self.adapter_w, self.adapter_b, self.head_w, self.head_b, self.out_w, self.out_b]

    def copy(self):
        return ModelParams(*[p.copy() for p in self.param_list()])


@dataclass(frozen=True)
class ForwardTrace:
    """Activations of one forward pass, kept for the backward pass."""

    embedding: np.ndarray
    adapter_out: np.ndarray
    head_out: np.ndarray
    gated: np.ndarray
    prob: float
    score: float


@dataclass(frozen=True)
class Gradients:
    """Exact focal-loss gradients for every parameter, plus the gradients
    at the gate (``d_gated``) and at the head output (``d_head_out``,
    which is the score times ``d_gated``)."""

    adapter_w: np.ndarray
    adapter_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    d_head_out: np.ndarray
    d_gated: np.ndarray
    loss: float

    def param_list(self):
        return [self.adapter_w, self.adapter_b, self.head_w, self.head_b, self.out_w, self.out_b]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    epochs: int = 25
    gamma: float = 2.0
    alpha: float = 0.25
    plateau_patience: int = 3
    lr_factor: float = 0.5
    early_stop_patience: int = 7
    seed: int = 0
    batch_size: int | None = None
    adapter_dim: int = 64
    head_dim: int = 32
    injection: str = INJECT_FEATURE
    use_scores: bool = True
    include_fallback: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError("alpha must be in (0, 1]")
        if self.plateau_patience <= 0 or self.early_stop_patience <= 0:
            raise ValidationError("patience values must be positive")
        if not (0.0 < self.lr_factor < 1.0):
            raise ValidationError("lr_factor must be in (0, 1)")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValidationError("batch_size must be positive or None")
        if self.adapter_dim <= 0 or self.head_dim <= 0:
            raise ValidationError("layer sizes must be positive")
        if self.injection not in (INJECT_FEATURE, INJECT_LOSS):
            raise ValidationError(f"injection must be 'feature' or 'loss', got {self.injection!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def init_params(input_dim, adapter_dim=64, head_dim=32, seed=0):
    """Seeded initialization: weights uniform in +/- sqrt(6/(fan_in+fan_out))
    per layer, biases zero."""
    rng = np.random.default_rng(seed)

    def glorot(out_dim, in_dim):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return rng.uniform(-limit, limit, size=(out_dim, in_dim))

    return ModelParams(
        adapter_w=glorot(adapter_dim, input_dim),
        adapter_b=np.zeros(adapter_dim),
        head_w=glorot(head_dim, adapter_dim),
        head_b=np.zeros(head_dim),
        out_w=glorot(1, head_dim)[0],
        out_b=np.zeros(1),
    )


def forward(params, embedding, score):
    """Run one embedding through the gated stack.

    ``score`` multiplies the head features elementwise; score 0 therefore
    blanks the features entirely and the prediction collapses to the
    output layer's response at zero.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.ndim != 1 or embedding.shape[0] != params.input_dim:
        raise ComputationError(
            f"embedding has shape {embedding.shape}, model expects ({params.input_dim},)"
        )
    if not (0.0 <= score <= 2.0):
        raise ValidationError(f"score must be in [0, 2], got {score!r}")
    adapter_out, head_out, gated, prob = kernels.gated_forward(
        embedding[None, :],
        np.array([score], dtype=np.float64),
        params.adapter_w,
        params.adapter_b,
        params.head_w,
        params.head_b,
        params.out_w,
        params.out_b,
    )
    return ForwardTrace(
        embedding=embedding,
        adapter_out=adapter_out[0],
        head_out=head_out[0],
        gated=gated[0],
        prob=float(prob[0]),
        score=float(score),
    )


def focal_loss(y, p, gamma=2.0, alpha=0.25):
    """Focal loss ``-alpha * (1 - p_t)^gamma * ln(p_t)`` with
    ``p_t = p`` for a positive label and ``1 - p`` otherwise.

    ``p`` is clamped into [PROB_EPS, 1 - PROB_EPS] first, so exact 0/1
    probabilities stay finite. With gamma=0, alpha=1 this is binary
    cross-entropy.
    """
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    p_t = p if y == 1 else 1.0 - p
    p_t = min(max(p_t, PROB_EPS), 1.0 - PROB_EPS)
    return float(-alpha * (1.0 - p_t) ** gamma * np.log(p_t))


def _focal_values(y, p, gamma, alpha):
    p_t = np.where(y == 1.0, p, 1.0 - p)
    p_t = np.clip(p_t, PROB_EPS, 1.0 - PROB_EPS)
    return -alpha * (1.0 - p_t) ** gamma * np.log(p_t)


def backward(params, trace, y, gamma=2.0, alpha=0.25):
    """Exact analytic gradients of the focal loss for one record.

    The gradient delivered to the head output is the score times the
    gradient at the gated features, elementwise and exact; a score of 0
    therefore zeroes every adapter and head gradient.
    """
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    if trace.head_out.shape[0] != params.head_dim or trace.embedding.shape[0] != params.input_dim:
        raise ComputationError("trace does not match the model's layer sizes")
    (loss, g_aw, g_ab, g_hw, g_hb, g_ow, g_ob, d_head_out, d_gated) = kernels.gated_backward(
        trace.embedding[None, :],
        np.array([trace.score], dtype=np.float64),
        np.array([float(y)]),
        np.array([1.0]),
        params.adapter_w,
        params.head_w,
        params.out_w,
        trace.adapter_out[None, :],
        trace.head_out[None, :],
        trace.gated[None, :],
        np.array([trace.prob]),
        float(gamma),
        float(alpha),
    )
    return Gradients(
        adapter_w=g_aw,
        adapter_b=g_ab,
        head_w=g_hw,
        head_b=g_hb,
        out_w=g_ow,
        out_b=g_ob,
        d_head_out=d_head_out[0],
        d_gated=d_gated[0],
        loss=loss,
    )


# ---------------------------------------------------------------------------
# training


def _gates_and_weights(scores, injection, n):
    """Per-record feature gates and loss weights for one batch of size n."""
    if injection == INJECT_FEATURE:
        return scores, np.full(len(scores), 1.0 / n)
    return np.ones_like(scores), scores / n


def _eval_loss(params, x, gate, y, scores, injection, gamma, alpha):
    """Objective value on a record set (mean focal loss; in loss-injection
    mode each term is weighted by its score)."""
    if x.shape[0] == 0:
        return float("nan")
    _, _, _, prob = kernels.gated_forward(
        x, gate, params.adapter_w, params.adapter_b, params.head_w, params.head_b,
        params.out_w, params.out_b,
    )
    values = _focal_values(y, prob, gamma, alpha)
    if injection == INJECT_LOSS:
        values = scores * values
    return float(values.mean())


def train(cohort, score_map, cfg, folds, val_fold):
    """Train one fold's model.

    Parameters
    ----------
    cohort : Cohort
        Labeled records are used; unlabeled ones are ignored.
    score_map : dict
        ``lesion_id -> (score, flag, fallback)`` as produced by
        ``outliers.load_scores_csv`` / ``outliers.collect_scores``. Every
        labeled lesion must be present.
    cfg : TrainConfig
    folds : FoldAssignment
        Per-record fold indices; all records of a patient share a fold.
    val_fold : int
        Records in this fold form the validation set, the rest train.

    Returns
    -------
    (ModelParams, list of dict)
        Final parameters and one history row per completed epoch:
        ``{"epoch", "train_loss", "val_loss", "lr"}`` (losses evaluated
        after the epoch's updates, lr the rate used during the epoch).
    """
    records = cohort.records
    labeled = [i for i, rec in enumerate(records) if rec.label is not None]
    if not labeled:
        raise ValidationError("cohort has no labeled records")
    missing = [records[i].lesion_id for i in labeled if records[i].lesion_id not in score_map]
    if missing:
        raise ValidationError(
            f"no outlier score for {len(missing)} labeled lesion(s), e.g. {missing[0]!r}"
        )

    train_idx = [i for i in labeled if folds.fold_of[i] != val_fold]
    val_idx = [i for i in labeled if folds.fold_of[i] == val_fold]
    train_patients = {records[i].patient_id for i in train_idx}
    val_patients = {records[i].patient_id for i in val_idx}
    leaked = train_patients & val_patients
    if leaked:
        raise ValidationError(f"fold leakage: patient(s) {sorted(leaked)[:3]} in both train and validation")
    if cfg.include_fallback is False:
        train_idx = [i for i in train_idx if not score_map[records[i].lesion_id][2]]
    if not train_idx:
        raise ValidationError("no training records left for this fold")

    def arrays(idx):
        x = np.stack([records[i].embedding for i in idx]).astype(np.float64) if idx else np.zeros((0, cohort.dimension))
        y = np.array([float(records[i].label) for i in idx])
        s = np.array([float(score_map[records[i].lesion_id][0]) for i in idx])
        return x, y, s

    x_tr, y_tr, s_tr = arrays(train_idx)
    x_va, y_va, s_va = arrays(val_idx)
    if not cfg.use_scores:
        # Ablation arm: every lesion is treated as if its score were 1.
        s_tr = np.ones_like(s_tr)
        s_va = np.ones_like(s_va)
    gate_tr_full = s_tr if cfg.injection == INJECT_FEATURE else np.ones_like(s_tr)
    gate_va = s_va if cfg.injection == INJECT_FEATURE else np.ones_like(s_va)

    params = init_params(cohort.dimension, cfg.adapter_dim, cfg.head_dim,
                         seed=(cfg.seed, val_fold, 0))
    if cfg.epochs == 0:
        return params, []

    optimizer = RAdam(lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng((cfg.seed, val_fold, 1))
    n_train = len(train_idx)
    batch = n_train if cfg.batch_size is None else min(cfg.batch_size, n_train)

    history = []
    best_val = float("inf")
    plateau_stale = 0
    early_stale = 0
    for epoch in range(cfg.epochs):
        lr_used = optimizer.lr
        order = np.arange(n_train) if cfg.batch_size is None else shuffle_rng.permutation(n_train)
        for start in range(0, n_train, batch):
            sel = order[start : start + batch]
            gate, weight = _gates_and_weights(s_tr[sel], cfg.injection, len(sel))
            xb = x_tr[sel]
            adapter_out, head_out, gated, prob = kernels.gated_forward(
                xb, gate, params.adapter_w, params.adapter_b,
                params.head_w, params.head_b, params.out_w, params.out_b,
            )
            out = kernels.gated_backward(
                xb, gate, y_tr[sel], weight,
                params.adapter_w, params.head_w, params.out_w,
                adapter_out, head_out, gated, prob, cfg.gamma, cfg.alpha,
            )
            optimizer.step(params.param_list(), list(out[1:7]))

        train_loss = _eval_loss(params, x_tr, gate_tr_full, y_tr, s_tr,
                                cfg.injection, cfg.gamma, cfg.alpha)
        val_loss = _eval_loss(params, x_va, gate_va, y_va, s_va,
                              cfg.injection, cfg.gamma, cfg.alpha)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": lr_used})

        if np.isnan(val_loss):
            continue
        if val_loss < best_val:
            best_val = val_loss
            plateau_stale = 0
            early_stale = 0
        else:
            plateau_stale += 1
            early_stale += 1
            if early_stale >= cfg.early_stop_patience:
                break
            if plateau_stale >= cfg.plateau_patience:
                optimizer.lr *= cfg.lr_factor
                plateau_stale = 0
    return params, history


def predict(params, cohort, score_map, injection=INJECT_FEATURE, use_scores=True):
    """Per-lesion probability plus the lesion's outlier score.

    Returns ``[(lesion_id, prob, score), ...]`` in cohort record order;
    ``score`` is always the raw outlier score from ``score_map`` (the
    clinician-facing justification). Features are gated by that score only
    under feature injection with ``use_scores=True``; loss injection and
    the ablation arm run with a gate of 1.
    """
    if cohort.dimension != params.input_dim:
        raise ComputationError(
            f"cohort dimension {cohort.dimension} does not match model input {params.input_dim}"
        )
    out = []
    records = cohort.records
    if not records:
        return out
    missing = [r.lesion_id for r in records if r.lesion_id not in score_map]
    if missing:
        raise ValidationError(f"no outlier score for lesion {missing[0]!r}")
    x = np.stack([r.embedding for r in records]).astype(np.float64)
    scores = np.array([float(score_map[r.lesion_id][0]) for r in records])
    if injection == INJECT_FEATURE and use_scores:
        gate = scores
    else:
        gate = np.ones_like(scores)
    _, _, _, prob = kernels.gated_forward(
        x, gate, params.adapter_w, params.adapter_b, params.head_w, params.head_b,
        params.out_w, params.out_b,
    )
    for rec, p, s in zip(records, prob, scores):
        out.append((rec.lesion_id, float(p), float(s)))
    return out


# ---------------------------------------------------------------------------
# checkpoint format: one JSON document, row-major weight arrays


def save_model(params, cfg, path, optimizer=None):
    doc = {
        "format": "duckling-model-v1",
        "dims": {
            "input": params.input_dim,
            "adapter": params.adapter_dim,
            "head": params.head_dim,
        },
        "weights": {
            "adapter_w": params.adapter_w.tolist(),
            "adapter_b": params.adapter_b.tolist(),
            "head_w": params.head_w.tolist(),
            "head_b": params.head_b.tolist(),
            "out_w": params.out_w.tolist(),
            "out_b": params.out_b.tolist(),
        },
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "train_config": cfg.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Returns ``(params, cfg, optimizer_state_or_None)``."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "duckling-model-v1":
        raise ValidationError(f"{path}: not a model checkpoint")
    w = doc["weights"]
    params = ModelParams(
        adapter_w=np.asarray(w["adapter_w"], dtype=np.float64),
        adapter_b=np.asarray(w["adapter_b"], dtype=np.float64),
        head_w=np.asarray(w["head_w"], dtype=np.float64),
        head_b=np.asarray(w["head_b"], dtype=np.float64),
        out_w=np.asarray(w["out_w"], dtype=np.float64),
        out_b=np.asarray(w["out_b"], dtype=np.float64),
    )
    cfg = TrainConfig.from_dict(doc["train_config"])
    return params, cfg, doc.get("optimizer")


def write_history_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{repr(row['train_loss'])},{repr(row['val_loss'])},{repr(row['lr'])}\n"
            )
