"""NumPy implementations of the numeric kernels.

This module is the reference for the compiled extension in ``_fast.pyx``:
both expose the same four functions with identical semantics, and the test
suite checks them against each other. It is also the fallback used when the
extension has not been built.

Conventions shared by both backends:

* all arrays are C-contiguous float64;
* cosine ratios are clamped to [-1, 1] before forming distances, so a
  distance is never negative and identical vectors give exactly 0;
* distance matrices are exactly symmetric with an exactly zero diagonal
  (only the upper triangle is computed, then mirrored);
* ReLU backward masks on the post-activation value (slope 0 at the kink);
* the gate multiplies features elementwise, so a zero gate annihilates the
  gradient of everything upstream of it exactly.
"""

import numpy as np


def cosine_distance_matrix(emb):
    """Pairwise cosine distances, 1 - (a.b)/(|a||b|), for rows of ``emb``.

    Parameters
    ----------
    emb : ndarray, shape (n, d)
        One embedding per row. Every row must have a nonzero norm; callers
        are expected to check this and raise a domain error first.

    Returns
    -------
    ndarray, shape (n, n)
        Symmetric matrix with zero diagonal.
    """
    emb = np.ascontiguousarray(emb, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", emb, emb))
    cos = (emb @ emb.T) / np.outer(norms, norms)
    np.clip(cos, -1.0, 1.0, out=cos)
    upper = np.triu(1.0 - cos, k=1)
    return upper + upper.T


def mean_offdiagonal(dist):
    """Per-row mean of a square matrix excluding the diagonal entry.

    ``dist`` must have a zero diagonal (a property of the distance matrices
    produced above), which lets the sum run over the full row.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    n = dist.shape[0]
    return dist.sum(axis=1) / (n - 1)


def gated_forward(x, gate, adapter_w, adapter_b, head_w, head_b, out_w, out_b):
    """Forward pass of the gated classifier stack for a batch.

    adapter:  a = relu(x W_a^T + b_a)
    head:     h = relu(a W_h^T + b_h)
    gate:     g = gate * h        (elementwise per record)
    output:   p = sigmoid(g . w_o + b_o)

    Returns ``(adapter_out, head_out, gated, prob)``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    gate = np.ascontiguousarray(gate, dtype=np.float64)
    adapter_out = np.maximum(x @ adapter_w.T + adapter_b, 0.0)
    head_out = np.maximum(adapter_out @ head_w.T + head_b, 0.0)
    gated = gate[:, None] * head_out
    logit = gated @ out_w + out_b
    prob = _sigmoid(logit)
    return adapter_out, head_out, gated, prob


def gated_backward(
    x,
    gate,
    y,
    sample_w,
    adapter_w,
    head_w,
    out_w,
    adapter_out,
    head_out,
    gated,
    prob,
    gamma,
    alpha,
):
    """Focal loss and its exact gradients for one batch.

    ``sample_w`` are per-record loss weights; the returned loss is
    ``sum_i sample_w[i] * focal(y[i], prob[i])`` and all gradients are of
    that weighted sum.

    Returns
    -------
    tuple
        ``(loss, g_adapter_w, g_adapter_b, g_head_w, g_head_b, g_out_w,
        g_out_b, d_head_out, d_gated)`` where ``d_gated`` is the gradient
        at the gated features and ``d_head_out = gate * d_gated`` is the
        gradient delivered to the head output through the gate.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    sample_w = np.ascontiguousarray(sample_w, dtype=np.float64)

    p_t = np.where(y == 1.0, prob, 1.0 - prob)
    p_t = np.clip(p_t, 1e-12, 1.0 - 1e-12)
    one_minus = 1.0 - p_t
    loss = float(np.sum(sample_w * (-alpha) * one_minus**gamma * np.log(p_t)))

    # d(focal)/d(p_t), then back through p_t = p or 1-p and the sigmoid.
    dl_dpt = alpha * (gamma * one_minus ** (gamma - 1.0) * np.log(p_t) - one_minus**gamma / p_t)
    sign = np.where(y == 1.0, 1.0, -1.0)
    dz = sample_w * dl_dpt * sign * prob * (1.0 - prob)

    g_out_w = gated.T @ dz
    g_out_b = np.array([dz.sum()])
    d_gated = dz[:, None] * out_w[None, :]
    d_head_out = gate[:, None] * d_gated

    d_pre_head = d_head_out * (head_out > 0.0)
    g_head_w = d_pre_head.T @ adapter_out
    g_head_b = d_pre_head.sum(axis=0)

    d_adapter = d_pre_head @ head_w
    d_pre_adapter = d_adapter * (adapter_out > 0.0)
    g_adapter_w = d_pre_adapter.T @ x
    g_adapter_b = d_pre_adapter.sum(axis=0)

    return (
        loss,
        g_adapter_w,
        g_adapter_b,
        g_head_w,
        g_head_b,
        g_out_w,
        g_out_b,
        d_head_out,
        d_gated,
    )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
