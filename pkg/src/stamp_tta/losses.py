"""Entropy-based objectives over logits, with closed-form logit gradients.

Every loss here maps a logit matrix (batch, classes) to a scalar together
with the exact gradient w.r.t. the logits, so the network backward pass can
be seeded without any autodiff machinery. Entropies use the natural log.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import NumericalError

# Probabilities below this are clamped before the log; keeps 0*log(0) at 0
# without poisoning gradients.
_P_FLOOR = 1e-300


class WeightStrategy(Enum):
    """How per-sample entropies are weighted when averaged into a loss."""

    PLAIN = "plain"
    SELF_WEIGHTED = "self"
    STATIC_WEIGHTED = "static"
    EATA_WEIGHTED = "eata"


def softmax(logits):
    """Row-wise softmax of a logit vector or matrix, max-shifted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericalError("softmax input contains non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs):
    """Shannon entropy in nats of a distribution vector, or of each row.

    Entries are clamped to >= 1e-300 inside the log so degenerate
    distributions score 0 instead of NaN.
    """
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < -1e-12):
        raise ValueError("probabilities must be non-negative")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    return -(p * np.log(np.maximum(p, _P_FLOOR))).sum(axis=-1)


def _rows_p_h(logits):
    """Softmax rows, their log, and per-row entropy for a 2-d logit array."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("expected a (batch, classes) logit matrix")
    if z.shape[0] < 1:
        raise ValueError("empty batch")
    p = softmax(z)
    logp = np.log(np.maximum(p, _P_FLOOR))
    h = -(p * logp).sum(axis=1)
    return p, logp, h


def _chain_to_logits(dl_dh, p, logp, h):
    # dH/dz_k = -p_k (log p_k + H), row-wise; scale by the scalar dL/dH_i.
    return dl_dh[:, None] * (-p * (logp + h[:, None]))


def self_weighted_entropy_loss(logits):
    """Entropy average weighted by normalized exp(-H), weights inside the gradient.

    L = sum_i s_i H_i with s = softmax(-H). Low-entropy rows dominate both the
    value and the update direction; the weight's dependence on H is kept in
    the differentiation path, which yields dL/dH_k = s_k (1 - H_k + L).
    """
    p, logp, h = _rows_p_h(logits)
    s = softmax(-h)
    value = float(np.dot(s, h))
    dl_dh = s * (1.0 - h + value)
    return value, _chain_to_logits(dl_dh, p, logp, h)


def weighted_entropy_loss(logits, strategy, h_thr=None):
    """Dispatch over the entropy-weighting variants.

    PLAIN: unweighted mean entropy. SELF_WEIGHTED: see
    self_weighted_entropy_loss. STATIC_WEIGHTED: same normalized exp(-H)
    weights but treated as constants, so dL/dH_k = s_k. EATA_WEIGHTED: mean of
    exp(h_thr - H_i) * H_i with the weight treated as constant; needs h_thr.
    Returns (scalar, gradient w.r.t. logits).
    """
    strategy = WeightStrategy(strategy)
    if strategy is WeightStrategy.SELF_WEIGHTED:
        return self_weighted_entropy_loss(logits)
    p, logp, h = _rows_p_h(logits)
    n = h.shape[0]
    if strategy is WeightStrategy.PLAIN:
        value = float(h.mean())
        dl_dh = np.full(n, 1.0 / n)
    elif strategy is WeightStrategy.STATIC_WEIGHTED:
        s = softmax(-h)
        value = float(np.dot(s, h))
        dl_dh = s
    elif strategy is WeightStrategy.EATA_WEIGHTED:
        if h_thr is None:
            raise ValueError("EATA weighting requires h_thr")
        w = np.exp(float(h_thr) - h)
        value = float(np.mean(w * h))
        dl_dh = w / n
    else:  # pragma: no cover
        raise ValueError(f"unknown strategy {strategy}")
    return value, _chain_to_logits(dl_dh, p, logp, h)


def make_entropy_objective(strategy, h_thr=None):
    """Bind a weighting strategy into a logits -> (value, grad) callable."""
    strategy = WeightStrategy(strategy)
    if strategy is WeightStrategy.EATA_WEIGHTED and h_thr is None:
        raise ValueError("EATA weighting requires h_thr")

    def objective(logits):
        return weighted_entropy_loss(logits, strategy, h_thr)

    return objective


def cross_entropy_loss(logits, labels):
    """Mean negative log-likelihood of integer labels; returns (value, dlogits)."""
    p, logp, _ = _rows_p_h(logits)
    y = np.asarray(labels)
    n, c = p.shape
    if y.shape != (n,):
        raise ValueError("labels must be a vector matching the batch")
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError("label out of range")
    value = float(-logp[np.arange(n), y].mean())
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    return value, grad / n
