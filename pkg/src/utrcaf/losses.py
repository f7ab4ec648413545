"""Loss primitives and their gradients.

Every probability-based loss is exposed twice: ``loss_*`` returns the scalar
value and ``grad_*`` returns its gradient with respect to the *logits* that
produced ``probs`` (through the softmax). Gradients are assembled from the
quantity ``w = probs * dL/dprobs`` so that no division by a probability is
ever needed; the softmax Jacobian then gives ``dL/dlogits = w - probs * sum(w)``.

All logarithms use the clamp ``log(max(p, 1e-12))``, whose derivative is taken
to be zero below the floor.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, LabelError

LOG_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def clamped_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, LOG_FLOOR, 1.0))


def _active(p: np.ndarray) -> np.ndarray:
    return (p > LOG_FLOOR).astype(np.float64)


def _softmax_backward(probs: np.ndarray, w: np.ndarray) -> np.ndarray:
    return w - probs * w.sum(axis=-1, keepdims=True)


def _check_labels(labels: np.ndarray, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise LabelError(f"label {bad} outside [0, {k})")
    return labels.astype(np.int64)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = _check_labels(labels, len(labels), num_classes)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def smooth_targets(labels: np.ndarray, num_classes: int, epsilon: float) -> np.ndarray:
    return (1.0 - epsilon) * one_hot(labels, num_classes) + epsilon / num_classes


# -- cross-entropy family --------------------------------------------------


def soft_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over rows of ``-sum_k t_k log p_k`` for arbitrary target rows."""
    return float(-(targets * clamped_log(probs)).sum(axis=1).mean())


def grad_soft_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    n = probs.shape[0]
    w = -targets * _active(probs) / n
    return _softmax_backward(probs, w)


def cross_entropy_ls(probs: np.ndarray, labels: np.ndarray, epsilon: float = 0.0) -> float:
    """Cross-entropy against label-smoothed one-hot targets.

    >>> round(cross_entropy_ls(np.array([[0.9, 0.1]]), np.array([0]), 0.1), 5)
    0.21522
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    probs = np.asarray(probs, dtype=np.float64)
    _check_labels(labels, probs.shape[0], probs.shape[1])
    return soft_cross_entropy(probs, smooth_targets(labels, probs.shape[1], epsilon))


def grad_cross_entropy_ls(probs: np.ndarray, labels: np.ndarray, epsilon: float = 0.0) -> np.ndarray:
    _check_labels(labels, probs.shape[0], probs.shape[1])
    return grad_soft_cross_entropy(probs, smooth_targets(labels, probs.shape[1], epsilon))


def loss_adapt(probs: np.ndarray, pseudo: np.ndarray) -> float:
    """Plain cross-entropy against hard pseudo-labels."""
    return cross_entropy_ls(probs, pseudo, 0.0)


def grad_loss_adapt(probs: np.ndarray, pseudo: np.ndarray) -> np.ndarray:
    return grad_cross_entropy_ls(probs, pseudo, 0.0)


# -- semantic calibration ----------------------------------------------------


def _risk_index(risk_set, n: int) -> np.ndarray:
    idx = np.asarray(list(risk_set) if not isinstance(risk_set, np.ndarray) else risk_set, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"risk index outside [0, {n})")
    return idx


def loss_forget(probs: np.ndarray, labels: np.ndarray, risk_set) -> float:
    """Negative cross-entropy, averaged over the risk instances only.

    Minimizing this pushes probability mass away from the inferred label.
    Returns 0 for an empty risk set.
    """
    probs = np.asarray(probs, dtype=np.float64)
    idx = _risk_index(risk_set, probs.shape[0])
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    if idx.size == 0:
        return 0.0
    return float(clamped_log(probs[idx, labels[idx]]).mean())


def grad_loss_forget(probs: np.ndarray, labels: np.ndarray, risk_set) -> np.ndarray:
    idx = _risk_index(risk_set, probs.shape[0])
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    w = np.zeros_like(probs)
    if idx.size:
        picked = probs[idx, labels[idx]]
        # duplicates in risk_set accumulate, matching the value's mean
        np.add.at(w, (idx, labels[idx]), _active(picked) / idx.size)
    return _softmax_backward(probs, w)


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row, with ``0 log 0 = 0``."""
    probs = np.asarray(probs, dtype=np.float64)
    return -(probs * clamped_log(probs)).sum(axis=1)


def loss_discover(probs: np.ndarray) -> float:
    """Mean prediction entropy over all rows; lies in ``[0, ln K]``."""
    return float(entropy_rows(probs).mean())


def grad_loss_discover(probs: np.ndarray) -> np.ndarray:
    n = probs.shape[0]
    # d/dp of -p log(clamp p) is -(log clamp p + [p > floor])
    w = -probs * (clamped_log(probs) + _active(probs)) / n
    return _softmax_backward(probs, w)


def loss_div(probs: np.ndarray) -> float:
    """KL divergence of the batch-mean prediction from the uniform distribution."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1]
    mean = probs.mean(axis=0)
    return float((mean * (clamped_log(mean) + np.log(k))).sum())


def grad_loss_div(probs: np.ndarray) -> np.ndarray:
    n, k = probs.shape
    mean = probs.mean(axis=0)
    dmean = clamped_log(mean) + np.log(k) + _active(mean)
    w = probs * dmean[None, :] / n
    return _softmax_backward(probs, w)


# -- distillation ------------------------------------------------------------


def q_weight(utr_d: np.ndarray) -> np.ndarray:
    """Channel weights ``sigmoid(-u)``: low uncertainty gets weight near 1."""
    u = np.asarray(utr_d, dtype=np.float64)
    # 1 / (1 + e^u), evaluated without overflow for large |u|
    out = np.empty_like(u)
    pos = u >= 0
    e = np.exp(-u[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(u[~pos]))
    return out


def _check_kd(source_feats, target_feats, weights):
    s = np.asarray(source_feats, dtype=np.float64)
    t = np.asarray(target_feats, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2 or w.shape != (s.shape[1],):
        raise DimensionError(
            f"distillation shapes disagree: source {s.shape}, target {t.shape}, weights {w.shape}"
        )
    return s, t, w


def loss_kd(source_feats: np.ndarray, target_feats: np.ndarray, weights: np.ndarray) -> float:
    """Mean over instances of ``||weights * (source - target)||^2``."""
    s, t, w = _check_kd(source_feats, target_feats, weights)
    return float(((w * (s - t)) ** 2).sum(axis=1).mean())


def grad_loss_kd(source_feats: np.ndarray, target_feats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient with respect to ``target_feats``."""
    s, t, w = _check_kd(source_feats, target_feats, weights)
    return -2.0 * w**2 * (s - t) / s.shape[0]
