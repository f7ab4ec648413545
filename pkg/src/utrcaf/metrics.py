"""Classical transferability and domain-discrepancy measurements.

These need information a source-free method never has (source features or
target labels); they serve as external validators of the channel ranking.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DimensionError, InputError
from .losses import LOG_FLOOR, clamped_log


class ConvergenceWarning(UserWarning):
    """An iterative estimator stopped at ``max_iter`` before meeting ``tol``."""


def _pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"column counts differ: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InputError("both samples must be nonempty")
    return A, B


def median_bandwidth(A: np.ndarray, B: np.ndarray) -> float:
    """Median pairwise distance over the pooled sample; 1.0 if all are zero."""
    pooled = np.vstack([A, B])
    d = pdist(pooled) if len(pooled) > 1 else np.zeros(1)
    med = float(np.median(d))
    return med if med > 0 else 1.0


def mmd(A: np.ndarray, B: np.ndarray, bandwidth: float | None = None) -> float:
    """Biased Gaussian-kernel MMD (the square root of the squared statistic)."""
    A, B = _pair(A, B)
    sigma = median_bandwidth(A, B) if bandwidth is None else float(bandwidth)
    gamma = 1.0 / (2.0 * sigma**2)
    kaa = np.exp(-gamma * cdist(A, A, "sqeuclidean")).mean()
    kbb = np.exp(-gamma * cdist(B, B, "sqeuclidean")).mean()
    kab = np.exp(-gamma * cdist(A, B, "sqeuclidean")).mean()
    return float(np.sqrt(max(kaa + kbb - 2.0 * kab, 0.0)))


def _logistic_fit(X: np.ndarray, y: np.ndarray, epochs: int, lr: float) -> tuple[np.ndarray, float]:
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        z = X @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        err = p - y
        w -= lr * (X.T @ err) / n
        b -= lr * err.mean()
    return w, b


def proxy_a_distance(
    A: np.ndarray,
    B: np.ndarray,
    rng: np.random.Generator,
    epochs: int = 200,
    lr: float = 0.1,
) -> float:
    """``2 (1 - 2 err)`` of a held-out linear domain classifier, clamped to [0, 2].

    Each domain is split 50/50 into train and test halves. Features are
    standardized with the training half's statistics, then a logistic
    regression is fit by full-batch gradient descent.
    """
    A, B = _pair(A, B)
    if len(A) < 2 or len(B) < 2:
        raise InputError("proxy A-distance needs at least 2 instances per domain")
    X = np.vstack([A, B])
    y = np.concatenate([np.zeros(len(A)), np.ones(len(B))])
    train, test = [], []
    for dom in (np.flatnonzero(y == 0), np.flatnonzero(y == 1)):
        order = rng.permutation(dom)
        half = len(order) // 2
        train.append(order[:half])
        test.append(order[half:])
    train = np.concatenate(train)
    test = np.concatenate(test)
    mu = X[train].mean(axis=0)
    sd = X[train].std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd
    w, b = _logistic_fit(Xs[train], y[train], epochs, lr)
    err = float(np.mean(((Xs[test] @ w + b) > 0).astype(float) != y[test]))
    return float(np.clip(2.0 * (1.0 - 2.0 * err), 0.0, 2.0))


def corresponding_angle(A: np.ndarray, B: np.ndarray, k: int = 10) -> float:
    """Mean |cosine| between matching right singular vectors of centered A and B.

    Singular vectors are only defined up to sign, so each pair is aligned to a
    nonnegative inner product. Only directions with nonzero singular value in
    both samples are compared; at most ``k`` of them.
    """
    A, B = _pair(A, B)
    _, sa, va = np.linalg.svd(A - A.mean(axis=0), full_matrices=False)
    _, sb, vb = np.linalg.svd(B - B.mean(axis=0), full_matrices=False)
    tol_a = sa.max(initial=0.0) * max(A.shape) * np.finfo(float).eps
    tol_b = sb.max(initial=0.0) * max(B.shape) * np.finfo(float).eps
    rank = min(int((sa > tol_a).sum()), int((sb > tol_b).sum()))
    m = min(k, rank)
    if m < 1:
        return 0.0
    if m < k:
        warnings.warn(f"corresponding_angle: only {m} of {k} directions available", RuntimeWarning, stacklevel=2)
    cos = np.abs((va[:m] * vb[:m]).sum(axis=1))
    return float(np.clip(cos.mean(), -1.0, 1.0))


def leep(source_probs: np.ndarray, target_labels: np.ndarray, num_target_classes: int | None = None) -> float:
    """Log expected empirical prediction."""
    theta = np.asarray(source_probs, dtype=np.float64)
    y = np.asarray(target_labels, dtype=np.int64)
    if theta.ndim != 2 or len(y) != theta.shape[0]:
        raise DimensionError("source_probs and target_labels disagree in length")
    n = len(y)
    kt = num_target_classes or int(y.max()) + 1
    joint = np.zeros((kt, theta.shape[1]))
    np.add.at(joint, y, theta)
    joint /= n
    marginal = joint.sum(axis=0)
    cond = np.divide(joint, marginal, out=np.zeros_like(joint), where=marginal > 0)
    eep = (theta * cond[y]).sum(axis=1)
    return float(min(clamped_log(eep).mean(), 0.0))


def nce(source_hard: np.ndarray, target_labels: np.ndarray) -> float:
    """Negative conditional entropy ``-H(Y | Z)`` from the empirical joint."""
    z = np.asarray(source_hard, dtype=np.int64)
    y = np.asarray(target_labels, dtype=np.int64)
    if z.shape != y.shape:
        raise DimensionError("source_hard and target_labels differ in length")
    joint = np.zeros((int(z.max()) + 1, int(y.max()) + 1))
    np.add.at(joint, (z, y), 1.0)
    joint /= len(z)
    pz = joint.sum(axis=1, keepdims=True)
    cond = np.divide(joint, pz, out=np.zeros_like(joint), where=pz > 0)
    mask = joint > 0
    h = -(joint[mask] * np.log(cond[mask])).sum()
    return float(-max(h, 0.0))


def _class_evidence(y: np.ndarray, s: np.ndarray, v: np.ndarray, proj: np.ndarray, F: np.ndarray,
                    max_iter: int, tol: float) -> tuple[float, bool]:
    n, q = F.shape
    alpha, beta = 1.0, 1.0
    converged = False
    for _ in range(max_iter):
        gamma = (beta * s / (alpha + beta * s)).sum()
        m = v.T @ (beta * proj / (alpha + beta * s))
        alpha_new = gamma / ((m * m).sum() + LOG_FLOOR)
        residual = ((y - F @ m) ** 2).sum()
        beta_new = (n - gamma) / (residual + LOG_FLOOR)
        delta = abs(alpha_new - alpha) + abs(beta_new - beta)
        alpha, beta = alpha_new, beta_new
        if delta < tol:
            converged = True
            break
    m = v.T @ (beta * proj / (alpha + beta * s))
    residual = ((y - F @ m) ** 2).sum()
    evidence = (
        0.5 * q * np.log(alpha)
        + 0.5 * n * np.log(beta)
        - 0.5 * np.log(alpha + beta * s).sum()
        - 0.5 * beta * residual
        - 0.5 * alpha * (m * m).sum()
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    return float(evidence), converged


def logme(features: np.ndarray, labels: np.ndarray, max_iter: int = 1000, tol: float = 1e-6) -> float:
    """Per-instance log maximum evidence of one-vs-all Bayesian linear regression.

    For each class the prior precision ``alpha`` and noise precision ``beta``
    are found by the MacKay fixed-point iteration, using the eigen-decomposition
    of ``F^T F``. The returned value is the class-averaged log evidence divided
    by ``n``. A :class:`ConvergenceWarning` is emitted if any class stops at
    ``max_iter``; the last iterate is used.
    """
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if F.ndim != 2 or len(y) != F.shape[0]:
        raise DimensionError("features and labels disagree in length")
    n, q = F.shape
    _, sv, v = np.linalg.svd(F, full_matrices=False)
    s = np.zeros(q)
    s[: len(sv)] = sv**2
    if len(sv) < q:
        # complete the basis so that zero eigenvalues still enter log|A|
        _, _, vfull = np.linalg.svd(F, full_matrices=True)
        v = vfull
    total = 0.0
    all_converged = True
    classes = np.arange(int(y.max()) + 1)
    for k in classes:
        target = (y == k).astype(np.float64)
        proj = v @ (F.T @ target)
        ev, ok = _class_evidence(target, s, v, proj, F, max_iter, tol)
        total += ev / n
        all_converged &= ok
    if not all_converged:
        warnings.warn(f"LogME did not reach tol={tol} within {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    return total / len(classes)
