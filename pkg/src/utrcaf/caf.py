"""Source-free adaptation with uncertainty-guided calibration.

Global epochs alternate. Even epochs calibrate: the target encoder is pulled
toward the source encoder on transferable channels (distillation weighted by
``sigmoid(-UTR_D)``), pushed away from its current guess on high-risk
instances (forget) and toward confident predictions everywhere (discover).
Odd epochs adapt: cross-entropy against SHOT-style centroid pseudo-labels.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses
from .errors import ConfigError, DivergenceError, InputError
from .io import write_csv, write_json
from .model import (
    Dataset,
    ModelParams,
    MomentumSGD,
    TrainConfig,
    backward,
    batches,
    classify,
    encode,
    forward,
    predict,
    save_params,
)
from .rng import stream
from .utr import PerturbationConfig, RiskThreshold, channel_ud, select_risk, utr_domain, utr_instance

CALIBRATION = "calibration"
ADAPTATION = "adaptation"


@dataclass(frozen=True)
class CafConfig:
    perturb: PerturbationConfig = field(default_factory=PerturbationConfig)
    thr: RiskThreshold = field(default_factory=RiskThreshold)
    lambda0: float = 10.0
    lambda_cutoff_epoch: int = 10
    gamma: float = 0.9
    div_weight: float = 0.0
    # weight of the entropy term; 0 gives the adaptation-only ablation
    discover_weight: float = 1.0
    mixup_alpha: float = 0.3
    freeze_classifier: bool = True
    # distillation at lambda0=10 diverges at the source-training rate of 0.01
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.001))
    max_epochs: int = 20

    def __post_init__(self):
        for name in ("lambda0", "gamma", "div_weight", "discover_weight", "mixup_alpha"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"caf.{name} must be nonnegative, got {getattr(self, name)}")
        if self.lambda_cutoff_epoch < 0:
            raise ConfigError(f"caf.lambda_cutoff_epoch must be nonnegative, got {self.lambda_cutoff_epoch}")
        if self.max_epochs < 2:
            raise ConfigError(f"caf.max_epochs must be >= 2, got {self.max_epochs}")
        if self.lambda_cutoff_epoch > self.max_epochs:
            raise ConfigError(
                f"caf.lambda_cutoff_epoch ({self.lambda_cutoff_epoch}) exceeds caf.max_epochs ({self.max_epochs})"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdaptationState:
    target_params: ModelParams
    epoch: int
    utr_d_source: np.ndarray
    pseudo_labels: np.ndarray
    risk_set: np.ndarray
    loss_history: list[tuple[int, str, str, float]] = field(default_factory=list)

    def record(self, phase: str, name: str, value: float) -> None:
        self.loss_history.append((self.epoch, phase, name, float(value)))


def lambda_schedule(epoch: int, cfg: CafConfig) -> float:
    """Step schedule: ``lambda0`` before the cutoff epoch, 0 from it on."""
    if epoch < 0:
        raise ConfigError(f"epoch must be nonnegative, got {epoch}")
    return float(cfg.lambda0) if epoch < cfg.lambda_cutoff_epoch else 0.0


# -- pseudo-labels -----------------------------------------------------------


def _distances(feats: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Cosine distance, or Euclidean for rows (or centroids) of zero norm."""
    fn = np.linalg.norm(feats, axis=1)
    cn = np.linalg.norm(centroids, axis=1)
    safe_f = np.where(fn > 0, fn, 1.0)
    safe_c = np.where(cn > 0, cn, 1.0)
    cos = 1.0 - (feats / safe_f[:, None]) @ (centroids / safe_c[:, None]).T
    eucl = np.sqrt(((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2))
    bad_rows = fn == 0
    if bad_rows.any() or (cn == 0).any():
        cos[bad_rows] = eucl[bad_rows]
        cos[:, cn == 0] = eucl[:, cn == 0]
    return cos


def centroid_labels(z: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Soft centroids, nearest-centroid assignment, hard centroids, reassignment.

    ``z`` are features (a constant 1 is appended here) and ``probs`` the
    model's class probabilities. A class left empty after the first
    assignment keeps its soft centroid.
    """
    k = probs.shape[1]
    feats = np.hstack([z, np.ones((len(z), 1))])
    mass = probs.sum(axis=0)
    centroids = (probs.T @ feats) / np.where(mass > 0, mass, 1.0)[:, None]
    labels = _distances(feats, centroids).argmin(axis=1)
    onehot = losses.one_hot(labels, k)
    counts = onehot.sum(axis=0)
    filled = counts > 0
    centroids[filled] = (onehot.T @ feats)[filled] / counts[filled, None]
    return _distances(feats, centroids).argmin(axis=1).astype(np.int64)


def pseudo_label(params: ModelParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid pseudo-labels from the encoder output, plus the model's softmax."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("pseudo_label needs at least one instance")
    z = encode(params, X)
    probs = losses.softmax(classify(params, z))
    return centroid_labels(z, probs), probs


def mixup_batch(
    X: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    lam: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of each row with a shuffled partner.

    ``targets`` are one-hot (or soft) rows. ``lam`` overrides the
    ``Beta(alpha, alpha)`` draw; the permutation is always drawn.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(X) < 2:
        raise InputError("mixup needs a batch of at least 2 rows")
    if lam is None:
        if not alpha > 0:
            raise ConfigError(f"mixup alpha must be positive, got {alpha}")
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(X))
    return lam * X + (1.0 - lam) * X[perm], lam * targets + (1.0 - lam) * targets[perm]


# -- epochs ------------------------------------------------------------------


def _trainable(params: ModelParams, cfg: CafConfig) -> list[bool]:
    n_enc = params.num_encoder_arrays()
    return [True] * n_enc + [not cfg.freeze_classifier] * 2


def _check_finite(value: float, epoch: int, batch: int, lr: float) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {batch} (learning_rate={lr})")


def calibration_objective(
    target_params: ModelParams,
    source_z: np.ndarray,
    X: np.ndarray,
    inferred: np.ndarray,
    risk_rows: np.ndarray,
    weights: np.ndarray,
    lam: float,
    cfg: CafConfig,
) -> tuple[dict[str, float], list[np.ndarray]]:
    """Loss terms and parameter gradients of one calibration batch.

    ``risk_rows`` index into the batch; ``inferred`` holds the batch's
    inferred labels used by the forget term.
    """
    fwd = forward(target_params, X)
    p = fwd.probs
    terms = {
        "kd": losses.loss_kd(source_z, fwd.z, weights),
        "forget": losses.loss_forget(p, inferred, risk_rows),
        "discover": losses.loss_discover(p),
        "div": losses.loss_div(p),
    }
    terms["total"] = (
        lam * terms["kd"]
        + cfg.gamma * terms["forget"]
        + cfg.discover_weight * terms["discover"]
        + cfg.div_weight * terms["div"]
    )
    dlogits = (
        cfg.gamma * losses.grad_loss_forget(p, inferred, risk_rows)
        + cfg.discover_weight * losses.grad_loss_discover(p)
        + cfg.div_weight * losses.grad_loss_div(p)
    )
    dz = lam * losses.grad_loss_kd(source_z, fwd.z, weights)
    return terms, backward(target_params, fwd, dlogits=dlogits, dz=dz)


def calibration_epoch(
    state: AdaptationState,
    source_params: ModelParams,
    target_data: Dataset,
    cfg: CafConfig,
) -> AdaptationState:
    """One pass of distillation plus forget/discover over the target set.

    Semantics and the instance-level risk come from the source model in
    epoch 0 and from the current target model afterwards. Both are computed
    once for the whole target set at the start of the epoch.
    """
    X = target_data.features
    n = len(X)
    epoch = state.epoch
    infer_model = source_params if epoch == 0 else state.target_params
    inferred = predict(infer_model, X)
    utr_i = utr_instance(channel_ud(infer_model, X, cfg.perturb))
    risk = select_risk(utr_i, cfg.thr)
    in_risk = np.zeros(n, dtype=bool)
    in_risk[risk] = True
    source_z = encode(source_params, X)
    weights = losses.q_weight(state.utr_d_source)
    lam = lambda_schedule(epoch, cfg)

    params = state.target_params
    opt = MomentumSGD(cfg.train.learning_rate, cfg.train.momentum)
    trainable = _trainable(params, cfg)
    sums: dict[str, float] = {}
    order = batches(n, cfg.train.batch_size, stream(cfg.train.seed, "caf-batches", epoch))
    for b, idx in enumerate(order):
        terms, grads = calibration_objective(
            params, source_z[idx], X[idx], inferred[idx], np.flatnonzero(in_risk[idx]), weights, lam, cfg
        )
        _check_finite(terms["total"], epoch, b, cfg.train.learning_rate)
        params = opt.step(params, grads, trainable)
        for name, value in terms.items():
            sums[name] = sums.get(name, 0.0) + value * len(idx)

    state = replace(state, target_params=params, risk_set=risk, loss_history=list(state.loss_history))
    state.record(CALIBRATION, "lambda", lam)
    for name in ("kd", "forget", "discover", "div", "total"):
        state.record(CALIBRATION, name, sums[name] / n)
    state.record(CALIBRATION, "risk_size", risk.size)
    return state


def adaptation_epoch(state: AdaptationState, target_data: Dataset, cfg: CafConfig) -> AdaptationState:
    """Pseudo-label once, then one step of cross-entropy per batch."""
    X = target_data.features
    n = len(X)
    epoch = state.epoch
    params = state.target_params
    pseudo, _ = pseudo_label(params, X)
    k = params.arch.num_classes
    opt = MomentumSGD(cfg.train.learning_rate, cfg.train.momentum)
    trainable = _trainable(params, cfg)
    mix_rng = stream(cfg.train.seed, "caf-mixup", epoch)
    total = 0.0
    order = batches(n, cfg.train.batch_size, stream(cfg.train.seed, "caf-batches", epoch))
    for b, idx in enumerate(order):
        xb = X[idx]
        if cfg.mixup_alpha > 0 and len(idx) >= 2:
            xb, targets = mixup_batch(xb, losses.one_hot(pseudo[idx], k), cfg.mixup_alpha, mix_rng)
            fwd = forward(params, xb)
            loss = losses.soft_cross_entropy(fwd.probs, targets)
            dlogits = losses.grad_soft_cross_entropy(fwd.probs, targets)
        else:
            fwd = forward(params, xb)
            loss = losses.loss_adapt(fwd.probs, pseudo[idx])
            dlogits = losses.grad_loss_adapt(fwd.probs, pseudo[idx])
        _check_finite(loss, epoch, b, cfg.train.learning_rate)
        params = opt.step(params, backward(params, fwd, dlogits=dlogits), trainable)
        total += loss * len(idx)

    state = replace(state, target_params=params, pseudo_labels=pseudo, loss_history=list(state.loss_history))
    state.record(ADAPTATION, "adapt", total / n)
    return state


def run_caf(
    source_params: ModelParams,
    target_data: Dataset,
    cfg: CafConfig,
    on_epoch=None,
) -> AdaptationState:
    """Alternate calibration (even epochs) and adaptation (odd epochs).

    ``UTR_D`` of the source model on the target set is computed once before
    the loop. ``on_epoch(state)`` is called after every epoch if given.
    """
    X = target_data.features
    if X.shape[1] != source_params.arch.input_dim:
        raise InputError(f"target has {X.shape[1]} features, model expects {source_params.arch.input_dim}")
    utr_d = utr_domain(channel_ud(source_params, X, cfg.perturb, model_tag="source"))
    state = AdaptationState(
        target_params=source_params.copy(),
        epoch=0,
        utr_d_source=utr_d,
        pseudo_labels=predict(source_params, X),
        risk_set=np.zeros(0, dtype=np.int64),
    )
    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        if epoch % 2 == 0:
            state = calibration_epoch(state, source_params, target_data, cfg)
        else:
            state = adaptation_epoch(state, target_data, cfg)
        if on_epoch is not None:
            on_epoch(state)
    state.epoch = cfg.max_epochs
    return state


# -- persistence -------------------------------------------------------------


def save_history(history, path: str | os.PathLike) -> None:
    write_csv(path, ["epoch", "phase", "loss_name", "value"], [list(row) for row in history])


def save_state(state: AdaptationState, cfg: CafConfig, params_path, sidecar_path) -> None:
    save_params(state.target_params, params_path)
    write_json(
        sidecar_path,
        {"epoch": state.epoch, "risk_set": [int(i) for i in state.risk_set], "config": cfg.to_dict()},
    )
