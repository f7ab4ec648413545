"""MLP encoder with a weight-normalized linear classifier.

The encoder ``h`` maps ``R^p -> R^d`` through hidden layers with a nonlinearity
and a final *linear* bottleneck layer. The classifier computes
``logit_k = g_k * (v_k . z) / ||v_k||`` without a bias.

Weights are stored as ``(fan_in, fan_out)`` so that a layer computes
``x @ W + b``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import losses
from .errors import ConfigError, DimensionError, DivergenceError, InputError, InvalidParameterError, ParseError
from .io import write_json
from .rng import stream

Activation = Literal["relu", "tanh"]
NoiseMode = Literal["per_parameter", "scalar"]


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64,)
    bottleneck_dim: int = 32
    num_classes: int = 2
    activation: Activation = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"arch.input_dim must be >= 1, got {self.input_dim}")
        if self.bottleneck_dim < 2:
            raise ConfigError(f"arch.bottleneck_dim must be >= 2, got {self.bottleneck_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"arch.num_classes must be >= 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"arch.hidden_dims must be positive, got {list(self.hidden_dims)}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"arch.activation must be 'relu' or 'tanh', got {self.activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.bottleneck_dim]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 50
    label_smoothing: float = 0.1
    seed: int = 0
    # rescale bottleneck channels to unit RMS on the training data after fitting
    normalize_bottleneck: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"train.learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"train.momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be nonnegative, got {self.epochs}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"train.label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.seed < 0:
            raise ConfigError(f"train.seed must be unsigned, got {self.seed}")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    name: str = "data"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DimensionError(f"features must be a nonempty 2-D matrix, got shape {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise InputError(f"dataset {self.name!r} contains non-finite features")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise DimensionError(
                    f"{self.features.shape[0]} rows but {self.labels.shape[0]} labels in {self.name!r}"
                )
            if self.labels.size and self.labels.min() < 0:
                raise InputError(f"negative label in {self.name!r}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise InputError(f"dataset {self.name!r} has no labels")
        return self.labels


@dataclass
class ModelParams:
    encoder_layers: list[tuple[np.ndarray, np.ndarray]]
    classifier_direction: np.ndarray
    classifier_scale: np.ndarray
    arch: ArchitectureSpec = field(repr=False)

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        if len(self.encoder_layers) != len(sizes) - 1:
            raise DimensionError(f"expected {len(sizes) - 1} encoder layers, got {len(self.encoder_layers)}")
        layers = []
        for i, (w, b) in enumerate(self.encoder_layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} do not fit {sizes}")
            layers.append((w, b))
        self.encoder_layers = layers
        self.classifier_direction = np.asarray(self.classifier_direction, dtype=np.float64)
        self.classifier_scale = np.asarray(self.classifier_scale, dtype=np.float64)
        k, d = self.arch.num_classes, self.arch.bottleneck_dim
        if self.classifier_direction.shape != (k, d) or self.classifier_scale.shape != (k,):
            raise DimensionError(
                f"classifier shapes {self.classifier_direction.shape}/{self.classifier_scale.shape}, expected ({k}, {d})/({k},)"
            )

    # Flat views in a fixed order: W0, b0, W1, b1, ..., v, g
    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.encoder_layers:
            out += [w, b]
        return out + [self.classifier_direction, self.classifier_scale]

    def with_arrays(self, arrays: list[np.ndarray]) -> ModelParams:
        n = len(self.encoder_layers)
        layers = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(n)]
        return ModelParams(layers, arrays[2 * n], arrays[2 * n + 1], self.arch)

    def copy(self) -> ModelParams:
        return self.with_arrays([a.copy() for a in self.arrays()])

    def num_encoder_arrays(self) -> int:
        return 2 * len(self.encoder_layers)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> ModelParams:
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i : i + a.size], dtype=np.float64).reshape(a.shape).copy())
            i += a.size
        return self.with_arrays(out)


# -- construction ------------------------------------------------------------


def init_params(arch: ArchitectureSpec, seed: int) -> ModelParams:
    """Kaiming-uniform weights scaled by fan-in; classifier scale g = ||v||."""
    rng = stream(seed, "init")
    sizes = arch.layer_sizes
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=fan_out)
        layers.append((w, b))
    bound = np.sqrt(6.0 / arch.bottleneck_dim)
    v = rng.uniform(-bound, bound, size=(arch.num_classes, arch.bottleneck_dim))
    g = np.linalg.norm(v, axis=1)
    return ModelParams(layers, v, g, arch)


# -- forward / backward ----------------------------------------------------


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(x, 0.0) if kind == "relu" else np.tanh(x)


def _act_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    return (pre > 0).astype(np.float64) if kind == "relu" else 1.0 - post**2


def _check_input(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.arch.input_dim:
        raise DimensionError(f"expected input with {params.arch.input_dim} columns, got shape {X.shape}")
    return X


def _encode_cached(params: ModelParams, X: np.ndarray):
    X = _check_input(params, X)
    kind = params.arch.activation
    inputs, pres = [], []
    a = X
    last = len(params.encoder_layers) - 1
    for i, (w, b) in enumerate(params.encoder_layers):
        inputs.append(a)
        pre = a @ w + b
        pres.append(pre)
        a = pre if i == last else _act(pre, kind)
    return a, (inputs, pres)


def encode(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return _encode_cached(params, X)[0]


def effective_classifier(params: ModelParams) -> np.ndarray:
    norms = np.linalg.norm(params.classifier_direction, axis=1)
    if np.any(norms == 0):
        raise InvalidParameterError(f"classifier direction rows {np.flatnonzero(norms == 0).tolist()} have zero norm")
    return params.classifier_scale[:, None] * params.classifier_direction / norms[:, None]


def classify(params: ModelParams, Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.arch.bottleneck_dim:
        raise DimensionError(f"expected features with {params.arch.bottleneck_dim} columns, got shape {Z.shape}")
    return Z @ effective_classifier(params).T


def predict_proba(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return losses.softmax(classify(params, encode(params, X)))


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return classify(params, encode(params, X)).argmax(axis=1)


def accuracy(params: ModelParams, data: Dataset) -> float:
    return float(np.mean(predict(params, data.features) == data.require_labels()))


@dataclass
class Forward:
    """Activations kept for one backward pass."""

    X: np.ndarray
    z: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    _cache: tuple = field(repr=False)


def forward(params: ModelParams, X: np.ndarray) -> Forward:
    z, cache = _encode_cached(params, X)
    logits = classify(params, z)
    return Forward(np.asarray(X, dtype=np.float64), z, logits, losses.softmax(logits), cache)


def backward(
    params: ModelParams,
    fwd: Forward,
    dlogits: np.ndarray | None = None,
    dz: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Gradients of a scalar loss, ordered like :meth:`ModelParams.arrays`.

    ``dlogits`` is the loss gradient with respect to the logits and ``dz`` any
    additional gradient arriving directly at the encoder output.
    """
    v, g = params.classifier_direction, params.classifier_scale
    norms = np.linalg.norm(v, axis=1)
    unit = v / norms[:, None]
    dz_total = np.zeros_like(fwd.z) if dz is None else np.array(dz, dtype=np.float64)
    if dlogits is not None:
        w_eff = g[:, None] * unit
        dw_eff = dlogits.T @ fwd.z
        proj = (dw_eff * unit).sum(axis=1)
        dg = proj
        dv = (g / norms)[:, None] * (dw_eff - proj[:, None] * unit)
        dz_total = dz_total + dlogits @ w_eff
    else:
        dg = np.zeros_like(g)
        dv = np.zeros_like(v)

    inputs, pres = fwd._cache
    kind = params.arch.activation
    grads: list[np.ndarray] = []
    delta = dz_total
    last = len(params.encoder_layers) - 1
    for i in range(last, -1, -1):
        w, _ = params.encoder_layers[i]
        if i != last:
            post = _act(pres[i], kind)
            delta = delta * _act_grad(pres[i], post, kind)
        grads.append(delta.sum(axis=0))
        grads.append(inputs[i].T @ delta)
        delta = delta @ w.T
    grads.reverse()
    return grads + [dv, dg]


class MomentumSGD:
    """Heavy-ball SGD: ``buf = m * buf + grad``, ``param -= lr * buf``."""

    def __init__(self, learning_rate: float, momentum: float):
        self.lr = learning_rate
        self.momentum = momentum
        self.buffers: list[np.ndarray] | None = None

    def step(self, params: ModelParams, grads: list[np.ndarray], trainable: list[bool] | None = None) -> ModelParams:
        arrays = params.arrays()
        if self.buffers is None:
            self.buffers = [np.zeros_like(a) for a in arrays]
        out = []
        for j, (a, gr) in enumerate(zip(arrays, grads)):
            if trainable is not None and not trainable[j]:
                out.append(a)
                continue
            self.buffers[j] = self.momentum * self.buffers[j] + gr
            out.append(a - self.lr * self.buffers[j])
        return params.with_arrays(out)


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


# -- perturbation ------------------------------------------------------------


def perturb_params(
    params: ModelParams,
    noise_mode: NoiseMode = "per_parameter",
    low: float = -0.05,
    high: float = 0.05,
    rng: np.random.Generator | None = None,
) -> ModelParams:
    """Return a copy whose encoder entries are multiplied by ``(1 + r)``.

    ``scalar`` draws one ``r`` for the whole encoder, ``per_parameter`` one
    per entry. The classifier is copied unchanged.
    """
    if low > high:
        raise ConfigError(f"perturbation range is empty: low={low} > high={high}")
    if noise_mode not in ("per_parameter", "scalar"):
        raise ConfigError(f"unknown noise_mode {noise_mode!r}")
    if rng is None:
        rng = np.random.default_rng()
    arrays = [a.copy() for a in params.arrays()]
    n_enc = params.num_encoder_arrays()
    if noise_mode == "scalar":
        r = rng.uniform(low, high)
        for j in range(n_enc):
            arrays[j] = arrays[j] * (1.0 + r)
    else:
        for j in range(n_enc):
            arrays[j] = arrays[j] * (1.0 + rng.uniform(low, high, size=arrays[j].shape))
    return params.with_arrays(arrays)


# -- source training ---------------------------------------------------------


def train_source(dataset: Dataset, arch: ArchitectureSpec, cfg: TrainConfig) -> ModelParams:
    """Fit encoder and classifier with label-smoothed cross-entropy."""
    labels = dataset.require_labels()
    if dataset.num_features != arch.input_dim:
        raise DimensionError(f"dataset has {dataset.num_features} features, arch expects {arch.input_dim}")
    if labels.max() >= arch.num_classes:
        raise ConfigError(f"label {labels.max()} does not fit num_classes={arch.num_classes}")
    params = init_params(arch, cfg.seed)
    opt = MomentumSGD(cfg.learning_rate, cfg.momentum)
    for epoch in range(cfg.epochs):
        for idx in batches(len(dataset), cfg.batch_size, stream(cfg.seed, "source-batches", epoch)):
            fwd = forward(params, dataset.features[idx])
            loss = losses.cross_entropy_ls(fwd.probs, labels[idx], cfg.label_smoothing)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite source loss at epoch {epoch} (learning_rate={cfg.learning_rate})"
                )
            dlogits = losses.grad_cross_entropy_ls(fwd.probs, labels[idx], cfg.label_smoothing)
            params = opt.step(params, backward(params, fwd, dlogits=dlogits))
        if not all(np.isfinite(a).all() for a in params.arrays()):
            raise DivergenceError(f"non-finite parameters after epoch {epoch} (learning_rate={cfg.learning_rate})")
    if cfg.normalize_bottleneck and cfg.epochs > 0:
        params = normalize_bottleneck(params, dataset.features)
    return params


def normalize_bottleneck(params: ModelParams, X: np.ndarray) -> ModelParams:
    """Rescale each bottleneck channel to unit root-mean-square over ``X``.

    The last encoder layer is linear, so dividing its weights and bias by the
    channel scale ``s`` and multiplying the classifier direction by ``s``
    leaves every logit unchanged. The scale ``g`` is adjusted to keep the
    classifier's effective weights exact. Without this step the channels of
    a plain MLP carry arbitrary magnitudes, which swamps any comparison of
    their perturbation variance. Dead channels (zero RMS) are left as is.
    """
    z = encode(params, X)
    s = np.sqrt((z * z).mean(axis=0))
    s[s == 0] = 1.0
    layers = [(w.copy(), b.copy()) for w, b in params.encoder_layers]
    w, b = layers[-1]
    layers[-1] = (w / s, b / s)
    v = params.classifier_direction * s
    g = params.classifier_scale * np.linalg.norm(v, axis=1) / np.linalg.norm(params.classifier_direction, axis=1)
    return ModelParams(layers, v, g, params.arch)


# -- checkpoints -------------------------------------------------------------


def params_to_dict(params: ModelParams) -> dict:
    a = params.arch
    return {
        "arch": {
            "input_dim": a.input_dim,
            "hidden_dims": list(a.hidden_dims),
            "bottleneck_dim": a.bottleneck_dim,
            "num_classes": a.num_classes,
            "activation": a.activation,
        },
        "encoder_layers": [[w.tolist(), b.tolist()] for w, b in params.encoder_layers],
        "classifier_direction": params.classifier_direction.tolist(),
        "classifier_scale": params.classifier_scale.tolist(),
    }


def params_from_dict(doc: dict) -> ModelParams:
    try:
        arch = ArchitectureSpec(**doc["arch"])
        layers = [(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in doc["encoder_layers"]]
        params = ModelParams(layers, doc["classifier_direction"], doc["classifier_scale"], arch)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, DimensionError)):
            raise
        raise InvalidParameterError(f"malformed checkpoint: {exc}") from exc
    if not all(np.isfinite(x).all() for x in params.arrays()):
        raise InvalidParameterError("checkpoint contains non-finite values")
    return params


def save_params(params: ModelParams, path: str | os.PathLike) -> None:
    write_json(path, params_to_dict(params))


def load_params(path: str | os.PathLike) -> ModelParams:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"checkpoint is not valid JSON: {exc.msg}", exc.lineno) from None
    return params_from_dict(doc)
