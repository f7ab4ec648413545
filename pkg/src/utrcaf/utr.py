"""Uncertainty-induced transferability representation.

The spectrum holds, for every instance and every encoder output channel, the
variance of that channel across ``T`` multiplicatively perturbed copies of the
encoder. Averaging over instances ranks channels (domain level); averaging over
channels scores instances (instance level).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError, ParseError
from .io import write_csv
from .model import ModelParams, NoiseMode, encode, perturb_params
from .rng import stream


@dataclass(frozen=True)
class PerturbationConfig:
    T: int = 2
    low: float = -0.05
    high: float = 0.05
    noise_mode: NoiseMode = "per_parameter"
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError(f"perturb.T must be >= 2 for a variance, got {self.T}")
        if self.low > self.high:
            raise ConfigError(f"perturb.low ({self.low}) exceeds perturb.high ({self.high})")
        if self.noise_mode not in ("per_parameter", "scalar"):
            raise ConfigError(f"perturb.noise_mode must be 'per_parameter' or 'scalar', got {self.noise_mode!r}")
        if self.seed < 0:
            raise ConfigError(f"perturb.seed must be unsigned, got {self.seed}")


@dataclass(frozen=True)
class RiskThreshold:
    mode: Literal["absolute", "mean_multiple"] = "mean_multiple"
    value: float = 3.0

    def __post_init__(self):
        if self.mode not in ("absolute", "mean_multiple"):
            raise ConfigError(f"risk threshold mode must be 'absolute' or 'mean_multiple', got {self.mode!r}")
        if self.value < 0:
            raise ConfigError(f"risk threshold value must be nonnegative, got {self.value}")


@dataclass
class UtrSpectrum:
    values: np.ndarray
    model_tag: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"spectrum must be 2-D, got shape {self.values.shape}")


def perturbed_encoders(params: ModelParams, cfg: PerturbationConfig) -> list[ModelParams]:
    """The ``T`` perturbed models, each from its own named stream."""
    return [
        perturb_params(params, cfg.noise_mode, cfg.low, cfg.high, stream(cfg.seed, "perturb", t))
        for t in range(cfg.T)
    ]


def channel_ud(params: ModelParams, X: np.ndarray, cfg: PerturbationConfig, model_tag: str = "") -> UtrSpectrum:
    """Per-instance, per-channel population variance over the perturbed encoders.

    The perturbed models are drawn once and shared by every row of ``X``, so
    the result is a pure function of ``(params, X, cfg)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("channel_ud needs at least one instance")
    outputs = np.stack([encode(m, X) for m in perturbed_encoders(params, cfg)])
    return UtrSpectrum(outputs.var(axis=0), model_tag)


def _values(spectrum) -> np.ndarray:
    return spectrum.values if isinstance(spectrum, UtrSpectrum) else np.asarray(spectrum, dtype=np.float64)


def utr_domain(spectrum: UtrSpectrum | np.ndarray) -> np.ndarray:
    """Channel-wise mean over instances (length ``d``)."""
    s = _values(spectrum)
    if s.ndim != 2 or s.shape[0] == 0:
        raise EmptyInputError("cannot average an empty spectrum")
    return s.mean(axis=0)


def utr_domain_online(prev: np.ndarray | None, batch: UtrSpectrum | np.ndarray, momentum: float = 0.1) -> np.ndarray:
    """Exponential moving average of per-batch channel means."""
    if not 0.0 < momentum <= 1.0:
        raise ConfigError(f"moving-average momentum must lie in (0, 1], got {momentum}")
    current = utr_domain(batch)
    if prev is None:
        return current
    return (1.0 - momentum) * np.asarray(prev, dtype=np.float64) + momentum * current


def utr_instance(spectrum: UtrSpectrum | np.ndarray) -> np.ndarray:
    """Instance-wise mean over channels (length ``n``)."""
    s = _values(spectrum)
    if s.ndim != 2 or s.shape[1] == 0:
        raise EmptyInputError("spectrum has no channels")
    return s.mean(axis=1)


def risk_cutoff(utr_i: np.ndarray, thr: RiskThreshold) -> float:
    utr_i = np.asarray(utr_i, dtype=np.float64)
    if thr.mode == "absolute":
        return float(thr.value)
    return float(thr.value * utr_i.mean())


def select_risk(utr_i: np.ndarray, thr: RiskThreshold) -> np.ndarray:
    """Ascending indices whose score strictly exceeds the threshold."""
    utr_i = np.asarray(utr_i, dtype=np.float64)
    if utr_i.size == 0:
        raise EmptyInputError("select_risk needs at least one score")
    return np.flatnonzero(utr_i > risk_cutoff(utr_i, thr))


# -- persistence -------------------------------------------------------------


def save_spectrum(spectrum: UtrSpectrum, path: str | os.PathLike) -> None:
    s = spectrum.values
    header = ["instance"] + [f"ch{i}" for i in range(s.shape[1])]
    write_csv(path, header, [[j, *row] for j, row in enumerate(s)])


def load_spectrum(path: str | os.PathLike, model_tag: str = "") -> UtrSpectrum:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        d = len(header) - 1
        if header[0] != "instance" or header[1:] != [f"ch{i}" for i in range(d)]:
            raise ParseError("spectrum header must be 'instance,ch0,...'", 1)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            cells = line.strip().split(",")
            if len(cells) != d + 1:
                raise ParseError(f"expected {d + 1} cells, found {len(cells)}", lineno)
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    return UtrSpectrum(np.array(rows).reshape(len(rows), d), model_tag)


def save_vector(values: np.ndarray, path: str | os.PathLike) -> None:
    write_csv(path, ["value"], [[float(v)] for v in np.asarray(values, dtype=np.float64)])


def load_vector(path: str | os.PathLike) -> np.ndarray:
    with open(path) as fh:
        if fh.readline().strip() != "value":
            raise ParseError("vector header must be 'value'", 1)
        out = []
        for lineno, line in enumerate(fh, start=2):
            try:
                out.append(float(line))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    return np.array(out)
