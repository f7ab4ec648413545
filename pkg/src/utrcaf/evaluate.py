"""Channel-split validation of the domain-level ranking.

Channels are split by their domain-level uncertainty into a low half and a
high half; each half is scored by masked accuracy and by the measurements in
:mod:`utrcaf.metrics`. Target labels enter only here.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import metrics
from .errors import ConfigError, InputError
from .io import write_csv, write_json
from .losses import softmax
from .model import Dataset, ModelParams, classify, encode
from .rng import stream

Direction = Literal["lower_better", "higher_better"]

MEASUREMENTS: dict[str, Direction] = {
    "mmd": "lower_better",
    "a_distance": "lower_better",
    "corresponding_angle": "higher_better",
    "leep": "higher_better",
    "nce": "higher_better",
    "logme": "higher_better",
    "accuracy": "higher_better",
}


@dataclass(frozen=True)
class ChannelSplit:
    low_idx: np.ndarray
    high_idx: np.ndarray


@dataclass(frozen=True)
class Measurement:
    z_low: float
    z_high: float
    direction: Direction

    @property
    def low_wins(self) -> bool:
        if self.direction == "lower_better":
            return self.z_low < self.z_high
        return self.z_low > self.z_high


MeasurementReport = dict[str, Measurement]


def split_channels(utr_d: np.ndarray, m: int) -> ChannelSplit:
    """Indices of the ``m`` smallest values (ties by channel index) and the rest."""
    utr_d = np.asarray(utr_d, dtype=np.float64)
    d = utr_d.size
    if not 1 <= m < d:
        raise ConfigError(f"split size m must lie in [1, {d - 1}], got {m}")
    order = np.argsort(utr_d, kind="stable")
    return ChannelSplit(np.sort(order[:m]), np.sort(order[m:]))


def masked_logits(params: ModelParams, X: np.ndarray, keep_idx) -> np.ndarray:
    z = encode(params, X)
    mask = np.zeros(z.shape[1], dtype=bool)
    mask[np.asarray(keep_idx, dtype=np.int64)] = True
    return classify(params, np.where(mask, z, 0.0))


def masked_accuracy(params: ModelParams, data: Dataset, keep_idx) -> float:
    """Top-1 accuracy after zeroing every channel outside ``keep_idx``.

    Ties in the logits resolve to the lowest class index.
    """
    if data.labels is None:
        raise InputError(f"masked_accuracy needs labels, dataset {data.name!r} has none")
    pred = masked_logits(params, data.features, keep_idx).argmax(axis=1)
    return float(np.mean(pred == data.labels))


def accuracy_utr_curve(utr_i: np.ndarray, correct: np.ndarray, thresholds) -> list[tuple[float, float | None, int]]:
    """Accuracy over instances whose score strictly exceeds each threshold.

    Empty selections report ``None`` for the accuracy.
    """
    utr_i = np.asarray(utr_i, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if utr_i.shape != correct.shape:
        raise InputError("utr_i and correct differ in length")
    out = []
    for t in thresholds:
        sel = utr_i > t
        count = int(sel.sum())
        out.append((float(t), float(correct[sel].mean()) if count else None, count))
    return out


def default_thresholds(utr_i: np.ndarray, num: int = 20) -> np.ndarray:
    """Evenly spaced quantiles of the scores, from the minimum upward."""
    return np.quantile(np.asarray(utr_i, dtype=np.float64), np.linspace(0.0, 1.0, num, endpoint=False))


def build_report(
    source_params: ModelParams,
    source_data: Dataset,
    target_data: Dataset,
    split: ChannelSplit,
    seed: int = 0,
    angle_k: int = 10,
    logme_max_iter: int = 1000,
    logme_tol: float = 1e-6,
) -> MeasurementReport:
    """Score both channel halves with every measurement.

    Accuracy zero-masks the complementary channels (the classifier needs all
    ``d`` inputs); the other measurements use the projected sub-columns.
    LEEP and NCE take the source model's masked predictions on the target
    data as their source label distribution.
    """
    target_labels = target_data.require_labels()
    zs = encode(source_params, source_data.features)
    zt = encode(source_params, target_data.features)
    k_t = int(max(target_labels.max() + 1, source_params.arch.num_classes))
    values: dict[str, list[float]] = {name: [] for name in MEASUREMENTS}
    for idx in (split.low_idx, split.high_idx):
        a, b = zs[:, idx], zt[:, idx]
        probs = softmax(masked_logits(source_params, target_data.features, idx))
        values["mmd"].append(metrics.mmd(a, b))
        values["a_distance"].append(metrics.proxy_a_distance(a, b, stream(seed, "a_distance")))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            values["corresponding_angle"].append(metrics.corresponding_angle(a, b, min(angle_k, len(idx))))
        values["leep"].append(metrics.leep(probs, target_labels, k_t))
        values["nce"].append(metrics.nce(probs.argmax(axis=1), target_labels))
        values["logme"].append(metrics.logme(b, target_labels, logme_max_iter, logme_tol))
        values["accuracy"].append(masked_accuracy(source_params, target_data, idx))
    return {name: Measurement(v[0], v[1], MEASUREMENTS[name]) for name, v in values.items()}


def report_to_dict(report: MeasurementReport) -> dict:
    return {
        name: {"z_low": m.z_low, "z_high": m.z_high, "direction": m.direction}
        for name, m in report.items()
    }


def save_report(report: MeasurementReport, json_path: str | os.PathLike, csv_path: str | os.PathLike) -> None:
    write_json(json_path, report_to_dict(report))
    rows = [[name, m.z_low, m.z_high, m.direction] for name, m in report.items()]
    write_csv(csv_path, ["measurement", "z_low", "z_high", "direction"], rows)


def save_curve(curve, path: str | os.PathLike) -> None:
    write_csv(path, ["threshold", "accuracy", "count"], [list(row) for row in curve])


def curve_is_defined(point) -> bool:
    return point[1] is not None and not math.isnan(point[1])
