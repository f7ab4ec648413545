"""Synthetic domain pairs and dataset files.

The planted-shift generator draws class-conditional Gaussians. On the clean
dimensions both domains share the same class means. On the corrupt dimensions
the target domain uses the means of a *different* class (a derangement), moved
by ``shift_strength`` along a random direction per class, and its spread there
is widened by extra Gaussian noise of scale ``shift_strength``. Those
dimensions stay discriminative within each domain but mislead across them.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .io import atomic_write, fmt_float, write_json
from .model import Dataset
from .rng import stream


@dataclass(frozen=True)
class PlantedShiftSpec:
    n_per_domain: int = 1000
    input_dim: int = 16
    num_classes: int = 4
    frac_corrupt: float = 0.5
    shift_strength: float = 2.0
    noise: float = 1.0
    seed: int = 0
    # identity keeps target corrupt means on their own class (debug/oracle use)
    permute_classes: bool = True

    def __post_init__(self):
        if self.n_per_domain < 1:
            raise ConfigError(f"data.n_per_domain must be positive, got {self.n_per_domain}")
        if self.input_dim < 2:
            raise ConfigError(f"data.input_dim must be >= 2, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"data.num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 < self.frac_corrupt < 1.0:
            raise ConfigError(f"data.frac_corrupt must lie in (0, 1), got {self.frac_corrupt}")
        n_corrupt = math.floor(self.frac_corrupt * self.input_dim)
        if not 1 <= n_corrupt <= self.input_dim - 1:
            raise ConfigError(
                f"data.frac_corrupt * data.input_dim must floor to [1, input_dim - 1], got {n_corrupt}"
            )
        if self.shift_strength < 0:
            raise ConfigError(f"data.shift_strength must be nonnegative, got {self.shift_strength}")
        if not self.noise > 0:
            raise ConfigError(f"data.noise must be positive, got {self.noise}")
        if self.seed < 0:
            raise ConfigError(f"data.seed must be unsigned, got {self.seed}")

    @property
    def n_corrupt(self) -> int:
        return math.floor(self.frac_corrupt * self.input_dim)


@dataclass
class DatasetManifest:
    source_path: str = ""
    target_path: str = ""
    ground_truth_corrupt_dims: list[int] | None = None
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PlantedMeans:
    """Generator internals, exposed so tests can assert on them exactly."""

    source: np.ndarray
    target: np.ndarray
    corrupt_dims: np.ndarray
    permutation: np.ndarray


def _derangement(k: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        perm = rng.permutation(k)
        if not np.any(perm == np.arange(k)):
            return perm


def _block_means(k: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` class means over ``width`` dims with norm sqrt(width).

    When the block is wide enough the means are mutually orthogonal, so every
    pair of classes is equally far apart; otherwise they are plain Gaussian.
    """
    raw = rng.normal(size=(width, k))
    if width < k:
        return raw.T
    q, _ = np.linalg.qr(raw)
    return math.sqrt(width) * q.T


def planted_means(spec: PlantedShiftSpec) -> PlantedMeans:
    rng = stream(spec.seed, "planted-means")
    k, p = spec.num_classes, spec.input_dim
    corrupt = np.sort(rng.choice(p, size=spec.n_corrupt, replace=False))
    clean = np.setdiff1d(np.arange(p), corrupt)
    source = np.zeros((k, p))
    source[:, clean] = _block_means(k, clean.size, rng)
    source[:, corrupt] = _block_means(k, corrupt.size, rng)
    perm = _derangement(k, rng) if spec.permute_classes else np.arange(k)
    # each class moves by shift_strength along its own random corrupt-subspace direction
    direction = rng.normal(size=(k, corrupt.size))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    target = source.copy()
    target[:, corrupt] = source[perm][:, corrupt] + spec.shift_strength * direction
    return PlantedMeans(source, target, corrupt, perm)


def _sample(means: np.ndarray, n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    k = means.shape[0]
    labels = np.arange(n) % k
    labels = labels[rng.permutation(n)]
    x = means[labels] + noise * rng.normal(size=(n, means.shape[1]))
    return x, labels


def gen_planted_shift(spec: PlantedShiftSpec) -> tuple[Dataset, Dataset, DatasetManifest]:
    m = planted_means(spec)
    xs, ys = _sample(m.source, spec.n_per_domain, spec.noise, stream(spec.seed, "planted-source"))
    xt, yt = _sample(m.target, spec.n_per_domain, spec.noise, stream(spec.seed, "planted-target"))
    spread = stream(spec.seed, "planted-target-spread").normal(size=(len(xt), m.corrupt_dims.size))
    xt[:, m.corrupt_dims] += spec.shift_strength * spread
    manifest = DatasetManifest(ground_truth_corrupt_dims=m.corrupt_dims.tolist(), spec=asdict(spec))
    return Dataset(xs, ys, "source"), Dataset(xt, yt, "target"), manifest


def _moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_outer = n // 2
    n_inner = n - n_outer
    t_out = rng.uniform(0.0, math.pi, n_outer)
    t_in = rng.uniform(0.0, math.pi, n_inner)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner]) + noise * rng.normal(size=(n, 2))
    y = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    order = rng.permutation(n)
    return x[order], y[order]


def gen_two_moons_rotated(n: int, angle_degrees: float, noise: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Two interleaved half-circles; the target is rotated about the origin."""
    if n < 4:
        raise ConfigError(f"two moons needs n >= 4, got {n}")
    xs, ys = _moons(n, noise, stream(seed, "moons-source"))
    xt, yt = _moons(n, noise, stream(seed, "moons-target"))
    a = math.radians(angle_degrees)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return Dataset(xs, ys, "source"), Dataset(xt @ rot.T, yt, "target")


# -- files -------------------------------------------------------------------


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    p = ds.num_features
    header = [f"f{i}" for i in range(p)] + (["y"] if ds.labels is not None else [])
    with atomic_write(path) as fh:
        fh.write(",".join(header) + "\n")
        for i, row in enumerate(ds.features):
            cells = [fmt_float(v) for v in row]
            if ds.labels is not None:
                cells.append(str(int(ds.labels[i])))
            fh.write(",".join(cells) + "\n")


def load_dataset(path: str | os.PathLike, name: str | None = None) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("empty file, expected a header", 1)
        has_y = header[-1] == "y"
        p = len(header) - int(has_y)
        if p < 1 or header[:p] != [f"f{i}" for i in range(p)]:
            raise ParseError(f"header must be 'f0,...,f{{p-1}}[,y]', got {','.join(header)!r}", 1)
        width = len(header)
        feats, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} cells, found {len(row)}", lineno)
            try:
                feats.append([float(c) for c in row[:p]])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell: {exc}", lineno) from None
            if has_y:
                try:
                    labels.append(int(row[p]))
                except ValueError:
                    raise ParseError(f"label {row[p]!r} is not an integer", lineno) from None
    if not feats:
        raise ParseError("no data rows", 2)
    return Dataset(np.array(feats), np.array(labels) if has_y else None, name or path.stem)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    write_json(path, manifest.to_dict())
