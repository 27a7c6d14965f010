"""Synthetic two-domain data from independent semantic and domain latents.

Each sample draws a class ``c`` and ``z_y ~ N(class_mean[c], sigma^2 I)``,
independently ``z_d ~ N(domain_mean[domain], sigma^2 I)``, and is observed
as ``x = tanh(A [z_y; z_d] + b)`` with a fixed random mixing map ``(A, b)``.

Feature files are plain CSV (UTF-8, LF):

* source: header ``label,f0,...,f{d-1}``
* target: header ``f0,...,f{d-1}``
* oracle: header ``domain,label,zy0,...,zd0,...`` (synthetic ground truth)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, DataError

SOURCE, TARGET = 0, 1


def default_class_means(n_classes: int, k_y: int, separation: float) -> np.ndarray:
    """Class means on a circle in the first two latent axes, adjacent ones ``separation`` apart."""
    if n_classes == 1:
        return np.zeros((1, k_y))
    means = np.zeros((n_classes, k_y))
    if k_y == 1:
        means[:, 0] = separation * (np.arange(n_classes) - (n_classes - 1) / 2)
        return means
    radius = separation / (2.0 * math.sin(math.pi / n_classes))
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def default_domain_means(k_d: int, gap: float) -> np.ndarray:
    """Source domain at the origin, target ``gap`` away along the first axis."""
    means = np.zeros((2, k_d))
    means[1, 0] = gap
    return means


@dataclass
class GenSpec:
    n_classes: int = 2
    k_y: int = 2
    k_d: int = 2
    sigma: float = 0.5
    d: int = 16
    n_source: int = 2000
    n_target: int = 2000
    mixing_seed: int = 0
    class_means: Optional[np.ndarray] = None
    domain_means: Optional[np.ndarray] = None
    class_separation: Optional[float] = None
    domain_gap: float = 4.0

    def __post_init__(self):
        if self.class_separation is None:
            self.class_separation = 4.0 * self.sigma
        if self.class_means is None:
            self.class_means = default_class_means(self.n_classes, self.k_y, self.class_separation)
        if self.domain_means is None:
            self.domain_means = default_domain_means(self.k_d, self.domain_gap)
        self.class_means = np.asarray(self.class_means, dtype=np.float64)
        self.domain_means = np.asarray(self.domain_means, dtype=np.float64)

    def validate(self) -> None:
        for name in ("n_classes", "k_y", "k_d", "d", "n_source", "n_target"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.class_means.shape != (self.n_classes, self.k_y):
            raise ConfigError(f"class_means must be {self.n_classes} x {self.k_y}")
        if self.domain_means.shape != (2, self.k_d):
            raise ConfigError(f"domain_means must be 2 x {self.k_d}")
        gaps = [np.linalg.norm(a - b) for i, a in enumerate(self.class_means)
                for b in self.class_means[i + 1:]]
        if min(gaps) < 4.0 * self.sigma - 1e-12:
            raise ConfigError("class means must be at least 4 sigma apart")
        if self.n_source < 2 * self.n_classes:
            raise ConfigError("need at least two source samples per class")

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes, "k_y": self.k_y, "k_d": self.k_d, "sigma": self.sigma,
            "d": self.d, "n_source": self.n_source, "n_target": self.n_target,
            "mixing_seed": self.mixing_seed, "class_means": self.class_means.tolist(),
            "domain_means": self.domain_means.tolist(),
            "class_separation": self.class_separation, "domain_gap": self.domain_gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator fields {sorted(unknown)}")
        return cls(**d)

    def mixing_map(self) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.mixing_seed)
        k = self.k_y + self.k_d
        scale = k ** -0.25  # variance 1/sqrt(k)
        A = rng.normal(0.0, scale, size=(self.d, k))
        b = rng.normal(0.0, scale, size=self.d)
        return A, b


@dataclass(frozen=True)
class TrainingView:
    """Everything training may see; target labels are deliberately absent."""

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    n_classes: int

    @property
    def d(self) -> int:
        return self.source_x.shape[1]


@dataclass(frozen=True)
class Dataset:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_y: Optional[np.ndarray]
    n_classes: int
    source_latents: Optional[tuple] = field(default=None, repr=False)
    target_latents: Optional[tuple] = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.source_x.shape[1]

    @property
    def n_source(self) -> int:
        return self.source_x.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_x.shape[0]

    def domain_tags(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.n_source, int), np.ones(self.n_target, int)])

    def training_view(self) -> TrainingView:
        return TrainingView(self.source_x, self.source_y, self.target_x, self.n_classes)


def _sample_domain(spec: GenSpec, n: int, domain: int, rng, A, b):
    labels = rng.integers(0, spec.n_classes, size=n)
    z_y = spec.class_means[labels] + spec.sigma * rng.standard_normal((n, spec.k_y))
    z_d = spec.domain_means[domain] + spec.sigma * rng.standard_normal((n, spec.k_d))
    x = np.tanh(np.concatenate([z_y, z_d], axis=1) @ A.T + b)
    return x, labels, z_y, z_d


def generate(spec: GenSpec, seed) -> Dataset:
    spec.validate()
    A, b = spec.mixing_map()
    rng_s, rng_t = np.random.default_rng(seed).spawn(2)
    xs, ys, zys, zds = _sample_domain(spec, spec.n_source, SOURCE, rng_s, A, b)
    xt, yt, zyt, zdt = _sample_domain(spec, spec.n_target, TARGET, rng_t, A, b)
    return Dataset(xs, ys, xt, yt, spec.n_classes, (zys, zds), (zyt, zdt))


# -- files ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def save_features(ds: Dataset, source_path, target_path, oracle_path=None) -> None:
    d = ds.d
    cols = [f"f{j}" for j in range(d)]
    with open(source_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *cols])
        for y, row in zip(ds.source_y, ds.source_x):
            w.writerow([int(y), *map(_fmt, row)])
    with open(target_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in ds.target_x:
            w.writerow(list(map(_fmt, row)))
    if oracle_path is not None:
        save_oracle(ds, oracle_path)


def save_oracle(ds: Dataset, path) -> None:
    if ds.source_latents is None or ds.target_latents is None or ds.target_y is None:
        raise DataError("dataset carries no oracle latents")
    k_y = ds.source_latents[0].shape[1]
    k_d = ds.source_latents[1].shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label", *[f"zy{j}" for j in range(k_y)],
                    *[f"zd{j}" for j in range(k_d)]])
        for dom, ys, (zy, zd) in ((SOURCE, ds.source_y, ds.source_latents),
                                  (TARGET, ds.target_y, ds.target_latents)):
            for i in range(len(ys)):
                w.writerow([dom, int(ys[i]), *map(_fmt, zy[i]), *map(_fmt, zd[i])])


def _read_table(path, expect_label: bool):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    feat_cols = header[1:] if expect_label else header
    if expect_label and (not header or header[0] != "label"):
        raise DataError(f"{path}:1: source header must start with 'label'")
    if feat_cols != [f"f{j}" for j in range(len(feat_cols))] or not feat_cols:
        raise DataError(f"{path}:1: feature columns must be f0..f{{d-1}}")
    width = len(header)
    labels, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}:{lineno}: non-finite value")
        if expect_label:
            lab = values[0]
            if lab != int(lab):
                raise DataError(f"{path}:{lineno}: label must be an integer")
            labels.append((int(lab), lineno))
            feats.append(values[1:])
        else:
            feats.append(values)
    return labels, np.array(feats, dtype=np.float64).reshape(len(feats), len(feat_cols))


def load_oracle(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["domain", "label"]:
        raise DataError(f"{path}:1: oracle header must start with 'domain,label'")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError:
        raise DataError(f"{path}: non-numeric cell") from None
    k_y = sum(1 for h in rows[0] if h.startswith("zy"))
    return arr.reshape(len(rows) - 1, len(rows[0])), k_y


def load_features(source_path, target_path, n_classes: int | None = None,
                  oracle_path=None) -> Dataset:
    """Assemble a dataset from feature CSVs.

    ``n_classes`` defaults to ``max(label) + 1``. With ``oracle_path`` the
    target labels (and true latents) are attached for evaluation.
    """
    labels, xs = _read_table(source_path, expect_label=True)
    _, xt = _read_table(target_path, expect_label=False)
    if xs.shape[0] == 0:
        raise DataError(f"{source_path}: no source rows")
    if xt.shape[0] == 0:
        raise DataError(f"{target_path}: no target rows (need at least one)")
    if xs.shape[1] != xt.shape[1]:
        raise DataError(f"feature dimension mismatch: source d={xs.shape[1]}, "
                        f"target d={xt.shape[1]}")
    ys = np.array([lab for lab, _ in labels], dtype=np.int64)
    if n_classes is None:
        n_classes = int(ys.max()) + 1 if ys.size else 0
    for lab, lineno in labels:
        if lab == -1:
            raise DataError(f"{source_path}:{lineno}: unlabeled row (-1) in source file")
        if not 0 <= lab < n_classes:
            raise DataError(f"{source_path}:{lineno}: label {lab} out of range [0, {n_classes})")
    if n_classes < 2:
        raise DataError("source labels must cover at least two classes")
    target_y = src_lat = tgt_lat = None
    if oracle_path is not None:
        arr, k_y = load_oracle(oracle_path)
        dom = arr[:, 0].astype(int)
        if (dom == SOURCE).sum() != xs.shape[0] or (dom == TARGET).sum() != xt.shape[0]:
            raise DataError(f"{oracle_path}: row counts do not match the feature files")
        target_y = arr[dom == TARGET, 1].astype(np.int64)
        z = arr[:, 2:]
        src_lat = (z[dom == SOURCE, :k_y], z[dom == SOURCE, k_y:])
        tgt_lat = (z[dom == TARGET, :k_y], z[dom == TARGET, k_y:])
    return Dataset(xs, ys, xt, target_y, n_classes, src_lat, tgt_lat)


# -- batching ------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    source_y: np.ndarray
    domain: np.ndarray
    n_source: int
    source_idx: np.ndarray
    target_idx: np.ndarray


def batches(view, batch_size: int, rng) -> Iterator[Batch]:
    """One epoch of mixed batches: first half source rows, second half target rows.

    Source and target are shuffled independently; an epoch has as many
    batches as the smaller domain fills, and the short tail is dropped.
    """
    if batch_size < 2 or batch_size % 2:
        raise ConfigError(f"batch_size must be even and >= 2, got {batch_size}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    half = batch_size // 2
    ps = rng.permutation(view.source_x.shape[0])
    pt = rng.permutation(view.target_x.shape[0])
    n_batches = min(len(ps), len(pt)) // half
    dom = np.concatenate([np.zeros(half, int), np.ones(half, int)])
    for i in range(n_batches):
        si = ps[i * half:(i + 1) * half]
        ti = pt[i * half:(i + 1) * half]
        x = np.concatenate([view.source_x[si], view.target_x[ti]], axis=0)
        yield Batch(x, view.source_y[si], dom, half, si, ti)
