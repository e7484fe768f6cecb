"""Synthetic Gaussian-blob datasets and label-noise injection.

Class centers are rows of a +/-1 Hadamard-style matrix truncated to the
feature dimension, which keeps every pair of centers far apart as long as
the class count does not exceed the next power of two above the dimension.
Past that limit truncated rows can collide, so a deterministic axis
lattice is used instead.

Noise models:
* symmetric: each label flips with probability epsilon to a uniformly
  random *different* class.
* asymmetric: flips follow a caller-supplied class map (a complete
  class -> class dict), each source label flipping with probability epsilon.
* pairflip: shorthand for the cyclic map y -> (y+1) mod C.
* instance: flip probability depends on the sample's features through a
  random projection, rescaled so the mean flip probability equals epsilon.

Dataset CSV schema (external interface): header f0..f{d-1},label_true,
label_noisy; floats serialized with repr for exact round-trip; LF endings.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import build_sylvester
from .errors import ConfigError, DataIOError, LabelError, ParseError, ShapeError
from .numeric import RngStream

NOISE_KINDS = ("symmetric", "asymmetric", "pairflip", "instance")


@dataclass
class NoiseSpec:
    kind: str
    epsilon: float
    class_map: dict | None = None
    idn_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not (0.0 <= self.epsilon < 1.0):
            raise ConfigError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.kind == "asymmetric" and not self.class_map:
            raise ConfigError("asymmetric noise requires a class_map")
        if self.kind == "instance" and self.idn_weights is None:
            raise ConfigError("instance noise requires idn_weights")


@dataclass
class NoisyDataset:
    """Features plus both label columns; clean_mask marks agreement."""

    features: np.ndarray      # (n, d) float64
    true_labels: np.ndarray   # (n,) int64
    noisy_labels: np.ndarray  # (n,) int64
    clean_mask: np.ndarray    # (n,) bool, true == noisy
    num_classes: int
    split: str = "train"
    noise_spec: NoiseSpec | None = None

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        for name, arr in (("true_labels", self.true_labels),
                          ("noisy_labels", self.noisy_labels),
                          ("clean_mask", self.clean_mask)):
            if arr.shape != (n,):
                raise ShapeError(f"{name} shape {arr.shape} != ({n},)")
        for name, arr in (("true_labels", self.true_labels),
                          ("noisy_labels", self.noisy_labels)):
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise LabelError(f"{name} outside [0, {self.num_classes})")
        if not np.array_equal(self.clean_mask, self.true_labels == self.noisy_labels):
            raise ShapeError("clean_mask inconsistent with the label columns")
        if self.split == "test" and not self.clean_mask.all():
            raise ConfigError("test split must stay noise-free")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def noise_rate(self) -> float:
        return float(1.0 - self.clean_mask.mean()) if self.n_samples else 0.0


def _next_pow2(v: int) -> int:
    p = 1
    while p < v:
        p *= 2
    return p


def _as_stream(rng) -> RngStream:
    """Accept either an integer seed or an existing stream."""
    return rng if isinstance(rng, RngStream) else RngStream(int(rng))


def class_centers(classes: int, dim: int, scale: float = 1.0) -> np.ndarray:
    """Well-separated class centers in R^dim.

    Prefers truncated +/-1 Hadamard rows (pairwise distance >= scale *
    sqrt(2*dim / overlap-bound)); when the class count is too large for the
    truncation to stay collision-free, falls back to an axis lattice where
    class i sits at 2*scale*(1 + i//dim) along axis i mod dim.
    """
    if classes > _next_pow2(dim):
        centers = np.zeros((classes, dim))
        for i in range(classes):
            centers[i, i % dim] = 2.0 * scale * (1 + i // dim)
        return centers
    p = _next_pow2(max(classes, dim))
    h = build_sylvester(p).astype(np.float64)
    return scale * h[:classes, :dim]


def gen_blobs(classes: int, dim: int, n_per_class: int, spread: float,
              rng, center_scale: float = 1.0):
    """Gaussian clusters around the class centers; returns (train, test)
    with a stratified 80/20 split (test size = round(0.2 * n) per class).

    ``rng`` may be an integer seed or an RngStream.
    """
    rng = _as_stream(rng)
    if classes < 2:
        raise ConfigError(f"need at least 2 classes, got {classes}")
    if dim < 2:
        raise ConfigError(f"need at least 2 feature dims, got {dim}")
    if n_per_class < 2:
        raise ConfigError(f"need at least 2 samples per class, got {n_per_class}")
    if spread <= 0.0:
        raise ConfigError(f"spread must be positive, got {spread}")
    centers = class_centers(classes, dim, center_scale)
    feats, labels = [], []
    for c in range(classes):
        feats.append(centers[c] + spread * rng.normal(size=(n_per_class, dim)))
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    x = np.concatenate(feats)
    y = np.concatenate(labels)
    n_test = int(round(0.2 * n_per_class))
    test_idx = np.zeros(x.shape[0], dtype=bool)
    for c in range(classes):
        rows = np.flatnonzero(y == c)
        picked = rng.permutation(rows.size)[:n_test]
        test_idx[rows[picked]] = True
    def build(sel):
        return NoisyDataset(features=np.ascontiguousarray(x[sel]),
                            true_labels=y[sel].copy(), noisy_labels=y[sel].copy(),
                            clean_mask=np.ones(sel.sum(), dtype=bool),
                            num_classes=classes,
                            split="test" if sel is test_idx else "train")
    train = build(~test_idx)
    test = build(test_idx)
    return train, test


def make_instance_weights(dim: int, classes: int, rng: RngStream) -> np.ndarray:
    """Random projection used by instance-dependent noise; shape (dim, classes)."""
    return rng.normal(size=(dim, classes))


def _instance_flip_probs(ds: NoisyDataset, spec: NoiseSpec) -> np.ndarray:
    w = np.asarray(spec.idn_weights, dtype=np.float64)
    if w.shape != (ds.features.shape[1], ds.num_classes):
        raise ConfigError(
            f"idn_weights shape {w.shape} != ({ds.features.shape[1]}, {ds.num_classes})")
    scores = (ds.features @ w)[np.arange(ds.n_samples), ds.true_labels]
    mu, sd = scores.mean(), scores.std()
    z = (scores - mu) / sd if sd > 0 else np.zeros_like(scores)
    # Bisect the offset so the mean clipped flip probability hits epsilon.
    def mean_prob(b):
        return float(np.clip(0.25 * z + b, 0.0, 1.0).mean())
    lo, hi = -3.0, 4.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_prob(mid) < spec.epsilon:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    if abs(mean_prob(b) - spec.epsilon) > 1e-6:
        raise ConfigError(f"cannot calibrate instance noise to epsilon={spec.epsilon}")
    return np.clip(0.25 * z + b, 0.0, 1.0)


def inject_noise(ds: NoisyDataset, spec: NoiseSpec, rng) -> NoisyDataset:
    """Return a copy of the train split with noisy labels written in.

    Refuses test splits and datasets that already carry noise, so a second
    injection cannot silently compound.  ``rng`` may be an integer seed or
    an RngStream.
    """
    rng = _as_stream(rng)
    if ds.split != "train":
        raise ConfigError("noise injection is train-split only")
    if not ds.clean_mask.all():
        raise ConfigError("dataset already has injected noise")
    n, c = ds.n_samples, ds.num_classes
    y = ds.true_labels.copy()
    noisy = y.copy()
    if spec.kind == "symmetric":
        flips = rng.uniform(size=n) < spec.epsilon
        draw = rng.integers(0, c - 1, size=n)
        draw = draw + (draw >= y)  # skip the true class
        noisy[flips] = draw[flips]
    elif spec.kind in ("asymmetric", "pairflip"):
        cmap = spec.class_map if spec.kind == "asymmetric" else {i: (i + 1) % c for i in range(c)}
        missing = [k for k in range(c) if k not in cmap]
        if missing:
            raise ConfigError(f"class_map missing source classes {missing}")
        bad = [v for v in cmap.values() if not 0 <= int(v) < c]
        if bad:
            raise ConfigError(f"class_map targets outside [0, {c}): {bad}")
        flips = rng.uniform(size=n) < spec.epsilon
        mapped = np.array([cmap[int(v)] for v in y], dtype=np.int64)
        noisy[flips] = mapped[flips]
    elif spec.kind == "instance":
        probs = _instance_flip_probs(ds, spec)
        flips = rng.uniform(size=n) < probs
        draw = rng.integers(0, c - 1, size=n)
        draw = draw + (draw >= y)
        noisy[flips] = draw[flips]
    return NoisyDataset(features=ds.features.copy(), true_labels=y,
                        noisy_labels=noisy, clean_mask=y == noisy,
                        num_classes=c, split="train", noise_spec=spec)


def save_csv(ds: NoisyDataset, path) -> None:
    """Write the dataset in the documented CSV schema (repr floats, LF)."""
    path = Path(path)
    d = ds.features.shape[1]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"f{j}" for j in range(d)] + ["label_true", "label_noisy"])
            for i in range(ds.n_samples):
                row = [repr(float(v)) for v in ds.features[i]]
                row += [int(ds.true_labels[i]), int(ds.noisy_labels[i])]
                writer.writerow(row)
    except OSError as exc:
        raise DataIOError(f"cannot write dataset {path}: {exc}") from exc


def load_csv(path, num_classes: int | None = None, split: str = "train") -> NoisyDataset:
    """Read a dataset CSV; num_classes defaults to 1 + max label seen."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ParseError(f"{path}: empty file, expected a header") from None
            d = len(header) - 2
            expected = [f"f{j}" for j in range(d)] + ["label_true", "label_noisy"]
            if d < 1 or header != expected:
                raise ParseError(f"{path}: bad header {header[:4]}...; expected f0..f{{d-1}},label_true,label_noisy")
            feats, yt, yn = [], [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != d + 2:
                    raise ParseError(f"{path} line {lineno}: {len(row)} fields, expected {d + 2}")
                try:
                    feats.append([float(v) for v in row[:d]])
                    yt.append(int(row[d]))
                    yn.append(int(row[d + 1]))
                except ValueError as exc:
                    raise ParseError(f"{path} line {lineno}: {exc}") from None
    except OSError as exc:
        raise DataIOError(f"cannot read dataset {path}: {exc}") from exc
    x = np.array(feats, dtype=np.float64).reshape(len(feats), d)
    yt = np.array(yt, dtype=np.int64)
    yn = np.array(yn, dtype=np.int64)
    c = num_classes if num_classes is not None else int(max(yt.max(initial=0), yn.max(initial=0))) + 1
    if yt.size and (yt.min() < 0 or yn.min() < 0 or yt.max() >= c or yn.max() >= c):
        raise ParseError(f"{path}: label outside [0, {c})")
    return NoisyDataset(features=np.ascontiguousarray(x), true_labels=yt,
                        noisy_labels=yn, clean_mask=yt == yn,
                        num_classes=c, split=split)
