"""Clean-sample identification from a single forward pass.

Two identifiers are computed per sample and OR-combined:

* detection identifier: decompose the sample's detection-head BCE into its
  per-bit terms and threshold the population variance of those terms.  A
  sample whose bit losses are uniformly distributed across the codeword
  (variance <= tau) is flagged clean.
* classifier identifier: agreement between the temperature-softened
  classifier argmax and the (possibly noisy) training label.

The small-loss ranking used by the baseline strategies also lives here.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataIOError, LabelError, NumericError, ShapeError
from .model import decompose_bce


@dataclass
class SelectionConfig:
    """tau is the variance threshold (inclusive); small_loss_keep_ratio is
    the fraction of each batch the small-loss baselines keep."""

    tau: float = 0.001
    small_loss_keep_ratio: float = 0.5

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not (0.0 < self.small_loss_keep_ratio <= 1.0):
            raise ConfigError(
                f"small_loss_keep_ratio must lie in (0, 1], got {self.small_loss_keep_ratio}")


@dataclass
class BatchFlags:
    """Per-sample selection outcome for one batch."""

    detection: np.ndarray  # bool, variance <= tau
    classifier: np.ndarray  # bool, argmax == noisy label
    combined: np.ndarray   # bool, OR of the two
    variance: np.ndarray   # float64 intra-loss variance
    bce: np.ndarray        # float64 per-sample mean BCE


def intra_loss_variance(per_bit: np.ndarray) -> float:
    """Population variance of one sample's per-bit loss terms."""
    d = np.asarray(per_bit, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ShapeError(f"need a non-empty 1-D loss vector, got shape {d.shape}")
    m = d.mean()
    return float(((d - m) ** 2).mean())


def detection_identifier(variance: float, cfg: SelectionConfig) -> bool:
    """Clean iff the per-bit variance does not exceed tau (boundary included)."""
    return bool(variance <= cfg.tau)


def classifier_identifier(probs: np.ndarray, noisy_label: int) -> bool:
    """Clean iff the predicted class (lowest index on ties) matches the label."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError(f"need a 1-D probability vector, got shape {p.shape}")
    if not 0 <= noisy_label < p.size:
        raise LabelError(f"label {noisy_label} out of range [0, {p.size})")
    return bool(int(np.argmax(p)) == int(noisy_label))


def combine_identifiers(det: bool, cls: bool) -> bool:
    return bool(det or cls)


def batch_flags(z: np.ndarray, targets: np.ndarray, probs: np.ndarray,
                noisy_labels: np.ndarray, cfg: SelectionConfig) -> BatchFlags:
    """Vectorized identifiers for a whole batch.

    Uses the same per-bit decomposition as the scalar helpers, so any row of
    the result agrees bit-for-bit with calling those helpers on that row.
    Inputs are trusted (z already clamped, targets already 0/1); this runs
    once per training iteration, so it skips the defensive re-validation
    that :func:`decompose_bce` performs.
    """
    per_bit = np.where(targets == 1.0, z, 1.0 - z)  # (n, K)
    np.log(per_bit, out=per_bit)
    np.negative(per_bit, out=per_bit)
    mean = per_bit.mean(axis=1)
    per_bit -= mean[:, None]
    np.square(per_bit, out=per_bit)
    variance = per_bit.mean(axis=1)
    labels = np.asarray(noisy_labels)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"label out of range [0, {c})")
    det = variance <= cfg.tau
    cls = np.argmax(probs, axis=1) == labels
    return BatchFlags(detection=det, classifier=cls, combined=det | cls,
                      variance=variance, bce=mean)


def small_loss_select(losses: np.ndarray, keep_ratio: float) -> np.ndarray:
    """Boolean mask keeping the ceil(keep_ratio * n) smallest losses.

    Ties and ordering are resolved by a stable sort, so equal losses keep
    their original index order.
    """
    lo = np.asarray(losses, dtype=np.float64)
    if lo.ndim != 1 or lo.size == 0:
        raise ShapeError(f"need a non-empty 1-D loss vector, got shape {lo.shape}")
    if not np.all(np.isfinite(lo)):
        raise NumericError("non-finite loss in small-loss ranking")
    if not (0.0 < keep_ratio <= 1.0):
        raise ConfigError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    k = int(np.ceil(keep_ratio * lo.size))
    order = np.argsort(lo, kind="stable")
    mask = np.zeros(lo.size, dtype=bool)
    mask[order[:k]] = True
    return mask


def auto_keep_ratio(epsilon: float) -> float:
    """Default small-loss keep ratio for a known noise rate: 1 - epsilon,
    clamped to [0.05, 1.0]."""
    return float(min(1.0, max(0.05, 1.0 - epsilon)))


def dump_decisions_csv(path, sample_indices, flags: BatchFlags,
                       clean_mask=None) -> None:
    """Append-style per-epoch dump of every selection decision.

    Columns: sample_index, variance, bce_loss, det_flag, cls_flag,
    combined_flag, is_truly_clean.  The last column is blank when no ground
    truth is available.
    """
    path = Path(path)
    idx = np.asarray(sample_indices)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample_index", "variance", "bce_loss", "det_flag",
                             "cls_flag", "combined_flag", "is_truly_clean"])
            for row, i in enumerate(idx):
                truly = "" if clean_mask is None else int(bool(clean_mask[row]))
                writer.writerow([int(i), repr(float(flags.variance[row])),
                                 repr(float(flags.bce[row])),
                                 int(bool(flags.detection[row])),
                                 int(bool(flags.classifier[row])),
                                 int(bool(flags.combined[row])), truly])
    except OSError as exc:
        raise DataIOError(f"cannot write selection dump {path}: {exc}") from exc
