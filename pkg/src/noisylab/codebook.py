"""Hadamard class codebooks.

Classes are encoded as rows of a Sylvester-type Hadamard matrix.  Any two
distinct rows of such a matrix agree in exactly half their positions, so
every pair of class codewords sits at Hamming distance K/2: a wrong label
flips a fixed, large number of target bits, which is what the detection
criterion keys on.

Codewords are bipolar (+1/-1).  Training targets are the same rows remapped
bitwise via b -> (b+1)/2 into {0,1}, so they can supervise a detection head
whose outputs live in (0,1).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, LabelError, NoisyLabError


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def build_sylvester(k: int) -> np.ndarray:
    """Sylvester construction: H1 = [[1]], H2m = [[H, H], [H, -H]].

    Returns a k x k matrix of +/-1 (int64) with mutually orthogonal rows.
    """
    if not _is_power_of_two(k):
        raise ConfigError(f"Sylvester order must be a power of two, got {k}")
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < k:
        h = np.block([[h, h], [h, -h]])
    return h


def default_code_bits(num_classes: int) -> int:
    """Smallest power of two >= max(16, 2 * num_classes)."""
    need = max(16, 2 * num_classes)
    k = 1
    while k < need:
        k *= 2
    return k


@dataclass
class HadamardCodebook:
    """Class-to-codeword mapping with guaranteed pairwise distance K/2.

    code_bits:   K, the codeword length (power of two >= 2)
    num_classes: C <= K
    codewords:   C x K matrix of +/-1
    targets:     C x K matrix of {0, 1} floats, the bitwise remap of codewords
    """

    code_bits: int
    num_classes: int
    codewords: np.ndarray
    targets: np.ndarray

    def encode_label(self, y: int):
        """Return (codeword, target) for class ``y``."""
        if not 0 <= int(y) < self.num_classes:
            raise LabelError(f"label {y} out of range [0, {self.num_classes})")
        y = int(y)
        return self.codewords[y].copy(), self.targets[y].copy()

    def targets_for(self, labels: np.ndarray) -> np.ndarray:
        """Target rows for an integer label array (validated)."""
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            bad = labels[(labels < 0) | (labels >= self.num_classes)][0]
            raise LabelError(f"label {bad} out of range [0, {self.num_classes})")
        return self.targets[labels]


def pairwise_hamming(codewords: np.ndarray) -> np.ndarray:
    """All-pairs Hamming distances between +/-1 rows (exact integers)."""
    cw = np.asarray(codewords, dtype=np.int64)
    k = cw.shape[1]
    return (k - cw @ cw.T) // 2


def derive_codebook(code_bits: int, num_classes: int) -> HadamardCodebook:
    """Select the first ``num_classes`` rows of the order-``code_bits``
    Sylvester matrix as codewords and validate the distance invariant by
    an exhaustive pair check.

    Row selection is deterministic (rows 0..C-1): the distance guarantee
    holds for any subset, so nothing is lost and replays stay identical.
    """
    if not _is_power_of_two(code_bits) or code_bits < 2:
        raise ConfigError(f"code_bits must be a power of two >= 2, got {code_bits}")
    if num_classes < 1:
        raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
    if num_classes > code_bits:
        raise CapacityError(
            f"codebook with {code_bits} bits holds at most {code_bits} classes, "
            f"got {num_classes}")
    h = build_sylvester(code_bits)
    codewords = h[:num_classes].copy()
    dist = pairwise_hamming(codewords)
    off_diag = dist[~np.eye(num_classes, dtype=bool)]
    if off_diag.size and not np.all(off_diag == code_bits // 2):
        raise NoisyLabError("codebook construction violated the K/2 distance invariant")
    targets = ((codewords + 1) // 2).astype(np.float64)
    return HadamardCodebook(code_bits, num_classes, codewords, targets)


def save_codebook_csv(cb: HadamardCodebook, path) -> None:
    """Write the codebook as CSV: one row per class, entries +/-1."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in cb.codewords:
            writer.writerow(int(v) for v in row)
