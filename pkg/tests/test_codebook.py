"""Codebook construction tests: Sylvester recursion, pairwise distance
guarantees, label encoding, and the CSV export."""

import csv

import numpy as np
import pytest

from noisylab.codebook import (HadamardCodebook, build_sylvester,
                               default_code_bits, derive_codebook,
                               pairwise_hamming, save_codebook_csv)
from noisylab.errors import CapacityError, ConfigError, LabelError


def kron_hadamard(k):
    """Independent construction via repeated Kronecker products."""
    base = np.array([[1, 1], [1, -1]], dtype=np.int64)
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < k:
        h = np.kron(base, h)
    return h


def hamming(a, b):
    return int(np.sum(a != b))


class TestBuildSylvester:
    def test_base_case(self):
        assert np.array_equal(build_sylvester(1), [[1]])

    def test_order_two(self):
        assert np.array_equal(build_sylvester(2), [[1, 1], [1, -1]])

    def test_order_four_pair_distances(self):
        h = build_sylvester(4)
        dists = [hamming(h[i], h[j]) for i in range(4) for j in range(i + 1, 4)]
        assert len(dists) == 6
        assert all(d == 2 for d in dists)

    def test_rows_orthogonal(self):
        for k in (2, 8, 32):
            h = build_sylvester(k)
            assert np.array_equal(h @ h.T, k * np.eye(k, dtype=np.int64))

    def test_matches_kronecker_oracle(self):
        for k in (2, 4, 16, 64):
            assert np.array_equal(build_sylvester(k), kron_hadamard(k))

    def test_rejects_non_power_of_two(self):
        for k in (0, 3, 6, 12):
            with pytest.raises(ConfigError):
                build_sylvester(k)


class TestDefaultCodeBits:
    @pytest.mark.parametrize("classes,bits", [(2, 16), (8, 16), (9, 32),
                                              (10, 32), (16, 32), (64, 128)])
    def test_table(self, classes, bits):
        assert default_code_bits(classes) == bits


class TestDeriveCodebook:
    def test_ten_classes_sixteen_bits(self):
        cb = derive_codebook(16, 10)
        d = pairwise_hamming(cb.codewords)
        off = d[~np.eye(10, dtype=bool)]
        assert off.size == 90  # 45 unordered pairs, both directions
        assert np.all(off == 8)

    def test_smallest_case(self):
        cb = derive_codebook(2, 2)
        assert np.array_equal(cb.codewords, [[1, 1], [1, -1]])
        assert hamming(cb.codewords[0], cb.codewords[1]) == 1

    def test_full_eight(self):
        cb = derive_codebook(8, 8)
        dists = [hamming(cb.codewords[i], cb.codewords[j])
                 for i in range(8) for j in range(i + 1, 8)]
        assert len(dists) == 28
        assert all(d == 4 for d in dists)

    def test_capacity_error_names_both(self):
        with pytest.raises(CapacityError) as exc:
            derive_codebook(8, 9)
        assert "8" in str(exc.value) and "9" in str(exc.value)

    def test_rejects_bad_bits(self):
        with pytest.raises(ConfigError):
            derive_codebook(12, 4)
        with pytest.raises(ConfigError):
            derive_codebook(1, 1)

    def test_targets_are_bit_remap(self):
        cb = derive_codebook(32, 10)
        assert np.array_equal(cb.targets, (cb.codewords + 1) / 2)
        assert set(np.unique(cb.targets)) <= {0.0, 1.0}

    def test_codewords_injective(self):
        cb = derive_codebook(64, 64)
        assert len({tuple(row) for row in cb.codewords}) == 64


class TestEncodeLabel:
    def test_class_zero_all_ones(self):
        cb = derive_codebook(16, 5)
        cw, tgt = cb.encode_label(0)
        assert np.all(cw == 1) and np.all(tgt == 1.0)

    def test_two_bit_class_one(self):
        cb = derive_codebook(2, 2)
        cw, tgt = cb.encode_label(1)
        assert np.array_equal(cw, [1, -1])
        assert np.array_equal(tgt, [1.0, 0.0])

    def test_row_five_matches_independent_recursion(self):
        cb = derive_codebook(16, 10)
        cw, _ = cb.encode_label(5)
        assert np.array_equal(cw, kron_hadamard(16)[5])

    def test_out_of_range(self):
        cb = derive_codebook(16, 10)
        for y in (-1, 10):
            with pytest.raises(LabelError):
                cb.encode_label(y)

    def test_targets_for_batches(self):
        cb = derive_codebook(16, 4)
        labels = np.array([3, 0, 3, 1])
        tgt = cb.targets_for(labels)
        assert tgt.shape == (4, 16)
        assert np.array_equal(tgt[0], tgt[2])
        with pytest.raises(LabelError):
            cb.targets_for(np.array([0, 4]))


def test_codebook_csv_round_trip(tmp_path):
    cb = derive_codebook(16, 10)
    path = tmp_path / "codes.csv"
    save_codebook_csv(cb, path)
    with open(path, newline="") as fh:
        rows = [[int(v) for v in row] for row in csv.reader(fh)]
    assert np.array_equal(np.array(rows), cb.codewords)
    # LF endings, no header row
    assert b"\r" not in path.read_bytes()
    assert len(rows) == 10
