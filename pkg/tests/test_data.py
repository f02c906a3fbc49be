import gzip
import hashlib
import struct

import numpy as np
import pytest

from conftest import needs_mnist
from flnn.data import (
    Dataset,
    batches,
    load_idx,
    load_mnist,
    subset,
    to_idx_bytes,
)


def synth_idx(tmp_path, count=20, rows=4, cols=3, gz=False, seed=0,
              image_magic=2051, label_magic=2049, truncate=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(count, rows * cols), dtype=np.uint8)
    labels = rng.integers(0, 5, size=count, dtype=np.uint8)
    img = struct.pack(">IIII", image_magic, count, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", label_magic, count) + labels.tobytes()
    if truncate:
        img = img[:-truncate]
    suffix = ".gz" if gz else ""
    ip = tmp_path / f"images-idx3-ubyte{suffix}"
    lp = tmp_path / f"labels-idx1-ubyte{suffix}"
    ip.write_bytes(gzip.compress(img) if gz else img)
    lp.write_bytes(gzip.compress(lab) if gz else lab)
    return ip, lp, pixels, labels


class TestLoadIdx:
    def test_shapes_and_normalization(self, tmp_path):
        ip, lp, pixels, labels = synth_idx(tmp_path)
        ds = load_idx(ip, lp)
        assert ds.inputs.shape == (12, 20)
        assert ds.labels.shape == (5, 20)
        assert ds.inputs.max() <= 1.0 and ds.inputs.min() >= 0.0
        # byte 255 -> 1.0, byte 0 -> 0.0
        np.testing.assert_allclose(ds.inputs * 255.0, pixels.T, atol=1e-12)

    def test_one_hot_labels(self, tmp_path):
        ip, lp, _, labels = synth_idx(tmp_path)
        ds = load_idx(ip, lp)
        assert np.all(ds.labels.sum(axis=0) == 1.0)
        np.testing.assert_array_equal(ds.label_indices, labels)

    def test_gzip_variant_matches_plain(self, tmp_path):
        ip, lp, _, _ = synth_idx(tmp_path, seed=3)
        # same content, gzipped alongside
        izp = tmp_path / "img.gz"
        lzp = tmp_path / "lab.gz"
        izp.write_bytes(gzip.compress(ip.read_bytes()))
        lzp.write_bytes(gzip.compress(lp.read_bytes()))
        a = load_idx(ip, lp)
        b = load_idx(izp, lzp)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_bad_image_magic(self, tmp_path):
        ip, lp, _, _ = synth_idx(tmp_path, image_magic=2052)
        with pytest.raises(ValueError, match="magic"):
            load_idx(ip, lp)

    def test_bad_label_magic(self, tmp_path):
        ip, lp, _, _ = synth_idx(tmp_path, label_magic=123)
        with pytest.raises(ValueError, match="magic"):
            load_idx(ip, lp)

    def test_truncated(self, tmp_path):
        ip, lp, _, _ = synth_idx(tmp_path, truncate=5)
        with pytest.raises(ValueError, match="pixel"):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, _, _, _ = synth_idx(tmp_path, count=20)
        lp = tmp_path / "other-labels"
        lp.write_bytes(struct.pack(">II", 2049, 21) + np.zeros(21, dtype=np.uint8).tobytes())
        with pytest.raises(ValueError, match="mismatch"):
            load_idx(ip, lp)

    def test_round_trip_bit_exact(self, tmp_path):
        ip, lp, _, _ = synth_idx(tmp_path, seed=9)
        ds = load_idx(ip, lp)
        img, lab = to_idx_bytes(ds)
        assert img == ip.read_bytes()
        assert lab == lp.read_bytes()

    def test_center_flag(self, tmp_path):
        ip, lp, _, _ = synth_idx(tmp_path)
        ds = load_idx(ip, lp, center=True)
        np.testing.assert_allclose(ds.inputs.mean(axis=1), 0.0, atol=1e-12)


class TestBatches:
    def _ds(self, m=10):
        return Dataset(np.zeros((2, m)), np.zeros((3, m)), "train")

    def test_partition_sizes(self):
        sl = batches(self._ds(10), 4, seed=0, epoch=0)
        assert [len(s) for s in sl] == [4, 4, 2]

    def test_deterministic(self):
        a = batches(self._ds(50), 7, seed=3, epoch=5)
        b = batches(self._ds(50), 7, seed=3, epoch=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_epochs_differ(self):
        a = np.concatenate(batches(self._ds(50), 7, seed=3, epoch=0))
        b = np.concatenate(batches(self._ds(50), 7, seed=3, epoch=1))
        assert not np.array_equal(a, b)

    def test_exact_cover(self):
        sl = batches(self._ds(23), 5, seed=1, epoch=2)
        allidx = np.sort(np.concatenate(sl))
        np.testing.assert_array_equal(allidx, np.arange(23))


class TestSubset:
    def _ds(self, m=40):
        rng = np.random.default_rng(0)
        labels = np.zeros((4, m))
        labels[rng.integers(0, 4, m), np.arange(m)] = 1.0
        return Dataset(rng.random((3, m)), labels, "train")

    def test_full_is_permutation(self):
        ds = self._ds()
        out = subset(ds, 40, seed=1)
        assert sorted(map(tuple, out.inputs.T.tolist())) == sorted(
            map(tuple, ds.inputs.T.tolist())
        )

    def test_k_bounds(self):
        ds = self._ds()
        with pytest.raises(ValueError):
            subset(ds, 0, seed=1)
        with pytest.raises(ValueError):
            subset(ds, 41, seed=1)

    def test_reproducible_hash(self):
        ds = self._ds()
        out = subset(ds, 10, seed=7)
        digest = hashlib.sha256(out.inputs.tobytes() + out.labels.tobytes()).hexdigest()
        again = subset(ds, 10, seed=7)
        digest2 = hashlib.sha256(again.inputs.tobytes() + again.labels.tobytes()).hexdigest()
        assert digest == digest2


@needs_mnist
class TestRealMnist:
    def test_train_split(self):
        ds = load_mnist(split="train")
        assert ds.inputs.shape == (784, 60000)
        assert ds.labels.shape == (10, 60000)
        assert np.all(ds.labels.sum(axis=0) == 1.0)
        assert 0.0 <= ds.inputs.min() and ds.inputs.max() <= 1.0

    def test_test_split(self):
        ds = load_mnist(split="test")
        assert ds.inputs.shape == (784, 10000)
        # canonical first labels of the evaluation split
        np.testing.assert_array_equal(
            ds.label_indices[:10], [7, 2, 1, 0, 4, 1, 4, 9, 5, 9]
        )
