import gzip
import struct

import numpy as np
import pytest

from mzisim.mnist import (
    IdxError,
    load_idx_images,
    load_idx_labels,
    load_mnist64,
    mnist64_preprocess,
    write_idx_images,
    write_idx_labels,
)


class TestIdxFormat:
    def test_image_roundtrip_plain_and_gzip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.uniform(0, 1, (5, 28, 28))
        for name in ("imgs.idx", "imgs.idx.gz"):
            path = tmp_path / name
            write_idx_images(path, images)
            loaded = load_idx_images(path)
            assert loaded.shape == (5, 28, 28)
            assert np.max(np.abs(loaded - images)) <= 1.0 / 255.0

    def test_label_roundtrip(self, tmp_path):
        labels = np.array([3, 1, 4, 1, 5, 9])
        path = tmp_path / "labels.idx.gz"
        write_idx_labels(path, labels)
        np.testing.assert_array_equal(load_idx_labels(path), labels)

    def test_big_endian_magic(self, tmp_path):
        path = tmp_path / "imgs.idx"
        write_idx_images(path, np.zeros((1, 28, 28)))
        with open(path, "rb") as fh:
            magic, count, rows, cols = struct.unpack(">IIII", fh.read(16))
        assert (magic, count, rows, cols) == (2051, 1, 28, 28)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.idx"
        with open(path, "wb") as fh:
            fh.write(struct.pack(">IIII", 1234, 1, 28, 28))
            fh.write(bytes(28 * 28))
        with pytest.raises(IdxError):
            load_idx_images(path)
        with pytest.raises(IdxError):
            load_idx_labels(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "short.idx.gz"
        with gzip.open(path, "wb") as fh:
            fh.write(struct.pack(">IIII", 2051, 2, 28, 28))
            fh.write(bytes(28 * 28))  # only one image worth of pixels
        with pytest.raises(IdxError):
            load_idx_images(path)


class TestPreprocess:
    def test_constant_image_is_uniform(self):
        v = mnist64_preprocess(np.full((28, 28), 0.5))
        # center padding dilutes edge blocks, but all interior blocks agree
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12
        inner = v.reshape(8, 8)[1:7, 1:7]
        assert np.ptp(np.abs(inner)) < 1e-12

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (28, 28))
        np.testing.assert_array_equal(mnist64_preprocess(img), mnist64_preprocess(img))

    def test_unit_norm_and_zero_phase(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            v = mnist64_preprocess(rng.uniform(0, 1, (28, 28)))
            assert abs(np.linalg.norm(v) - 1.0) < 1e-12
            assert np.all(np.abs(np.imag(v)) == 0.0)

    def test_zero_image_rejected(self):
        with pytest.raises(IdxError):
            mnist64_preprocess(np.zeros((28, 28)))

    def test_wrong_shape_rejected(self):
        with pytest.raises(IdxError):
            mnist64_preprocess(np.zeros((8, 8)))

    def test_out_of_range_rejected(self):
        with pytest.raises(IdxError):
            mnist64_preprocess(np.full((28, 28), 1.5))


class TestLoadMnist64:
    def test_prepared_arrays(self, tmp_path):
        from _digits import write_digit_idx

        paths = write_digit_idx(tmp_path, n_train=30, n_test=10, seed=0)
        inputs, labels = load_mnist64(paths["train_images"], paths["train_labels"])
        assert inputs.shape == (30, 64)
        assert labels.shape == (30, 10)
        np.testing.assert_allclose(np.linalg.norm(inputs, axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(labels.sum(axis=1), 1.0)

    def test_count_mismatch_rejected(self, tmp_path):
        write_idx_images(tmp_path / "im.idx", np.zeros((2, 28, 28)) + 0.5)
        write_idx_labels(tmp_path / "lab.idx", np.array([1, 2, 3]))
        with pytest.raises(IdxError):
            load_mnist64(tmp_path / "im.idx", tmp_path / "lab.idx")
