import gzip
import struct

import numpy as np
import pytest

from asni.data import (BadMagicError, BatchPlan, CountMismatchError, DataError, Dataset, TruncatedFileError,
                       batches, load_cifar10, load_dataset, load_mnist, parse_cifar_batch, parse_idx, write_idx)


def _idx_images(n, rows=2, cols=3, magic=2051):
    body = np.arange(n * rows * cols, dtype=np.uint8)
    return struct.pack(">IIII", magic, n, rows, cols) + body.tobytes()


def test_image_magic_accepted():
    arr = parse_idx(_idx_images(4), 2051)
    assert arr.shape == (4, 2, 3)
    assert arr[1, 0, 0] == 6


def test_label_magic_rejected_as_images():
    with pytest.raises(BadMagicError):
        parse_idx(_idx_images(4, magic=2050), 2051)


def test_truncated_payload():
    with pytest.raises(TruncatedFileError):
        parse_idx(_idx_images(4)[:-1], 2051)
    with pytest.raises(TruncatedFileError):
        parse_idx(b"\x00\x00", 2051)


def test_trailing_bytes_rejected():
    with pytest.raises(DataError, match="trailing"):
        parse_idx(_idx_images(4) + b"\x00", 2051)


def _write_pair(tmp_path, n_img, n_lab, split="train"):
    write_idx(tmp_path / f"{split}-images-idx3-ubyte", np.zeros((n_img, 28, 28), np.uint8))
    write_idx(tmp_path / f"{split}-labels-idx1-ubyte", np.zeros(n_lab, np.uint8))


def test_count_mismatch(tmp_path):
    _write_pair(tmp_path, 5, 4)
    _write_pair(tmp_path, 3, 3, "t10k")
    with pytest.raises(CountMismatchError):
        load_mnist(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DataError):
        load_mnist(tmp_path / "nope")
    with pytest.raises(DataError):
        load_dataset("svhn", tmp_path)


def test_load_mnist_scales_and_accepts_gzip(tmp_path):
    imgs = np.full((3, 28, 28), 255, np.uint8)
    imgs[0] = 0
    write_idx(tmp_path / "train-images-idx3-ubyte", imgs)
    write_idx(tmp_path / "train-labels-idx1-ubyte", np.array([0, 7, 9], np.uint8))
    for stem, arr in (("t10k-images-idx3-ubyte", imgs[:2]), ("t10k-labels-idx1-ubyte", np.array([1, 2], np.uint8))):
        write_idx(tmp_path / "raw", arr)
        (tmp_path / (stem + ".gz")).write_bytes(gzip.compress((tmp_path / "raw").read_bytes()))
    (tmp_path / "raw").unlink()
    train, test = load_mnist(tmp_path)
    assert train.images.shape == (3, 1, 28, 28) and train.images.dtype == np.float32
    assert train.images[0].max() == 0 and train.images[1].min() == 1.0
    assert train.labels.dtype == np.int64 and train.labels.tolist() == [0, 7, 9]
    assert len(test) == 2


def test_cifar_record_stride():
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (4, 3072), dtype=np.uint8)
    labels = np.array([3, 0, 9, 5], np.uint8)
    raw = np.concatenate([labels[:, None], pixels], axis=1).tobytes()
    assert len(raw) == 4 * 3073
    images, lab = parse_cifar_batch(raw)
    assert lab.tolist() == [3, 0, 9, 5]
    assert images.shape == (4, 3, 32, 32)
    # channel-major planes: red first, then green, then blue
    np.testing.assert_array_equal(images[2, 1].ravel(), pixels[2, 1024:2048])
    with pytest.raises(TruncatedFileError):
        parse_cifar_batch(raw[:-1])


def test_cifar_wrong_counts(tmp_path):
    rec = np.zeros((2, 3073), np.uint8).tobytes()
    nested = tmp_path / "cifar-10-batches-bin"
    nested.mkdir()
    for i in range(1, 6):
        (nested / f"data_batch_{i}.bin").write_bytes(rec)
    (nested / "test_batch.bin").write_bytes(rec)
    with pytest.raises(CountMismatchError):
        load_cifar10(tmp_path)


def _ds(n):
    return Dataset(np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1), np.arange(n, dtype=np.int64), "train", "t")


def test_unshuffled_batches_are_identity():
    ds = _ds(6)
    out = list(batches(ds, BatchPlan(0, 1, 2, 6, shuffle=False)))
    assert [b.labels.tolist() for b in out] == [[0, 1], [2, 3], [4, 5]]


def test_remainder_dropped_and_full_epoch_partition():
    ds = _ds(7)
    out = list(batches(ds, BatchPlan(3, 1, 2, 7)))
    assert len(out) == 3
    seen = np.concatenate([b.labels for b in out])
    assert len(set(seen.tolist())) == 6


def test_shuffle_determinism():
    ds = _ds(50)
    a = [b.labels.tolist() for b in batches(ds, BatchPlan(4, 2, 10, 50))]
    b = [b.labels.tolist() for b in batches(ds, BatchPlan(4, 2, 10, 50))]
    c = [b.labels.tolist() for b in batches(ds, BatchPlan(4, 3, 10, 50))]
    assert a == b
    assert a != c


def test_mnist_iteration_count():
    assert BatchPlan(0, 1, 60, 60000).num_batches == 1000


@pytest.mark.parametrize("bs", [0, -1, 7])
def test_bad_batch_size(bs):
    with pytest.raises(ValueError):
        list(batches(_ds(6), BatchPlan(0, 1, bs, 6)))


def test_subset_and_count_check():
    assert len(_ds(10).subset(4)) == 4
    with pytest.raises(CountMismatchError):
        Dataset(np.zeros((3, 1, 1, 1), np.float32), np.zeros(2, np.int64), "train", "t")
