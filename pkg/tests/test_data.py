import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoview.data import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    FormatError,
    batch_iterator,
    fit_linear_classifier,
    join_halves,
    load_feature_matrix,
    load_mnist_idx,
    read_idx,
    recognition_accuracy,
    save_feature_matrix,
    split_halves,
    total_cross_correlation,
)


def idx_bytes(arr, magic):
    dims = arr.shape
    return struct.pack(">I", magic) + struct.pack(">" + "I" * len(dims), *dims) + arr.astype(np.uint8).tobytes()


@pytest.fixture
def fake_mnist(tmp_path, rng):
    images = rng.integers(0, 256, size=(7, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=7, dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lab.gz"
    ip.write_bytes(idx_bytes(images, IDX_IMAGES_MAGIC))
    lp.write_bytes(gzip.compress(idx_bytes(labels, IDX_LABELS_MAGIC)))
    return images, labels, str(ip), str(lp)


def test_idx_roundtrip_plain_and_gzip(fake_mnist):
    images, labels, ip, lp = fake_mnist
    im, lb = load_mnist_idx(ip, lp)
    np.testing.assert_array_equal(im, images)
    np.testing.assert_array_equal(lb, labels)


def test_idx_bad_magic(fake_mnist):
    _, _, ip, _ = fake_mnist
    with pytest.raises(FormatError, match="magic"):
        read_idx(ip, IDX_LABELS_MAGIC)


def test_idx_truncated(tmp_path, rng):
    arr = rng.integers(0, 256, size=(2, 28, 28))
    p = tmp_path / "t"
    p.write_bytes(idx_bytes(arr, IDX_IMAGES_MAGIC)[:-5])
    with pytest.raises(FormatError, match="payload"):
        read_idx(str(p), IDX_IMAGES_MAGIC)
    p.write_bytes(b"\x00\x00")
    with pytest.raises(FormatError):
        read_idx(str(p), IDX_IMAGES_MAGIC)


def test_count_mismatch(tmp_path, rng):
    ip, lp = tmp_path / "i", tmp_path / "l"
    ip.write_bytes(idx_bytes(rng.integers(0, 256, (3, 28, 28)), IDX_IMAGES_MAGIC))
    lp.write_bytes(idx_bytes(np.arange(4), IDX_LABELS_MAGIC))
    with pytest.raises(FormatError):
        load_mnist_idx(str(ip), str(lp))


def test_halves_reassemble_bit_exact(fake_mnist):
    images, labels, _, _ = fake_mnist
    ds = split_halves(images, labels)
    assert ds.view1.shape == (7, 392) and ds.view2.shape == (7, 392)
    assert ds.view1.max() <= 1.0
    back = np.rint(join_halves(ds.view1, ds.view2) * 255).astype(np.uint8)
    np.testing.assert_array_equal(back, images)
    # left half is columns 0..13 in row-major order
    assert ds.view1[0, 14] == images[0, 1, 0] / 255.0


def test_halves_reject_wrong_shape():
    with pytest.raises(FormatError):
        split_halves(np.zeros((2, 28, 27)))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 20), d=st.integers(1, 9), seed=st.integers(0, 2**31))
def test_csfm_roundtrip_bit_exact(tmp_path_factory, n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d)) * 1e3
    p = tmp_path_factory.mktemp("csfm") / "x.csfm"
    save_feature_matrix(str(p), X)
    Y = load_feature_matrix(str(p)).data
    assert Y.tobytes() == X.tobytes()


def test_csfm_corruption(tmp_path):
    p = tmp_path / "x.csfm"
    save_feature_matrix(str(p), np.ones((3, 2)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError, match="payload"):
        load_feature_matrix(str(p))


def test_csv_with_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n3.5,-4\n")
    fm = load_feature_matrix(str(p))
    np.testing.assert_array_equal(fm.data, [[1, 2], [3.5, -4]])
    assert fm.pairing_id == "x.csv"


@pytest.mark.parametrize("text", ["1,2\n3\n", "1,2\nx,4\n", "", "1,nan\n"])
def test_csv_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(FormatError):
        load_feature_matrix(str(p))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 200), bs=st.integers(2, 50), seed=st.integers(0, 100), epoch=st.integers(0, 5))
def test_batches_partition_a_permutation(n, bs, seed, epoch):
    if bs > n:
        with pytest.raises(ValueError):
            list(batch_iterator(n, bs, seed, epoch))
        return
    batches = list(batch_iterator(n, bs, seed, epoch))
    assert all(len(b) == bs for b in batches)
    assert len(batches) == n // bs
    flat = np.concatenate(batches)
    assert len(set(flat.tolist())) == flat.size
    again = list(batch_iterator(n, bs, seed, epoch))
    assert all((a == b).all() for a, b in zip(batches, again))
    full = np.concatenate(list(batch_iterator(n, bs, seed, epoch, drop_last=False)))
    assert sorted(full.tolist()) == list(range(n))


def test_total_correlation_bounds(rng):
    Z = rng.standard_normal((500, 4))
    assert total_cross_correlation(Z, Z) == pytest.approx(4.0)
    assert total_cross_correlation(Z, -Z) == pytest.approx(-4.0)
    assert abs(total_cross_correlation(Z, rng.standard_normal((500, 4)))) < 0.5
    with pytest.raises(ValueError):
        total_cross_correlation(Z, Z[:, :3])


@pytest.mark.parametrize("loss", ["logistic", "hinge"])
def test_classifier_separates_blobs(loss, rng):
    centers = np.array([[4, 0], [0, 4], [-4, -4]])
    y = rng.integers(0, 3, 300)
    X = centers[y] + rng.standard_normal((300, 2))
    W, b = fit_linear_classifier(X, y, 3, loss=loss)
    assert np.mean(np.argmax(X @ W + b, axis=1) == y) > 0.97


def test_classifier_gradient_is_exact(rng):
    # the analytic objective gradient drives L-BFGS; check it by differences
    from scipy.optimize import check_grad

    X, y = rng.standard_normal((40, 3)), rng.integers(0, 3, 40)
    import twoview.data as data

    captured = {}
    orig = data.minimize

    def spy(fun, x0, **kw):
        captured["fun"] = fun
        return orig(fun, x0, **kw)

    data.minimize = spy
    try:
        for loss in ("logistic", "hinge"):
            fit_linear_classifier(X, y, 3, loss=loss)
            f = captured["fun"]
            theta = rng.standard_normal(12)
            assert check_grad(lambda t: f(t)[0], lambda t: f(t)[1], theta) < 1e-5
    finally:
        data.minimize = orig


def test_recognition_accuracy(rng):
    y = rng.integers(0, 4, 400)
    centers = rng.standard_normal((4, 3)) * 5
    Z1 = centers[y] + rng.standard_normal((400, 3))
    Z2 = centers[y] + rng.standard_normal((400, 3))
    assert recognition_accuracy(Z1, Z2, y, folds=5) > 95
    assert recognition_accuracy(Z1, rng.permutation(Z2), y, folds=5) < 50
    with pytest.raises(ValueError):
        recognition_accuracy(Z1, Z2, None)
