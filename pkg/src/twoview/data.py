"""Data ingestion (MNIST IDX, CSFM/CSV feature matrices), paired views,
seeded minibatching and the two evaluation metrics."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from twoview.linalg import whiten

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CSFM_MAGIC = b"CSFM"
CSFM_VERSION = 1


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    data: np.ndarray
    pairing_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise FormatError("feature matrix must be 2-D")
        if not np.isfinite(arr).all():
            raise FormatError("feature matrix has non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class PairedDataset:
    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray | None = None
    split: str = "train"

    def __post_init__(self):
        if self.view1.shape[0] != self.view2.shape[0]:
            raise FormatError("paired views differ in row count")
        if self.labels is not None and len(self.labels) != self.view1.shape[0]:
            raise FormatError("label count does not match sample count")

    @property
    def n(self):
        return self.view1.shape[0]


# --------------------------------------------------------------------------
# IDX

def _read_bytes(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def read_idx(path, expected_magic):
    """Parse one big-endian IDX file into a uint8 array."""
    blob = _read_bytes(path)
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(blob) < head:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, blob[4:head])
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - head != count:
        raise FormatError(f"{path}: payload has {len(blob) - head} bytes, header says {count}")
    return np.frombuffer(blob, dtype=np.uint8, offset=head).reshape(dims).copy()


def load_mnist_idx(images_path, labels_path):
    """Return ``(images[n,28,28] uint8, labels[n] uint8)``."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, split):
    """Locate the IDX pair for ``split`` in ``directory`` (plain or .gz)."""
    found = []
    for name in MNIST_FILES[split]:
        for cand in (name, name + ".gz", name.replace("-idx", ".idx")):
            p = os.path.join(directory, cand)
            if os.path.exists(p):
                found.append(p)
                break
        else:
            raise FileNotFoundError(f"{name} not found in {directory}")
    return tuple(found)


def split_halves(images, labels=None, split="train"):
    """Left (columns 0-13) and right (14-27) halves, row-major, scaled to [0, 1]."""
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise FormatError(f"expected n x 28 x 28 images, got {images.shape}")
    n = images.shape[0]
    x = images.astype(np.float64) / 255.0
    left = x[:, :, :14].reshape(n, 392)
    right = x[:, :, 14:].reshape(n, 392)
    return PairedDataset(left, right, None if labels is None else np.asarray(labels), split)


def join_halves(view1, view2):
    """Inverse of :func:`split_halves` (up to the /255 scaling)."""
    n = view1.shape[0]
    return np.concatenate([view1.reshape(n, 28, 14), view2.reshape(n, 28, 14)], axis=2)


def load_mnist_views(directory, split, limit=None):
    images, labels = load_mnist_idx(*find_mnist(directory, split))
    if limit:
        images, labels = images[:limit], labels[:limit]
    return split_halves(images, labels, split)


# --------------------------------------------------------------------------
# feature matrices

def save_feature_matrix(path, X):
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise FormatError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(CSFM_MAGIC)
        fh.write(struct.pack("<BQQ", CSFM_VERSION, X.shape[0], X.shape[1]))
        fh.write(X.tobytes())


def _parse_csv(text, path):
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            if lineno == 1 and not rows:
                continue  # header
            raise FormatError(f"{path}:{lineno}: non-numeric cell") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


def load_feature_matrix(path, pairing_id=None):
    """Load a CSFM binary matrix, or a CSV one (optional header row)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == CSFM_MAGIC:
        if len(blob) < 21:
            raise FormatError(f"{path}: truncated header")
        version, n, d = struct.unpack("<BQQ", blob[4:21])
        if version != CSFM_VERSION:
            raise FormatError(f"{path}: unsupported CSFM version {version}")
        if len(blob) - 21 != 8 * n * d:
            raise FormatError(f"{path}: payload size mismatch ({len(blob) - 21} vs {8 * n * d})")
        data = np.frombuffer(blob, dtype="<f8", offset=21).reshape(n, d).astype(np.float64)
    else:
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: neither CSFM nor text") from None
        data = _parse_csv(text, path)
    return FeatureMatrix(data, pairing_id if pairing_id is not None else os.path.basename(path))


# --------------------------------------------------------------------------
# batching

def batch_iterator(n, batch_size, seed, epoch, drop_last=True):
    """Yield index arrays of a (seed, epoch)-determined permutation of range(n)."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    perm = np.random.default_rng([int(seed), int(epoch)]).permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield perm[start:start + batch_size]


# --------------------------------------------------------------------------
# metrics

def total_cross_correlation(Z1, Z2):
    """Sum of per-dimension correlations after whitening with the set's own stats."""
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z1.shape != Z2.shape:
        raise ValueError(f"shapes differ: {Z1.shape} vs {Z2.shape}")
    W1, _ = whiten(Z1)
    W2, _ = whiten(Z2)
    return float((W1 * W2).mean(axis=0).sum())


def _onehot(y, c):
    out = np.zeros((y.size, c))
    out[np.arange(y.size), y] = 1.0
    return out


def fit_linear_classifier(X, y, n_classes, l2=1e-3, loss="logistic", gtol=1e-6):
    """Full-batch linear classifier; returns ``(W, b)``.

    ``loss="logistic"`` is multinomial cross-entropy; ``loss="hinge"`` is the
    one-vs-rest squared hinge (L2-SVM). Both add ``l2/2 * |W|^2``.
    """
    n, d = X.shape
    Y = _onehot(y, n_classes)
    S = 2.0 * Y - 1.0

    def objective(theta):
        W = theta[: d * n_classes].reshape(d, n_classes)
        b = theta[d * n_classes:]
        F = X @ W + b
        if loss == "logistic":
            F = F - F.max(axis=1, keepdims=True)
            E = np.exp(F)
            Psum = E.sum(axis=1, keepdims=True)
            f = float(np.mean(np.log(Psum[:, 0]) - (F * Y).sum(axis=1)))
            G = (E / Psum - Y) / n
        elif loss == "hinge":
            M = np.maximum(0.0, 1.0 - S * F)
            f = float((M * M).sum() / n)
            G = -2.0 * S * M / n
        else:
            raise ValueError(f"unknown loss {loss!r}")
        f += 0.5 * l2 * float((W * W).sum())
        gW = X.T @ G + l2 * W
        return f, np.concatenate([gW.ravel(), G.sum(axis=0)])

    theta0 = np.zeros(d * n_classes + n_classes)
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "maxiter": 20000})
    W = res.x[: d * n_classes].reshape(d, n_classes)
    return W, res.x[d * n_classes:]


def recognition_accuracy(Z1, Z2, labels, folds=5, seed=0, classifier="logistic"):
    """Cross-view recognition accuracy (%) under k-fold cross-validation.

    Each fold fits a linear classifier on view-1 latents of the remaining
    folds and scores it on the view-2 latents of the held-out fold.
    """
    if labels is None:
        raise ValueError("recognition needs labels")
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).ravel()
    n = y.size
    if Z1.shape[0] != n or Z2.shape[0] != n:
        raise ValueError("labels and latents differ in length")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError("fewer samples than folds")
    classes = np.unique(y)
    ymap = np.searchsorted(classes, y)
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, folds)
    accs = []
    for i in range(folds):
        test = parts[i]
        train = np.concatenate([parts[j] for j in range(folds) if j != i])
        W, b = fit_linear_classifier(Z1[train], ymap[train], classes.size, loss=classifier)
        pred = np.argmax(Z2[test] @ W + b, axis=1)
        accs.append(float(np.mean(pred == ymap[test])))
    return 100.0 * float(np.mean(accs))
