"""Common/individual scores, input-gradient maps, the contractive penalty and
PGM export of saliency maps."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from twoview import autodiff as ad
from twoview.autodiff import Tensor
from twoview.linalg import EPS_NORM, orthogonalize_pair


@dataclass
class ScoreResult:
    value: float
    kind: str
    maps: dict = field(default_factory=dict)  # view index -> gradient map
    degenerate: bool = False


def common_score(z1, z2):
    """``cos(z1, z2) * (z1 . z2)``; 0 when either vector is (near) zero."""
    z1 = np.asarray(z1, dtype=np.float64).ravel()
    z2 = np.asarray(z2, dtype=np.float64).ravel()
    n1, n2 = np.linalg.norm(z1), np.linalg.norm(z2)
    if n1 < EPS_NORM or n2 < EPS_NORM:
        return 0.0
    dot = float(z1 @ z2)
    return (dot / (n1 * n2)) * dot


def individual_score(h, z1, z2):
    """Half the squared norm of ``h`` after projecting out span{z1, z2}."""
    h = np.asarray(h, dtype=np.float64).ravel()
    P = orthogonalize_pair(z1, z2).projector
    if h.size != P.shape[0]:
        raise ValueError(
            f"individual latent has dim {h.size} but the common latent has dim {P.shape[0]}"
        )
    ph = P @ h
    return 0.5 * float(ph @ ph)


def contractive_penalty(grad, alpha):
    """Elastic-net norm ``alpha*|g|_1 + (1-alpha)*|g|_2^2``."""
    g = np.asarray(grad, dtype=np.float64)
    return alpha * float(np.abs(g).sum()) + (1.0 - alpha) * float((g * g).sum())


def common_score_rows(Z1, Z2):
    """Row-wise common score as a graph node; degenerate rows score 0."""
    dot = (Z1 * Z2).sum(axis=1)
    sq1 = (Z1 * Z1).sum(axis=1)
    sq2 = (Z2 * Z2).sum(axis=1)
    ok = (sq1.data >= EPS_NORM**2) & (sq2.data >= EPS_NORM**2)
    s = dot / (sq1.sqrt() * sq2.sqrt()) * dot
    if not ok.all():
        s = s * Tensor(ok.astype(np.float64))
    return s, ~ok


def contractive_penalty_rows(G, alpha):
    """Per-row elastic-net penalty of a gradient matrix, as a graph node."""
    terms = []
    if alpha > 0:
        terms.append(G.abs().sum(axis=1) * alpha)
    if alpha < 1:
        terms.append((G * G).sum(axis=1) * (1.0 - alpha))
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def _rows(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise ad.ShapeError(f"expected inputs of width {d}, got {x.shape}")
    return x


def common_maps(common, X1, X2):
    """Scores and input gradients for a batch of pairs (eval mode).

    Rows are independent in eval mode, so the gradient of the summed score
    gives every per-sample map at once. Returns ``(scores, G1, G2, degenerate)``.
    """
    X1 = _rows(X1, common.encoder1.in_dim)
    X2 = _rows(X2, common.encoder2.in_dim)
    if X1.shape[0] != X2.shape[0]:
        raise ad.ShapeError("paired batches differ in length")
    x1 = Tensor(X1, requires_grad=True)
    x2 = Tensor(X2, requires_grad=True)
    s, bad = common_score_rows(common.encoder1(x1), common.encoder2(x2))
    G1, G2 = ad.grad(s.sum(), [x1, x2])
    return s.data.copy(), G1.data, G2.data, bad


def grad_map_common(common, x1, x2):
    """Common score of one pair and its gradients w.r.t. both inputs."""
    s, G1, G2, bad = common_maps(common, x1, x2)
    return ScoreResult(float(s[0]), "common", {1: G1[0], 2: G2[0]}, bool(bad[0]))


def individual_maps(individual, common, X_view, X_other, view):
    """Individual scores and input gradients for a batch (eval mode).

    The projector is built from the common latents of both views and held
    constant while differentiating.
    """
    if view not in (1, 2):
        raise ValueError("view must be 1 or 2")
    enc_h = individual.encoder(view)
    if enc_h.out_dim != common.k:
        raise ValueError(
            f"individual scores need q == k (q={enc_h.out_dim}, k={common.k})"
        )
    Xv = _rows(X_view, enc_h.in_dim)
    other = 2 if view == 1 else 1
    Xo = _rows(X_other, common.encoder(other).in_dim)
    if Xv.shape[0] != Xo.shape[0]:
        raise ad.ShapeError("paired batches differ in length")
    Zv = common.encoder(view).encode(Xv)
    Zo = common.encoder(other).encode(Xo)
    Z1, Z2 = (Zv, Zo) if view == 1 else (Zo, Zv)
    n, k = Xv.shape[0], common.k
    projectors = np.empty((n, k, k))
    bad = np.zeros(n, dtype=bool)
    for j in range(n):
        if np.linalg.norm(Z1[j]) < EPS_NORM:
            # projector undefined; the map is reported as zero
            projectors[j] = 0.0
            bad[j] = True
        else:
            projectors[j] = orthogonalize_pair(Z1[j], Z2[j]).projector
    x = Tensor(Xv, requires_grad=True)
    H = enc_h(x)
    ph = _batched_project(H, projectors)
    r = (ph * ph).sum(axis=1) * 0.5
    (G,) = ad.grad(r.sum(), [x])
    return r.data.copy(), G.data, bad


def _batched_project(H, projectors):
    n, k = H.shape
    return (H.reshape((n, 1, k)) * Tensor(projectors)).sum(axis=2)


def grad_map_individual(individual, common, x_view, x_other, view):
    r, G, bad = individual_maps(individual, common, x_view, x_other, view)
    return ScoreResult(float(r[0]), "individual", {view: G[0]}, bool(bad[0]))


# --------------------------------------------------------------------------
# PGM export

def saliency_bytes(grad_map, rows, cols):
    """|map| min-max scaled to 0..255 (all 128 when the range is zero)."""
    a = np.abs(np.asarray(grad_map, dtype=np.float64).ravel())
    if a.size != rows * cols:
        raise ValueError(f"map of size {a.size} does not fit a {rows}x{cols} layout")
    lo, hi = a.min(), a.max()
    if hi - lo <= 0.0:
        return np.full((rows, cols), 128, dtype=np.uint8)
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8).reshape(rows, cols)


def write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def export_saliency(grad_map, layout, path):
    """Write ``|grad_map|`` as an 8-bit binary PGM with ``layout=(rows, cols)``."""
    rows, cols = layout
    pixels = saliency_bytes(grad_map, rows, cols)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise OSError(f"directory does not exist: {parent}")
    write_pgm(path, pixels)
    return pixels


def read_pgm(path):
    """Parse a binary (P5, maxval 255) PGM into a uint8 matrix."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    pos += 1
    data = blob[pos:pos + rows * cols]
    if len(data) != rows * cols:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols).copy()
