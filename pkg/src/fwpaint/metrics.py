"""Random-feature Frechet distance (RFFD) and the small linear-algebra kernels behind it.

RFFD replaces the Inception network of the usual FID with a fixed, seeded,
never-trained 3-layer conv net. Values are only comparable to other RFFD
values computed with the same ``metric_seed``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

RIDGE = 1e-6
FEATURE_DIM = 64


# ---------------------------------------------------------------------------
# Jacobi eigen-decomposition
# ---------------------------------------------------------------------------

def symmetric_eigen(M, tol: float = 1e-14, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric matrix by Jacobi rotations.

    Rotations are applied in round-robin order so that each round rotates
    ``n // 2`` disjoint index pairs at once. Returns eigenvalues in
    descending order and the matching eigenvectors as columns.
    """
    A = np.array(M, dtype=np.float64, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"symmetric_eigen needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    scale = max(np.abs(A).max(initial=0.0), 1e-300)
    if np.abs(A - A.T).max(initial=0.0) > 1e-8 * scale:
        raise ValueError("symmetric_eigen: matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n > 1:
        m = n + (n % 2)
        order = list(range(m))
        total = np.linalg.norm(A)
        for _ in range(max_sweeps):
            # summed directly: subtracting the diagonal from the full norm cancels catastrophically
            off = np.linalg.norm(A - np.diag(np.diag(A)))
            if off <= tol * total or total == 0.0:
                break
            for _ in range(m - 1):
                pairs = [(order[i], order[m - 1 - i]) for i in range(m // 2)]
                pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
                p = np.array([a for a, _ in pairs])
                q = np.array([b for _, b in pairs])
                apq = A[p, q]
                active = np.abs(apq) > 1e-300
                theta = np.where(active, (A[q, q] - A[p, p]) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J and V <- V J for the block-diagonal rotation J
                rp, rq = A[p, :], A[q, :]
                A[p, :] = c[:, None] * rp - s[:, None] * rq
                A[q, :] = s[:, None] * rp + c[:, None] * rq
                cp, cq = A[:, p], A[:, q]
                A[:, p] = cp * c - cq * s
                A[:, q] = cp * s + cq * c
                vp, vq = V[:, p], V[:, q]
                V[:, p] = vp * c - vq * s
                V[:, q] = vp * s + vq * c
                order = [order[0]] + [order[-1]] + order[1:-1]
    w = np.diag(A).copy()
    idx = np.argsort(-w, kind="stable")
    return w[idx], V[:, idx]


def singular_values(W) -> np.ndarray:
    """Singular values (descending) as square roots of the eigenvalues of ``W^T W``."""
    W = np.asarray(W, dtype=np.float64)
    lam, _ = symmetric_eigen(W.T @ W)
    return np.sqrt(np.clip(lam, 0.0, None))


def sqrtm_psd(M) -> np.ndarray:
    lam, V = symmetric_eigen(M)
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


# ---------------------------------------------------------------------------
# Gaussian statistics and the Frechet distance
# ---------------------------------------------------------------------------

@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "GaussianStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise DimensionError(f"need a (n >= 2, d) feature matrix, got shape {feats.shape}")
        mu = feats.mean(axis=0)
        centred = feats - mu
        cov = centred.T @ centred / (feats.shape[0] - 1)
        return cls(mu, 0.5 * (cov + cov.T), feats.shape[0])


def frechet_distance(a: GaussianStats, b: GaussianStats, ridge: float = RIDGE) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``, clamped at 0.

    The trace of the matrix square root is taken through the symmetric form
    ``S_a^(1/2) S_b S_a^(1/2)``, whose eigenvalues equal those of ``S_a S_b``.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise DimensionError(f"statistics dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    d = a.mean.shape[0]
    sa = a.cov + ridge * np.eye(d)
    sb = b.cov + ridge * np.eye(d)
    root_a = sqrtm_psd(sa)
    inner = root_a @ sb @ root_a
    lam, _ = symmetric_eigen(0.5 * (inner + inner.T))
    tr_sqrt = float(np.sum(np.sqrt(np.clip(lam, 0.0, None))))
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(sa) + np.trace(sb)) - 2.0 * tr_sqrt
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# random-feature embedder
# ---------------------------------------------------------------------------

class FeatureNet:
    """Fixed random conv net: three stride-2 3x3 conv + ReLU stages, global average pool."""

    widths = (16, 32, FEATURE_DIM)

    def __init__(self, channels: int, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.channels = channels
        self.weights = []
        cin = channels
        for w in self.widths:
            std = np.sqrt(2.0 / (cin * 9))
            self.weights.append(Tensor(rng.normal(0.0, std, (w, cin, 3, 3)).astype(np.float32)))
            cin = w

    def __call__(self, images, batch_size: int = 512) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1] != self.channels:
            raise DimensionError(f"feature net expects (N, {self.channels}, H, W) images, got {images.shape}")
        out = []
        for start in range(0, images.shape[0], batch_size):
            h = Tensor(images[start:start + batch_size])
            for w in self.weights:
                h = T.relu(T.conv2d(h, w, stride=2, padding=1))
            out.append(h.data.mean(axis=(2, 3)))
        return np.concatenate(out, axis=0).astype(np.float64)


def extract_features(images, seed: int = 0) -> np.ndarray:
    images = np.asarray(images)
    return FeatureNet(images.shape[1], seed)(images)


def rffd(real, fake: "np.ndarray | Callable[[int], np.ndarray]", n: int = 2048, seed: int = 0) -> float:
    """RFFD between ``n`` real images and ``n`` fake images.

    ``real`` is an image array or anything with a ``sample(n)`` method;
    ``fake`` an array or a callable returning ``n`` images.
    """
    real_imgs = real.sample(n) if hasattr(real, "sample") else np.asarray(real)[:n]
    fake_imgs = fake(n) if callable(fake) else np.asarray(fake)[:n]
    net = FeatureNet(real_imgs.shape[1], seed)
    a = GaussianStats.from_features(net(real_imgs))
    b = GaussianStats.from_features(net(fake_imgs))
    return frechet_distance(a, b)
