"""Synthetic datasets used by the experiments and tests."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .geometry import Dataset


def mixture_means(d, k_classes, separation, seed=0):
    """``k`` class means whose pairwise distances are all >= ``separation``.

    Gaussian draws are rescaled so the closest pair sits exactly at
    ``separation``.
    """
    if separation < 0:
        raise InvalidInputError("separation must be nonnegative")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((k_classes, d))
    if k_classes > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        closest = dist[~np.eye(k_classes, dtype=bool)].min()
        if closest == 0:
            raise InvalidInputError(f"cannot place {k_classes} distinct means in dimension {d}")
        means *= separation / closest
    return means


def gen_gaussian_mixture(n, d, k_classes, separation=10.0, seed=0, sample_seed=None):
    """Balanced mixture of unit-variance Gaussians.

    The class means depend only on ``seed``; the samples on
    ``sample_seed`` (default ``seed``), so fresh samples from the same
    mixture come from a different ``sample_seed``.
    """
    if not 1 <= k_classes <= n:
        raise InvalidInputError(f"need 1 <= k_classes <= n, got k={k_classes}, n={n}")
    means = mixture_means(d, k_classes, separation, seed)
    rng = np.random.default_rng([seed, 1 if sample_seed is None else 2 + sample_seed])
    labels = rng.permutation(np.arange(n) % k_classes)
    points = means[labels] + rng.standard_normal((n, d))
    return Dataset(points, labels)


def orthogonal_matrix(d, seed=0):
    """Haar-distributed orthogonal matrix (QR of a Gaussian, signs fixed)."""
    rng = np.random.default_rng([seed, 99])
    A = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))[None, :]


def gen_orthogonal_pair(X, seed=0):
    """``Y = X Q`` for a random orthogonal ``Q``; labels are copied."""
    Q = orthogonal_matrix(X.dim, seed)
    return Dataset(X.points @ Q, None if X.labels is None else X.labels.copy(), X.measure.copy())


def gen_swiss_roll(n, noise=0.0, seed=0, bins=8):
    """3-D swiss roll ``(t cos t, h, t sin t)`` with ``t`` in ``[1.5pi, 4.5pi]``.

    Labels quantise ``t`` into ``bins`` equal-width bins.
    """
    if n < 4:
        raise InvalidInputError("swiss roll needs n >= 4")
    rng = np.random.default_rng(seed)
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    h = 21.0 * rng.random(n)
    pts = np.column_stack([t * np.cos(t), h, t * np.sin(t)])
    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    labels = np.minimum(((t - 1.5 * np.pi) / (3.0 * np.pi) * bins).astype(np.int64), bins - 1)
    return Dataset(pts, labels)


def swiss_roll_parameters(n, seed=0):
    """The ``(t, h)`` draws behind ``gen_swiss_roll(n, seed=seed)``."""
    rng = np.random.default_rng(seed)
    t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    h = 21.0 * rng.random(n)
    return t, h


def gen_mirror_clusters(n, d=2, separation=6.0, asymmetry=0.15, seed=0, sample_seed=None):
    """Two clusters that are near mirror images of each other.

    Cluster 1 is the reflection of cluster 0 through the first coordinate
    hyperplane, stretched by ``1 + asymmetry`` along the second axis, so
    the swap of the clusters is an almost-isometry of the point set. Both
    clusters share the same random shape.
    """
    if n < 2 or n % 2:
        raise InvalidInputError("gen_mirror_clusters needs an even n >= 2")
    if d < 2:
        raise InvalidInputError("gen_mirror_clusters needs d >= 2")
    rng = np.random.default_rng([seed, 0 if sample_seed is None else 1 + sample_seed])
    half = n // 2
    shape = rng.standard_normal((half, d))
    shape[:, 0] *= 1.5
    a = shape.copy()
    a[:, 0] += separation / 2
    b = shape.copy()
    b[:, 0] = -b[:, 0] - separation / 2
    b[:, 1] *= 1.0 + asymmetry
    pts = np.vstack([a, b])
    labels = np.repeat([0, 1], half)
    order = rng.permutation(n)
    return Dataset(pts[order], labels[order])
