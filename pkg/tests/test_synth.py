import numpy as np
import pytest

from amortgw.errors import InvalidInputError
from amortgw.geometry import pairwise_distances
from amortgw.synth import (
    gen_gaussian_mixture,
    gen_mirror_clusters,
    gen_orthogonal_pair,
    gen_swiss_roll,
    mixture_means,
    orthogonal_matrix,
)


def test_mixture_means_separation():
    M = mixture_means(5, 8, 7.0, seed=1)
    D = pairwise_distances(M).values
    assert D[~np.eye(8, dtype=bool)].min() == pytest.approx(7.0)


def test_mixture_balanced_and_fresh_samples():
    a = gen_gaussian_mixture(100, 3, 4, seed=2)
    b = gen_gaussian_mixture(100, 3, 4, seed=2, sample_seed=0)
    assert np.bincount(a.labels).tolist() == [25] * 4
    assert not np.allclose(a.points, b.points)
    # same means: class centroids agree
    for k in range(4):
        assert np.linalg.norm(a.points[a.labels == k].mean(0) - b.points[b.labels == k].mean(0)) < 1.0
    with pytest.raises(InvalidInputError):
        gen_gaussian_mixture(3, 2, 4)


def test_orthogonal_pair_is_isometric():
    Q = orthogonal_matrix(6, 3)
    np.testing.assert_allclose(Q.T @ Q, np.eye(6), atol=1e-12)
    X = gen_gaussian_mixture(30, 6, 3, seed=4)
    Y = gen_orthogonal_pair(X, 3)
    np.testing.assert_allclose(pairwise_distances(Y).values, pairwise_distances(X).values, atol=1e-10)
    np.testing.assert_array_equal(Y.labels, X.labels)


def test_swiss_roll_shape_and_labels():
    ds = gen_swiss_roll(80, seed=5, bins=4)
    assert ds.points.shape == (80, 3)
    assert set(ds.labels) == {0, 1, 2, 3}


def test_mirror_clusters():
    ds = gen_mirror_clusters(40, asymmetry=0.0, seed=6)
    a = ds.points[ds.labels == 0]
    b = ds.points[ds.labels == 1]
    # with no asymmetry cluster 1 is the exact reflection of cluster 0
    refl = b * np.array([-1.0, 1.0])
    da = np.sort(pairwise_distances(a).values.ravel())
    db = np.sort(pairwise_distances(refl).values.ravel())
    np.testing.assert_allclose(da, db, atol=1e-12)
    assert np.all(a[:, 0] > b[:, 0].max() - 1e-9) or a[:, 0].mean() > 0
    with pytest.raises(InvalidInputError):
        gen_mirror_clusters(7)
