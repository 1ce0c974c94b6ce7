import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from amortgw.errors import InvalidInputError
from amortgw.evaluation import (
    barycentric_project,
    foscttm,
    label_transfer,
    label_transfer_accuracy,
)
from amortgw.sinkhorn import Coupling
from amortgw.synth import orthogonal_matrix


def _naive_foscttm(U, V):
    n = len(U)
    p = np.zeros(n)
    q = np.zeros(n)
    for i in range(n):
        di = np.linalg.norm(U[i] - V[i])
        p[i] = sum(np.linalg.norm(U[i] - V[j]) < di for j in range(n)) / n
        q[i] = sum(np.linalg.norm(V[i] - U[j]) < di for j in range(n)) / n
    return np.mean((p + q) / 2), p, q


def test_identical_sets_score_zero():
    U = np.random.default_rng(0).standard_normal((50, 3))
    rep = foscttm(U, U)
    assert rep.score == 0.0
    np.testing.assert_array_equal(rep.sorted_curve(), 0.0)


def test_two_point_reversal():
    U = np.array([[0.0], [1.0]])
    assert foscttm(U, U[::-1]).score == 0.5


def test_null_distribution():
    scores = []
    for s in range(10):
        rng = np.random.default_rng(s)
        scores.append(foscttm(rng.standard_normal((200, 2)), rng.standard_normal((200, 2))).score)
    assert all(0.45 <= x <= 0.55 for x in scores)


def test_matches_naive_and_blocking():
    rng = np.random.default_rng(1)
    U, V = rng.standard_normal((37, 2)), rng.standard_normal((37, 2))
    ref, p, q = _naive_foscttm(U, V)
    rep = foscttm(U, V, block_size=5)
    assert rep.score == pytest.approx(ref, abs=1e-15)
    np.testing.assert_allclose(rep.per_point_p, p)
    np.testing.assert_allclose(rep.per_point_q, q)
    assert np.all(np.diff(rep.sorted_curve()) >= 0)


def test_ties_not_counted():
    # V[1] is exactly as far from U[0] as its true match V[0]
    U = np.array([[0.0], [5.0]])
    V = np.array([[1.0], [-1.0]])
    assert foscttm(U, V).per_point_p[0] == 0.0


def test_size_mismatch():
    with pytest.raises(InvalidInputError):
        foscttm(np.zeros((3, 2)), np.zeros((4, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_symmetry_isometry_and_range(seed, n):
    rng = np.random.default_rng(seed)
    U, V = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    a = foscttm(U, V)
    assert a.score == pytest.approx(foscttm(V, U).score, abs=1e-12)
    assert np.all((a.per_point_p >= 0) & (a.per_point_p < 1))
    assert np.all((a.per_point_q >= 0) & (a.per_point_q < 1))
    assert a.score == pytest.approx(np.mean((a.per_point_p + a.per_point_q) / 2))
    Q, t = orthogonal_matrix(3, seed), rng.standard_normal(3)
    assert foscttm(U @ Q + t, V @ Q + t).score == pytest.approx(a.score, abs=1e-12)


def test_projection_examples():
    Y = np.random.default_rng(2).standard_normal((5, 2))
    perm = np.array([3, 0, 4, 1, 2])
    P = np.eye(5)[perm] / 5
    np.testing.assert_allclose(barycentric_project(P, Y), Y[perm], atol=1e-15)
    U = np.full((4, 5), 1 / 20)
    np.testing.assert_allclose(barycentric_project(Coupling(U, np.full(4, 0.25), np.full(5, 0.2)), Y), np.tile(Y.mean(0), (4, 1)))


def test_projection_inside_hull():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((15, 2))
    P = rng.random((20, 15)) ** 4
    P /= P.sum()
    Xh = barycentric_project(P, Y)
    assert np.all(Delaunay(Y).find_simplex(Xh) >= 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_projection_preserves_mass_weighted_mean(seed):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((7, 3))
    P = rng.random((6, 7))
    P /= P.sum()
    Xh = barycentric_project(P, Y)
    np.testing.assert_allclose(P.sum(1) @ Xh, P.sum(0) @ Y, atol=1e-12)


def test_projection_zero_row_named():
    P = np.ones((3, 2))
    P[1] = 0
    with pytest.raises(InvalidInputError, match="row 1"):
        barycentric_project(P, np.zeros((2, 2)))


def test_label_transfer_examples():
    labels = np.array([0, 1, 2, 1])
    assert label_transfer_accuracy(np.eye(4) / 4, labels, labels) == 1.0
    wrong = np.eye(4)[[1, 0, 1, 2]] / 4
    assert label_transfer_accuracy(wrong, labels, labels) == 0.0
    with pytest.raises(InvalidInputError):
        label_transfer(np.eye(2), None, [0, 1])


def test_label_transfer_ties_reported():
    P = np.array([[0.25, 0.25], [0.0, 0.5]])
    res = label_transfer(P, [1, 1], [0, 1])
    assert res.ties and res.predicted[0] == 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        label_transfer_accuracy(P, [1, 1], [0, 1])
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_label_transfer_null():
    for s in range(5):
        rng = np.random.default_rng(s)
        labels = np.arange(500) % 5
        acc = label_transfer(rng.random((500, 500)), labels, rng.permutation(labels)).accuracy
        assert abs(acc - 0.2) <= 0.05
