import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnet.errors import DataError, DegenerateLabelsError
from pnet.scoring import ScoreSpec
from pnet.threshold import (
    DEFAULT_GRID,
    as_grid,
    auc,
    filter_matrix,
    filter_row,
    matrix_quantile,
    optimize_thresh_by_loo,
)
from oracles import auc_by_pairs, optimize_by_grid, quantile_by_sort
from conftest import random_kernel, random_positives


def test_quantile_extremes_and_constant(rng):
    K = random_kernel(rng, 7)
    iu = np.triu_indices(7, 1)
    assert matrix_quantile(K, 0) == K[iu].min()
    assert matrix_quantile(K, 1) == K[iu].max()
    C = np.full((5, 5), 0.3)
    np.fill_diagonal(C, 9.0)
    assert all(matrix_quantile(C, q) == 0.3 for q in (0, 0.37, 1))


def test_quantile_matches_sort_oracle(rng):
    K = random_kernel(rng, 10)
    for q in np.linspace(0, 1, 23):
        assert matrix_quantile(K, q) == pytest.approx(quantile_by_sort(K, q), abs=1e-12)
    with pytest.raises(DataError):
        matrix_quantile(np.ones((1, 1)), 0.5)
    with pytest.raises(DataError):
        matrix_quantile(K, 1.2)


def test_filter_matrix(rng):
    K = random_kernel(rng, 9)
    assert np.array_equal(filter_matrix(K, K.min()), K)
    F = filter_matrix(K, K.max() + 1)
    assert np.array_equal(F, np.diag(np.diag(K)))
    theta = np.median(K)
    F = filter_matrix(K, theta)
    for i in range(9):
        for j in range(9):
            expect = K[i, j] if i == j or K[i, j] >= theta else 0.0
            assert F[i, j] == expect
    assert np.array_equal(F, F.T)


def test_filter_matrix_monotone(rng):
    K = random_kernel(rng, 12)
    zero_sets = [filter_matrix(K, t) == 0 for t in np.linspace(0, 1, 9)]
    for a, b in zip(zero_sets, zero_sets[1:]):
        assert np.all(b[a])


def test_filter_row(rng):
    K = random_kernel(rng, 8)
    assert np.array_equal(filter_row(K, 3, K[3].min()), K)
    F = filter_row(K, 3, K.max() + 1)
    off = np.arange(8) != 3
    assert np.all(F[3, off] == 0) and np.all(F[off, 3] == 0) and F[3, 3] == K[3, 3]
    others = np.ix_(off, off)
    assert np.array_equal(F[others], K[others])
    theta = 0.5
    F = filter_row(K, 3, theta)
    for j in range(8):
        expect = K[3, j] if j == 3 or K[3, j] >= theta else 0.0
        assert F[3, j] == expect and F[j, 3] == expect


def test_auc_simple_cases():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auc([0.1, 0.9], [1, 0]) == 0.0
    with pytest.raises(DegenerateLabelsError):
        auc([1.0, 2.0], [1, 1])


def test_auc_exact_against_pairs(rng):
    s = rng.integers(0, 8, 40).astype(float)
    y = random_positives(rng, 40)
    assert auc(s, y) == auc_by_pairs(s.tolist(), y.tolist())


def test_grid_validation():
    as_grid(DEFAULT_GRID)
    for bad in ([], [0.5, 0.5], [0.2, 0.1], [-0.1, 0.5], [0.5, 1.5]):
        with pytest.raises(DataError):
            as_grid(bad)


def test_single_level_grid_is_unfiltered(rng):
    K = random_kernel(rng, 10)
    y = random_positives(rng, 10)
    res = optimize_thresh_by_loo(K, np.flatnonzero(y), np.arange(10), [0.0])
    Kz = K.copy()
    np.fill_diagonal(Kz, 0)
    s = Kz[:, y].max(axis=1)
    assert res.quantile == 0.0 and res.auc == auc_by_pairs(s.tolist(), y.tolist())


@pytest.mark.parametrize("spec", [ScoreSpec("average"), ScoreSpec("nearest"), ScoreSpec("knn", 3),
                                  ScoreSpec("total"), ScoreSpec("diff"), ScoreSpec("dnorm")])
def test_optimizer_matches_bruteforce_grid(rng, spec):
    grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]
    for _ in range(3):
        K = random_kernel(rng, 20)
        y = random_positives(rng, 20, min_each=3)
        res = optimize_thresh_by_loo(K, np.flatnonzero(y), np.arange(20), grid, spec)
        q, a, aucs = optimize_by_grid(K, np.flatnonzero(y), list(range(20)), grid, spec.kind, spec.k)
        assert res.quantile == q
        assert res.auc == pytest.approx(a, abs=1e-12)
        np.testing.assert_allclose(res.aucs, aucs, atol=1e-12)
        assert res.quantile in grid


def test_disconnecting_positives_loses(rng):
    # positives hold the weakest edges, so aggressive filtering cuts them off
    n = 12
    K = np.full((n, n), 0.05) + 0.01 * rng.random((n, n))
    K = (K + K.T) / 2
    pos = np.arange(4)
    K[np.ix_(pos, pos)] = 0.2
    K[4:, 4:] = 0.9
    res = optimize_thresh_by_loo(K, pos, np.arange(n), DEFAULT_GRID)
    q, a, aucs = optimize_by_grid(K, pos, list(range(n)), DEFAULT_GRID, "nearest")
    assert res.quantile == q < 1
    assert aucs[-1] < max(aucs)


def test_tie_takes_smallest_quantile():
    # block structure: every level separates perfectly, so q = 0 wins
    K = np.array([[1, .9, .1, .1], [.9, 1, .1, .1], [.1, .1, 1, .8], [.1, .1, .8, 1]], float)
    res = optimize_thresh_by_loo(K, [0, 1], np.arange(4), DEFAULT_GRID)
    assert res.auc == 1.0 and res.quantile == 0.0


def test_returned_auc_self_consistent(rng):
    K = random_kernel(rng, 15)
    y = random_positives(rng, 15, min_each=2)
    res = optimize_thresh_by_loo(K, np.flatnonzero(y), np.arange(15), DEFAULT_GRID, ScoreSpec("average"))
    F = filter_matrix(K, res.threshold)
    np.fill_diagonal(F, 0)
    s = F[:, y].sum(axis=1) / y.sum()
    assert res.auc == auc(s, y)


def test_degenerate_targets(rng):
    K = random_kernel(rng, 5)
    with pytest.raises(DegenerateLabelsError):
        optimize_thresh_by_loo(K, [0, 1], [0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 14), st.integers(0, 2**31 - 1))
def test_optimizer_output_in_grid(n, seed):
    rng = np.random.default_rng(seed)
    K = random_kernel(rng, n)
    y = random_positives(rng, n)
    res = optimize_thresh_by_loo(K, np.flatnonzero(y), np.arange(n))
    assert res.quantile in DEFAULT_GRID and 0 <= res.auc <= 1
    assert res.auc == res.aucs.max()
    assert res.quantile == DEFAULT_GRID[int(np.argmax(res.aucs))]
