import itertools
import math

import numpy as np
import pytest
import torch

from ccsd import metrics as M
from ccsd.complex import ComplexTensor, DimConstraints
from ccsd.data import gen_grid_small

from conftest import random_complex, random_graph
from oracles import GRAPHLETS, brute_clustering, brute_orbits, lp_transport, ref_graphlet, relabel


# --- emd / kernels / mmd ---------------------------------------------------

def test_emd_examples():
    assert M.emd_1d([0.2, 0.8], [0.2, 0.8]) == 0
    assert M.emd_1d([1, 0], [0, 1]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        M.emd_1d([1, 0], [1, 0, 0])


def test_emd_matches_transport_lp(rng):
    for _ in range(60):
        k = int(rng.integers(1, 7))
        p = rng.random(k); p /= p.sum()
        q = rng.random(k); q /= q.sum()
        assert M.emd_1d(p, q) == pytest.approx(lp_transport(p, q), abs=1e-9)


def test_gaussian_emd_kernel():
    assert M.gaussian_emd_kernel([1, 0], [1, 0]) == 1.0
    assert M.gaussian_emd_kernel([1, 0], [0, 1], sigma=1.0) == pytest.approx(math.exp(-0.5), abs=1e-12)
    vals = [M.gaussian_emd_kernel([1, 0, 0, 0], np.eye(4)[j]) for j in range(4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    for s in (0, -1):
        with pytest.raises(ValueError):
            M.gaussian_emd_kernel([1], [1], sigma=s)
        with pytest.raises(ValueError):
            M.gaussian_kernel([1], [1], sigma=s)


def test_mmd_properties(rng):
    P = [rng.random(int(rng.integers(2, 6))) for _ in range(5)]
    Q = [rng.random(int(rng.integers(2, 6))) for _ in range(7)]
    for kernel in ("gaussian", "gaussian_emd"):
        assert M.mmd(P, P, kernel) == pytest.approx(0, abs=1e-12)
        assert M.mmd(P, Q, kernel) == pytest.approx(M.mmd(Q, P, kernel), abs=1e-12)
        assert M.mmd(P, Q, kernel) >= 0
    with pytest.raises(ValueError):
        M.mmd([], Q)


def test_mmd_singletons_closed_form():
    x, y = np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.25, 0.75])
    k = M.gaussian_kernel(x, y, 1.0)
    assert M.mmd([x], [y], "gaussian", 1.0) == pytest.approx(2 - 2 * k, abs=1e-12)
    assert M.mmd([x], [x], "gaussian", 1.0) == 0


# --- graph statistics ------------------------------------------------------

def test_degree_examples():
    tri = np.ones((3, 3)) - np.eye(3)
    assert M.degree_histogram(tri).tolist() == [0, 0, 3]
    p3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert M.degree_histogram(p3).tolist() == [0, 2, 1]
    assert M.degree_histogram(np.zeros((4, 4))).tolist() == [4, 0, 0, 0]


def test_clustering_examples():
    tri = np.ones((3, 3)) - np.eye(3)
    assert M.clustering_coefficients(tri).tolist() == [1, 1, 1]
    star = np.zeros((4, 4)); star[0, 1:] = star[1:, 0] = 1
    assert M.clustering_coefficients(star)[0] == 0
    h = M.clustering_histogram(tri, bins=10)
    assert h[-1] == 3 and h.sum() == 3


def test_clustering_matches_triple_enumeration(rng):
    for _ in range(40):
        n = int(rng.integers(1, 9))
        a = random_graph(rng, n, rng.uniform(0.2, 0.9))
        c = M.clustering_coefficients(a)
        np.testing.assert_allclose(c, brute_clustering(a), atol=1e-12)
        assert np.all((c >= 0) & (c <= 1))


def test_orbit_examples():
    assert not M.orbit_counts(np.ones((3, 3)) - np.eye(3)).any()
    k4 = M.orbit_counts(np.ones((4, 4)) - np.eye(4))
    expect = np.zeros((4, 11)); expect[:, 14 - 4] = 1
    np.testing.assert_array_equal(k4, expect)


def test_orbit_graphlets_one_by_one():
    for edges, labels in GRAPHLETS:
        counts = M.orbit_counts(ref_graphlet(edges).astype(float))
        for node, orbit in enumerate(labels):
            row = np.zeros(11); row[orbit - 4] = 1
            np.testing.assert_array_equal(counts[node], row)


def test_orbits_match_subset_enumeration(rng):
    sizes = [5, 6, 8, 10, 12, 15, 20]
    for n in sizes:
        for p in (0.2, 0.5):
            a = random_graph(rng, n, p)
            np.testing.assert_array_equal(M.orbit_counts(a), brute_orbits(a))
    for g in gen_grid_small(seed=1, count=2, side_range=(3, 4)):
        np.testing.assert_array_equal(M.orbit_counts(g), brute_orbits(g))


# --- complex statistics ----------------------------------------------------

def test_rank2_metric_sizes():
    c = DimConstraints(3, 5)
    ct = ComplexTensor.from_cells(np.ones((5, 1)), np.zeros((5, 5)), [(0, 1, 2), (2, 3, 4), (0, 1, 2, 3)], c)
    assert M.rank_r_metric(ct, 2).tolist() == [2, 1, 0]
    empty = ComplexTensor.from_cells(np.ones((5, 1)), np.zeros((5, 5)), [], c)
    assert M.rank_r_metric(empty, 2).tolist() == [0, 0, 0]
    with pytest.raises(ValueError):
        M.rank_r_metric(ct, 3)


def test_rank_metric_featured(rng):
    n = 7
    A = np.zeros((n, n, 3))
    counts = np.zeros(3)
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.6:
            t = int(rng.integers(3))
            A[i, j, t] = A[j, i, t] = 1
            counts[t] += 1
    X = np.eye(4)[rng.integers(0, 4, size=n)]
    ct = ComplexTensor.from_cells(X, A, [], DimConstraints(3, 3))
    np.testing.assert_array_equal(M.rank_r_metric(ct, 1), counts)
    np.testing.assert_array_equal(M.rank_r_metric(ct, 0), X.sum(0))


def test_spectrum_examples():
    c = DimConstraints(3, 3)
    tri = ComplexTensor.from_cells(np.ones((3, 1)), np.ones((3, 3)) - np.eye(3), [(0, 1, 2)], c)
    np.testing.assert_allclose(M.hodge_spectrum(tri), [3, 0, 0], atol=1e-12)
    none = ComplexTensor.from_cells(np.ones((4, 1)), np.zeros((4, 4)), [], c)
    assert not M.hodge_spectrum(none).any()


def test_spectrum_trace_identity(rng):
    for _ in range(20):
        n = int(rng.integers(3, 6))  # m <= 10
        ct = random_complex(rng, n, DimConstraints(3, min(4, n)), f2=2)
        lam = M.hodge_spectrum(ct)
        assert np.all(np.diff(lam) <= 1e-12)
        fro = float((ct.F.sum(-1) ** 2).sum())
        assert lam.sum() == pytest.approx(fro, abs=1e-9)


def test_spectrum_relabelling_invariant(rng):
    for _ in range(10):
        n = int(rng.integers(4, 8))
        ct = random_complex(rng, n, DimConstraints(3, 4))
        other = relabel(ct, rng.permutation(n).tolist())
        np.testing.assert_allclose(M.hodge_spectrum(ct), M.hodge_spectrum(other), atol=1e-9)


def test_hodge_oracle(rng):
    for _ in range(4):
        n = int(rng.integers(4, 6))
        ct = random_complex(rng, n, DimConstraints(3, 4), binary_cells=True)
        assert M.hodge_distance_oracle(ct, ct) == 0
        other = relabel(ct, rng.permutation(n).tolist())
        assert M.hodge_distance_oracle(ct, other) == pytest.approx(0, abs=1e-12)
        np.testing.assert_allclose(M.hodge_spectrum(ct), M.hodge_spectrum(other), atol=1e-9)
    c = DimConstraints(3, 3)
    g = np.ones((4, 4)) - np.eye(4)
    one = ComplexTensor.from_cells(np.ones((4, 1)), g, [(0, 1, 2)], c)
    two = ComplexTensor.from_cells(np.ones((4, 1)), g, [(0, 1, 2), (1, 2, 3)], c)
    assert M.hodge_distance_oracle(one, two) > 0
    big = random_complex(rng, 7, DimConstraints(3, 3))
    with pytest.raises(ValueError):
        M.hodge_distance_oracle(big, big)


# --- evaluate --------------------------------------------------------------

def test_evaluate_identical_sets(rng):
    cts = [random_complex(rng, int(rng.integers(4, 8)), DimConstraints(3, 4)) for _ in range(6)]
    report = M.evaluate(cts, cts)
    for k, v in report.values().items():
        if v is not None:
            assert v == pytest.approx(0, abs=1e-9), k
    assert report.rank0_mmd is not None and report.rank1_mmd is None
    assert report.average == pytest.approx(0, abs=1e-9)
    with pytest.raises(ValueError):
        M.evaluate([], cts)


def test_report_rejects_bad_values():
    with pytest.raises(ValueError):
        M.MetricReport(float("nan"), 0, 0, 0, 0)
    with pytest.raises(ValueError):
        M.MetricReport(-1.0, 0, 0, 0, 0)


def test_er_separates_from_grid(rng):
    grids = gen_grid_small(seed=0, count=40)
    half_a, half_b = grids[:20], grids[20:]
    er = [random_graph(rng, g.shape[0], 0.1) for g in half_a]
    deg = lambda gs: [M.degree_histogram(g) for g in gs]
    same = M.mmd(deg(half_a), deg(half_b))
    cross = M.mmd(deg(er), deg(half_b))
    assert cross > same
