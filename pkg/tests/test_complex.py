import itertools
from math import comb

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from ccsd.complex import (CombinatorialComplex, ComplexTensor, DimConstraints, adjacency_to_edge_vector,
                          cell_count, cell_edge_mask, cell_index, cell_layout, cell_nodes, edge_index,
                          edge_pair, edge_vector_to_adjacency, higher_order_adjacency, higher_order_incidence,
                          hodge_dual, hodge_dual_inverse, hodge_laplacian, quantize_adjacency,
                          quantize_incidence, quantize_incidence_compact)
from conftest import random_complex

D = torch.float64


def sym_zero_diag(rng, n):
    a = np.triu(rng.normal(size=(n, n)), 1)
    return torch.tensor(a + a.T)


# --- orderings -------------------------------------------------------------

@pytest.mark.parametrize("i,j,expected", [(0, 1, 0), (0, 3, 2), (1, 2, 3), (2, 3, 5)])
def test_edge_index_examples(i, j, expected):
    assert edge_index(i, j, 4) == expected


def test_edge_index_round_trip_and_range():
    for n in range(2, 9):
        seen = [edge_index(i, j, n) for i, j in itertools.combinations(range(n), 2)]
        assert seen == list(range(comb(n, 2)))
        for i, j in itertools.combinations(range(n), 2):
            assert edge_pair(edge_index(i, j, n), n) == (i, j)
    assert len({edge_index(i, j, 9) for i, j in itertools.combinations(range(9), 2)}) == 36


@pytest.mark.parametrize("i,j", [(1, 1), (2, 1), (-1, 2), (0, 4)])
def test_edge_index_rejects_bad_pairs(i, j):
    with pytest.raises(ValueError):
        edge_index(i, j, 4)


def test_cell_count_examples():
    assert cell_count(15, DimConstraints(3, 9)) == 27703
    assert sum(comb(15, k) for k in range(0, 16)) == 2 ** 15 == 32768
    assert cell_count(3, DimConstraints(3, 3)) == 1
    assert cell_count(2, DimConstraints(3, 5)) == 0


def test_cell_index_exhaustive_bijection():
    for n in range(3, 9):
        for dmax in (3, 4):
            c = DimConstraints(3, dmax)
            expected = [s for k in c.sizes for s in itertools.combinations(range(n), k)]
            assert len(expected) == cell_count(n, c)
            for idx, s in enumerate(expected):
                assert cell_index(s, n, c) == idx
                assert cell_nodes(idx, n, c) == s
            assert cell_layout(n, c).cells == expected


def test_dim_constraints_validation():
    for bad in [(2, 3), (4, 3)]:
        with pytest.raises(ValueError):
            DimConstraints(*bad)


# --- Hodge dual --------------------------------------------------------------

def test_hodge_dual_example():
    A = torch.tensor([[0, 1, 0], [1, 0, 2], [0, 2, 0]], dtype=D)
    assert torch.equal(hodge_dual(A), torch.diag(torch.tensor([1.0, 0.0, 2.0], dtype=D)))
    assert torch.equal(hodge_dual(torch.zeros(4, 4, dtype=D)), torch.zeros(6, 6, dtype=D))


def test_hodge_dual_round_trip_and_linearity(rng):
    for _ in range(20):
        n = int(rng.integers(2, 9))
        A, B = sym_zero_diag(rng, n), sym_zero_diag(rng, n)
        assert torch.equal(hodge_dual_inverse(hodge_dual(A)), A)
        lhs = hodge_dual(2.5 * A - 0.5 * B)
        assert torch.allclose(lhs, 2.5 * hodge_dual(A) - 0.5 * hodge_dual(B), atol=1e-14)
    batch = torch.stack([sym_zero_diag(rng, 5) for _ in range(6)]).reshape(2, 3, 5, 5)
    assert torch.equal(hodge_dual_inverse(hodge_dual(batch)), batch)
    assert torch.equal(edge_vector_to_adjacency(adjacency_to_edge_vector(batch)), batch)


def test_hodge_dual_contract_violations():
    with pytest.raises(ValueError):
        hodge_dual(torch.tensor([[0.0, 1.0], [0.0, 0.0]], dtype=D))
    with pytest.raises(ValueError):
        hodge_dual(torch.eye(3, dtype=D))


# --- higher-order matrices ---------------------------------------------------

def test_higher_order_adjacency(rng):
    A = torch.tensor([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=D)
    assert torch.equal(higher_order_adjacency(A, 1)[0], A)
    assert higher_order_adjacency(A, 2)[1, 0, 2] == 1
    for _ in range(5):
        n = int(rng.integers(2, 7))
        M = rng.normal(size=(n, n))
        got = higher_order_adjacency(torch.tensor(M), 3).numpy()
        naive = [M, np.zeros((n, n)), np.zeros((n, n))]
        for a in range(n):
            for b in range(n):
                naive[1][a, b] = sum(M[a, c] * M[c, b] for c in range(n))
        for a in range(n):
            for b in range(n):
                naive[2][a, b] = sum(naive[1][a, c] * M[c, b] for c in range(n))
        np.testing.assert_allclose(got, np.stack(naive), atol=1e-12)
    with pytest.raises(ValueError):
        higher_order_adjacency(A, 0)


def test_hodge_laplacian_examples():
    F = torch.ones(3, 1, dtype=D)
    assert torch.equal(hodge_laplacian(F), torch.ones(3, 3, dtype=D))
    assert torch.equal(hodge_laplacian(torch.zeros(6, 4, dtype=D)), torch.zeros(6, 6, dtype=D))


def test_hodge_laplacian_counts_shared_cells(rng):
    for _ in range(100):
        n = int(rng.integers(3, 8))
        ct = random_complex(rng, n, DimConstraints(3, 4), cell_prob=0.2, binary_cells=True)
        F = ct.F[..., 0]
        H = hodge_laplacian(F)
        cells = list(ct.cells())
        pairs = list(itertools.combinations(range(n), 2))
        for a, (i, j) in enumerate(pairs):
            for b, (k, l) in enumerate(pairs):
                shared = sum(1 for c in cells if {i, j} <= set(c) and {k, l} <= set(c))
                assert H[a, b] == shared


def test_hodge_laplacian_symmetric_psd(rng):
    for _ in range(20):
        F = torch.tensor(rng.normal(size=(10, 7, 2)))
        H = hodge_laplacian(F)
        assert torch.equal(H, H.T)
        assert torch.linalg.eigvalsh(H).min() >= -1e-9


def test_higher_order_incidence(rng):
    F = torch.ones(3, 1, dtype=D)
    assert torch.equal(higher_order_incidence(F, 1)[..., 0], F)
    assert torch.equal(higher_order_incidence(F, 2)[..., 1], 3 * F)
    for _ in range(5):
        Fb = torch.tensor((rng.random((15, 8)) < 0.3).astype(float))
        H = Fb @ Fb.T
        got = higher_order_incidence(Fb, 3)
        for p in range(3):
            ref = Fb.clone()
            for _ in range(p):
                ref = H @ ref
            assert torch.equal(got[..., p], ref)
    with pytest.raises(ValueError):
        higher_order_incidence(F, 0)


# --- masks -------------------------------------------------------------------

def test_cell_edge_mask():
    assert cell_edge_mask(3, DimConstraints(3, 3)).all()
    m = cell_edge_mask(4, DimConstraints(3, 3))
    assert m[:, 0].tolist() == [True, True, False, True, False, False]  # edges 01 02 03 12 13 23
    for n in range(3, 8):
        c = DimConstraints(3, 4)
        mask = cell_edge_mask(n, c)
        sizes = torch.tensor([len(s) for s in cell_layout(n, c).cells])
        assert torch.equal(mask.sum(0), sizes * (sizes - 1) // 2)


def test_compact_layout_matches_dense(rng):
    for _ in range(10):
        ct = random_complex(rng, int(rng.integers(3, 8)), DimConstraints(3, 4), f2=2)
        assert torch.equal(ct.layout.to_compact(ct.F), ct.Fc)


# --- quantization ------------------------------------------------------------

def test_quantize_adjacency_examples():
    vals = torch.tensor([0.4, 1.2, 2.0, 3.7], dtype=D)
    A = torch.zeros(5, 5, dtype=D)
    A[0, 1:] = vals
    A = A + A.T
    Q = quantize_adjacency(A, "bond")
    assert Q[0, 1:].tolist() == [0.0, 1.0, 2.0, 3.0]
    assert torch.equal(Q, Q.T)
    B = torch.tensor([[0, 0.5, 0.5001], [0.5, 0, 0], [0.5001, 0, 0]], dtype=D)
    assert quantize_adjacency(B)[0].tolist() == [0.0, 0.0, 1.0]
    assert torch.diagonal(quantize_adjacency(torch.ones(3, 3, dtype=D))).abs().sum() == 0


def test_quantize_incidence_examples():
    c = DimConstraints(3, 3)
    tri = torch.ones(3, 3, dtype=D) - torch.eye(3, dtype=D)
    assert torch.equal(quantize_incidence(torch.zeros(3, 1, dtype=D), tri, 3, c), torch.zeros(3, 1, dtype=D))
    raw = torch.tensor([[0.9], [0.8], [0.7]], dtype=D)
    assert torch.equal(quantize_incidence(raw, tri, 3, c), torch.ones(3, 1, dtype=D))
    missing = tri.clone()
    missing[0, 1] = missing[1, 0] = 0
    assert torch.equal(quantize_incidence(raw, missing, 3, c), torch.zeros(3, 1, dtype=D))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 7), st.integers(0, 2 ** 31 - 1), st.sampled_from(["all_edges", "path", "none"]))
def test_quantize_incidence_output_is_valid(n, seed, rule):
    g = torch.Generator()
    g.manual_seed(seed)
    c = DimConstraints(3, 4)
    layout = cell_layout(n, c)
    A = quantize_adjacency(torch.rand(n, n, generator=g, dtype=D))
    raw = torch.rand(len(layout), layout.slots, 2, generator=g, dtype=D) * 1.5
    Fc = quantize_incidence_compact(raw, A, layout, 0.5, rule)
    ct = ComplexTensor(torch.zeros(n, 1, dtype=D), A[..., None], Fc, c)
    assert ct.violations(rule) == []


# --- round trip ----------------------------------------------------------------

def test_representation_round_trip(rng):
    for _ in range(200):
        n = int(rng.integers(3, 9))
        ct = random_complex(rng, n, DimConstraints(3, 4), f0=2, f1=2, f2=2, cell_prob=0.1)
        cc = CombinatorialComplex.from_tensor(ct)
        back = cc.to_tensor(f1=2, f2=2)
        assert torch.equal(back.X, ct.X) and torch.equal(back.A, ct.A) and torch.equal(back.Fc, ct.Fc)
        assert CombinatorialComplex.from_tensor(back) == cc


def test_from_dense_rejects_off_support_mass():
    c = DimConstraints(3, 3)
    F = torch.zeros(6, 4, dtype=D)
    F[5, 0] = 1.0  # edge (2,3) is not inside cell {0,1,2}
    with pytest.raises(ValueError):
        ComplexTensor.from_dense(torch.zeros(4, 1), torch.zeros(4, 4), F, c)


def test_violations_detects_broken_state():
    c = DimConstraints(3, 3)
    ct = ComplexTensor.from_cells(torch.zeros(3, 1), torch.ones(3, 3) - torch.eye(3), [(0, 1, 2)], c)
    assert ct.violations("all_edges") == []
    Fc = ct.Fc.clone()
    Fc[0, 0, 0] = 2.0
    assert "F column is not constant on its cell" in ComplexTensor(ct.X, ct.A, Fc, c).violations()
    A = ct.A.clone()
    A[0, 1] = 0
    assert ComplexTensor(ct.X, A, ct.Fc, c).violations()
