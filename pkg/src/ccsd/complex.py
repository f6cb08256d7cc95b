"""Tensor representation of dimension-2 combinatorial complexes.

A complex on ``n`` nodes is held as three tensors:

* ``X``  node features, ``[n, f0]``
* ``A``  edge features, ``[n, n, f1]`` (symmetric, zero diagonal)
* ``F``  rank-2 incidence, ``[C(n, 2), K, f2]`` where ``K`` counts every node
  subset whose size lies within the rank-2 dimension constraints.

Edges are ordered lexicographically on ``(i, j)`` with ``i < j``; candidate
rank-2 cells are ordered by size, then lexicographically on the sorted node
tuple. Column ``j`` of ``F`` is either zero or carries one common feature
vector on every edge slot whose endpoints both lie in cell ``j``.

Because ``F`` is extremely sparse (a column has at most ``C(d_max, 2)`` non
zero rows), it is stored column-compact as ``Fc[K, E, f2]`` with
``E = C(d_max, 2)``; :class:`CellIndex` maps compact slots back to edge rows.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

DTYPE = torch.float64


@dataclass(frozen=True)
class DimConstraints:
    """Cardinality bounds of rank-2 cells."""

    d_min: int = 3
    d_max: int = 3

    def __post_init__(self):
        if not 3 <= self.d_min <= self.d_max:
            raise ValueError(
                f"rank-2 constraints need 3 <= d_min <= d_max, got ({self.d_min}, {self.d_max})")

    @property
    def sizes(self) -> range:
        return range(self.d_min, self.d_max + 1)


# ---------------------------------------------------------------------------
# edge and cell orderings
# ---------------------------------------------------------------------------

def num_edges(n: int) -> int:
    return n * (n - 1) // 2


def nodes_from_edges(m: int) -> int:
    """Inverse of :func:`num_edges`."""
    n = int(round((1 + math.sqrt(1 + 8 * m)) / 2))
    if num_edges(n) != m:
        raise ValueError(f"{m} is not a triangular number of edge slots")
    return n


def edge_index(i: int, j: int, n: int) -> int:
    if not (0 <= i < j < n):
        raise ValueError(f"edge ({i}, {j}) is not an ordered pair of distinct nodes in [0, {n})")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def edge_pair(idx: int, n: int) -> tuple[int, int]:
    m = num_edges(n)
    if not 0 <= idx < m:
        raise ValueError(f"edge index {idx} outside [0, {m})")
    i = 0
    # rows of the upper triangle hold n-1, n-2, ... slots
    while idx >= n - 1 - i:
        idx -= n - 1 - i
        i += 1
    return i, i + 1 + idx


@lru_cache(maxsize=64)
def edge_pairs(n: int) -> torch.Tensor:
    """``[C(n,2), 2]`` long tensor of edge endpoints in edge order."""
    iu = torch.triu_indices(n, n, offset=1)
    return iu.t().contiguous()


def cell_count(n: int, constraints: DimConstraints) -> int:
    return sum(math.comb(n, k) for k in constraints.sizes)


def _lex_rank(nodes: Sequence[int], n: int) -> int:
    """Rank of a sorted k-combination of range(n) in lexicographic order."""
    k = len(nodes)
    rank = 0
    prev = -1
    for pos, v in enumerate(nodes):
        for skipped in range(prev + 1, v):
            rank += math.comb(n - 1 - skipped, k - 1 - pos)
        prev = v
    return rank


def _lex_unrank(rank: int, n: int, k: int) -> tuple[int, ...]:
    out = []
    v = 0
    for pos in range(k):
        while True:
            block = math.comb(n - 1 - v, k - 1 - pos)
            if rank < block:
                break
            rank -= block
            v += 1
        out.append(v)
        v += 1
    return tuple(out)


def cell_index(nodes: Iterable[int], n: int, constraints: DimConstraints) -> int:
    s = sorted(set(nodes))
    k = len(s)
    if k not in constraints.sizes:
        raise ValueError(f"cell of size {k} violates constraints {constraints}")
    if s[0] < 0 or s[-1] >= n:
        raise ValueError(f"cell {s} has nodes outside [0, {n})")
    offset = sum(math.comb(n, size) for size in range(constraints.d_min, k))
    return offset + _lex_rank(s, n)


def cell_nodes(idx: int, n: int, constraints: DimConstraints) -> tuple[int, ...]:
    if idx < 0:
        raise ValueError(f"negative cell index {idx}")
    for k in constraints.sizes:
        block = math.comb(n, k)
        if idx < block:
            return _lex_unrank(idx, n, k)
        idx -= block
    raise ValueError("cell index beyond cell_count")


class CellIndex:
    """Enumeration of candidate rank-2 cells with their compact edge layout.

    ``rows[j, a]`` is the edge index of the ``a``-th node pair of cell ``j``
    (pairs in lexicographic order), ``valid[j, a]`` flags real slots for cells
    smaller than ``d_max``.
    """

    def __init__(self, n: int, constraints: DimConstraints):
        self.n = n
        self.constraints = constraints
        self.num_edges = num_edges(n)
        self.slots = math.comb(constraints.d_max, 2)
        cells = [c for k in constraints.sizes for c in itertools.combinations(range(n), k)]
        self.cells: list[tuple[int, ...]] = cells
        self.position = {c: j for j, c in enumerate(cells)}
        K = len(cells)
        rows = np.zeros((K, self.slots), dtype=np.int64)
        valid = np.zeros((K, self.slots), dtype=bool)
        for j, c in enumerate(cells):
            for a, (u, v) in enumerate(itertools.combinations(c, 2)):
                rows[j, a] = u * n - u * (u + 1) // 2 + (v - u - 1)
                valid[j, a] = True
        self.rows = torch.from_numpy(rows)
        self.valid = torch.from_numpy(valid)
        self.sizes = torch.tensor([len(c) for c in cells], dtype=torch.long)
        nodes = np.zeros((K, constraints.d_max), dtype=np.int64)
        for j, c in enumerate(cells):
            nodes[j, :len(c)] = c
        self.cell_node_ids = torch.from_numpy(nodes)
        self.cell_node_valid = torch.arange(constraints.d_max)[None, :] < self.sizes[:, None]

    def __len__(self) -> int:
        return len(self.cells)

    def index(self, nodes: Iterable[int]) -> int:
        return self.position[tuple(sorted(set(nodes)))]

    def active_cells(self, node_mask: torch.Tensor) -> torch.Tensor:
        """Bool ``[..., K]``: cells whose nodes are all active under ``node_mask [..., n]``."""
        nm = node_mask.bool()
        picked = nm[..., self.cell_node_ids]  # [..., K, d_max]
        return (picked | ~self.cell_node_valid).all(-1)

    def compact_mask(self, node_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Float ``[..., K, E]`` support of the compact layout, restricted to active cells."""
        mask = self.valid.to(DTYPE)
        if node_mask is None:
            return mask
        return mask * self.active_cells(node_mask).to(DTYPE)[..., None]

    def to_compact(self, F: torch.Tensor) -> torch.Tensor:
        """Gather ``F[..., m, K, f]`` into ``[..., K, E, f]`` (padding slots zero)."""
        cols = torch.arange(len(self))[:, None].expand_as(self.rows)
        out = F[..., self.rows, cols, :]
        return out * self.valid[..., None].to(F.dtype)

    def to_dense(self, Fc: torch.Tensor) -> torch.Tensor:
        """Scatter ``[..., K, E, f]`` into a dense ``[..., m, K, f]`` tensor."""
        lead = Fc.shape[:-3]
        f = Fc.shape[-1]
        K = len(self)
        dense = Fc.new_zeros(*lead, self.num_edges, K, f)
        vr = self.rows[self.valid]
        vc = torch.arange(K)[:, None].expand_as(self.rows)[self.valid]
        dense[..., vr, vc, :] = Fc[..., self.valid, :]
        return dense


@lru_cache(maxsize=32)
def cell_layout(n: int, constraints: DimConstraints) -> CellIndex:
    return CellIndex(n, constraints)


def cell_edge_mask(n: int, constraints: DimConstraints) -> torch.Tensor:
    layout = cell_layout(n, constraints)
    mask = torch.zeros(layout.num_edges, len(layout), dtype=torch.bool)
    cols = torch.arange(len(layout))[:, None].expand_as(layout.rows)
    mask[layout.rows[layout.valid], cols[layout.valid]] = True
    return mask


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def hodge_dual(A: torch.Tensor, check: bool = True) -> torch.Tensor:
    """Map ``[..., n, n]`` adjacency matrices to diagonal ``[..., m, m]`` matrices.

    The diagonal lists the upper-triangular entries in edge order. With
    ``check`` the input must be symmetric with a zero diagonal.
    """
    n = A.shape[-1]
    if A.shape[-2] != n:
        raise ValueError(f"expected square matrices, got {tuple(A.shape)}")
    if check:
        if not torch.equal(A, A.transpose(-1, -2)):
            raise ValueError("hodge_dual requires a symmetric adjacency")
        if torch.any(torch.diagonal(A, dim1=-2, dim2=-1) != 0):
            raise ValueError("hodge_dual requires a zero diagonal (no self-loops)")
    iu = edge_pairs(n)
    return torch.diag_embed(A[..., iu[:, 0], iu[:, 1]])


def hodge_dual_inverse(H: torch.Tensor) -> torch.Tensor:
    """Rebuild the symmetric zero-diagonal adjacency from the diagonal of ``H``."""
    return edge_vector_to_adjacency(torch.diagonal(H, dim1=-2, dim2=-1))


def adjacency_to_edge_vector(A: torch.Tensor) -> torch.Tensor:
    """Upper-triangular entries of ``[..., n, n]`` in edge order: ``[..., m]``."""
    iu = edge_pairs(A.shape[-1])
    return A[..., iu[:, 0], iu[:, 1]]


def edge_vector_to_adjacency(v: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`adjacency_to_edge_vector` (symmetric, zero diagonal)."""
    n = nodes_from_edges(v.shape[-1])
    iu = edge_pairs(n)
    A = v.new_zeros(*v.shape[:-1], n, n)
    A[..., iu[:, 0], iu[:, 1]] = v
    A[..., iu[:, 1], iu[:, 0]] = v
    return A


def higher_order_adjacency(A: torch.Tensor, p: int) -> torch.Tensor:
    """Stack ``A^1 .. A^p`` on a new channel axis: ``[..., n, n] -> [..., p, n, n]``."""
    if p < 1:
        raise ValueError(f"power must be >= 1, got {p}")
    powers = [A]
    for _ in range(p - 1):
        powers.append(powers[-1] @ A)
    return torch.stack(powers, dim=-3)


def _single_channel(F: torch.Tensor) -> torch.Tensor:
    # [m, K] stays as is; [..., m, K, f] has its features summed away
    return F if F.dim() == 2 else F.sum(-1)


def hodge_laplacian(F: torch.Tensor) -> torch.Tensor:
    """``F F^T`` over the edge axis.

    ``F`` is ``[m, K]`` or features-last ``[..., m, K, f]``; feature channels
    are summed before the product.
    """
    Fs = _single_channel(F)
    return Fs @ Fs.transpose(-1, -2)


def higher_order_incidence(F: torch.Tensor, p: int) -> torch.Tensor:
    """Concatenate ``H^0 F, ..., H^(p-1) F`` (``H = F F^T``) along the feature axis.

    Returns ``[..., m, K, p*f]`` (power-major blocks); a 2-D ``[m, K]`` input
    yields ``[m, K, p]``.
    """
    if p < 1:
        raise ValueError(f"power must be >= 1, got {p}")
    Fe = F[..., None] if F.dim() == 2 else F
    H = hodge_laplacian(F)
    out = [Fe]
    for _ in range(p - 1):
        out.append(torch.einsum("...ij,...jkf->...ikf", H, out[-1]))
    return torch.cat(out, dim=-1)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def quantize_adjacency(A_raw: torch.Tensor, mode: str = "binary") -> torch.Tensor:
    """Quantize raw ``[..., n, n]`` adjacency values after symmetrization."""
    A = (A_raw + A_raw.transpose(-1, -2)) / 2
    if mode == "binary":
        Q = (A > 0.5).to(A_raw.dtype)
    elif mode == "bond":
        Q = torch.where(A <= 0.5, 0.0, torch.where(A < 1.5, 1.0, torch.where(A < 2.5, 2.0, 3.0)))
        Q = Q.to(A_raw.dtype)
    else:
        raise ValueError(f"unknown quantization mode {mode!r}")
    return Q * (1 - torch.eye(A.shape[-1], dtype=A_raw.dtype))


SUPPORT_RULES = ("all_edges", "path", "ring", "none")


def _has_hamiltonian_path(adj: np.ndarray) -> bool:
    k = adj.shape[0]
    for perm in itertools.permutations(range(k)):
        if perm[0] > perm[-1]:
            continue
        if all(adj[perm[a], perm[a + 1]] for a in range(k - 1)):
            return True
    return False


def cell_supported(nodes: Sequence[int], adj: np.ndarray, rule: str) -> bool:
    """Whether the induced subgraph of ``adj`` on ``nodes`` can carry a rank-2 cell.

    ``all_edges``: every node pair is an edge. ``path``: the nodes admit a
    spanning simple path. ``ring``: the induced subgraph is a chordless
    cycle. ``none``: always true.
    """
    if rule == "none":
        return True
    sub = adj[np.ix_(nodes, nodes)] != 0
    k = len(nodes)
    if rule == "all_edges":
        return bool(sub[~np.eye(k, dtype=bool)].all())
    if rule == "ring":
        deg = sub.sum(1)
        if not np.all(deg == 2):
            return False
        # 2-regular: one cycle iff connected
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(sub[u]):
                if v not in seen:
                    seen.add(int(v))
                    stack.append(int(v))
        return len(seen) == k
    if rule == "path":
        return _has_hamiltonian_path(sub)
    raise ValueError(f"unknown support rule {rule!r}; expected one of {SUPPORT_RULES}")


def _edge_presence(A_quant: torch.Tensor) -> np.ndarray:
    A = A_quant if A_quant.dim() == 2 else A_quant.abs().sum(-1)
    return (A != 0).cpu().numpy()


def quantize_incidence_compact(Fc_raw: torch.Tensor, A_quant: torch.Tensor,
                               layout: CellIndex, threshold: float = 0.5,
                               rule: str = "all_edges",
                               node_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Quantize a compact ``[K, E, f]`` incidence into a valid column-constant one.

    A column is kept iff the mean of its raw entries over the cell's edge
    slots exceeds ``threshold`` and the cell passes ``rule`` on ``A_quant``.
    Single-feature columns become 1; multi-feature columns become the
    one-hot of the arg-max of their mean feature vector.
    """
    mask = layout.compact_mask(node_mask)  # [K, E]
    Fc = Fc_raw * mask[..., None]
    counts = mask.sum(-1).clamp(min=1)
    mean = Fc.sum(-2) / counts[..., None]  # [K, f]
    f = Fc.shape[-1]
    if f == 1:
        score = mean[:, 0]
        value = torch.ones_like(mean)
    else:
        score, arg = mean.max(-1)
        value = torch.nn.functional.one_hot(arg, f).to(Fc.dtype)
    active = (score > threshold) & (mask.sum(-1) > 0)
    if rule != "none" and bool(active.any()):
        adj = _edge_presence(A_quant)
        for j in torch.nonzero(active).flatten().tolist():
            if not cell_supported(list(layout.cells[j]), adj, rule):
                active[j] = False
    out = value[:, None, :] * mask[..., None] * active[:, None, None].to(Fc.dtype)
    return out


def quantize_incidence(F_raw: torch.Tensor, A_quant: torch.Tensor, n: int,
                       constraints: DimConstraints, threshold: float = 0.5,
                       rule: str = "all_edges") -> torch.Tensor:
    """Dense counterpart of :func:`quantize_incidence_compact` on ``[m, K]`` or ``[m, K, f]``."""
    layout = cell_layout(n, constraints)
    squeeze = F_raw.dim() == 2
    F = F_raw[..., None] if squeeze else F_raw
    out = layout.to_dense(quantize_incidence_compact(layout.to_compact(F), A_quant, layout,
                                                     threshold, rule))
    return out[..., 0] if squeeze else out


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ComplexTensor:
    """A dimension-2 complex as ``(X, A, F)`` with ``F`` kept column-compact."""

    X: torch.Tensor
    A: torch.Tensor
    Fc: torch.Tensor
    constraints: DimConstraints
    node_mask: torch.Tensor = field(default=None)

    def __post_init__(self):
        n = self.X.shape[0]
        if self.A.shape[:2] != (n, n):
            raise ValueError(f"A has shape {tuple(self.A.shape)}, expected ({n}, {n}, f1)")
        if self.Fc.shape[0] != cell_count(n, self.constraints):
            raise ValueError("F column count does not match the dimension constraints")
        if self.node_mask is None:
            object.__setattr__(self, "node_mask", torch.ones(n, dtype=torch.bool))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def f0(self) -> int:
        return self.X.shape[1]

    @property
    def f1(self) -> int:
        return self.A.shape[2]

    @property
    def f2(self) -> int:
        return self.Fc.shape[2]

    @property
    def layout(self) -> CellIndex:
        return cell_layout(self.n, self.constraints)

    @property
    def F(self) -> torch.Tensor:
        return self.layout.to_dense(self.Fc)

    @classmethod
    def from_dense(cls, X, A, F, constraints: DimConstraints, node_mask=None) -> "ComplexTensor":
        X, A, F = (torch.as_tensor(t, dtype=DTYPE) for t in (X, A, F))
        if A.dim() == 2:
            A = A[..., None]
        if F.dim() == 2:
            F = F[..., None]
        n = X.shape[0]
        layout = cell_layout(n, constraints)
        off = F * (~cell_edge_mask(n, constraints))[..., None]
        if torch.any(off != 0):
            raise ValueError("F has mass on edge slots outside the cells' node sets")
        return cls(X, A, layout.to_compact(F), constraints, node_mask)

    @classmethod
    def from_cells(cls, X, A, cells: Mapping[Iterable[int], Sequence[float]] | Iterable,
                   constraints: DimConstraints, f2: int = 1) -> "ComplexTensor":
        """Build from node features, edge features and a ``{node set: feature}`` map.

        ``cells`` may also be an iterable of node sets, each getting feature 1.
        """
        X = torch.as_tensor(X, dtype=DTYPE)
        A = torch.as_tensor(A, dtype=DTYPE)
        if A.dim() == 2:
            A = A[..., None]
        n = X.shape[0]
        layout = cell_layout(n, constraints)
        if not isinstance(cells, Mapping):
            cells = {tuple(sorted(c)): [1.0] * f2 for c in cells}
        Fc = torch.zeros(len(layout), layout.slots, f2, dtype=DTYPE)
        for nodes, feat in cells.items():
            j = layout.index(nodes)
            Fc[j] = torch.as_tensor(feat, dtype=DTYPE)[None, :] * layout.valid[j, :, None]
        return cls(X, A, Fc, constraints)

    def cells(self) -> dict[tuple[int, ...], tuple[float, ...]]:
        """Rank-2 cells (non-zero columns) with their common feature vector."""
        layout = self.layout
        nz = (self.Fc != 0).any(-1).any(-1)
        out = {}
        for j in torch.nonzero(nz).flatten().tolist():
            slot = int(torch.nonzero((self.Fc[j] != 0).any(-1))[0])
            out[layout.cells[j]] = tuple(self.Fc[j, slot].tolist())
        return out

    def edges(self) -> dict[tuple[int, int], tuple[float, ...]]:
        iu = edge_pairs(self.n)
        vals = self.A[iu[:, 0], iu[:, 1]]
        nz = (vals != 0).any(-1)
        return {(int(i), int(j)): tuple(v.tolist())
                for (i, j), v in zip(iu[nz].tolist(), vals[nz])}

    def binary_adjacency(self) -> np.ndarray:
        return _edge_presence(self.A)

    def violations(self, rule: str = "none") -> list[str]:
        """Quantized-state invariant violations (empty when the complex is valid)."""
        problems = []
        if not torch.equal(self.A, self.A.transpose(0, 1)):
            problems.append("A is not symmetric")
        if torch.any(torch.diagonal(self.A, dim1=0, dim2=1) != 0):
            problems.append("A has self-loops")
        valid = self.layout.valid[..., None]
        if torch.any(self.Fc * ~valid != 0):
            problems.append("F has mass on padding slots")
        first = self.Fc[:, :1, :]
        on_cell = valid.expand_as(self.Fc)
        active = (self.Fc != 0).any(-1).any(-1)
        same = torch.where(on_cell, self.Fc == first, torch.ones_like(on_cell)).all(-1).all(-1)
        if torch.any(active & ~same):
            problems.append("F column is not constant on its cell")
        inactive = ~self.node_mask.bool()
        if inactive.any():
            if torch.any(self.X[inactive] != 0) or torch.any(self.A[inactive] != 0):
                problems.append("masked nodes carry features")
            if torch.any(active & ~self.layout.active_cells(self.node_mask)):
                problems.append("masked nodes belong to rank-2 cells")
        if rule != "none":
            adj = self.binary_adjacency()
            for nodes in self.cells():
                if not cell_supported(list(nodes), adj, rule):
                    problems.append(f"cell {nodes} unsupported under rule {rule!r}")
        return problems


@dataclass
class CombinatorialComplex:
    """Plain set-level description of a dimension-2 featured complex."""

    node_features: np.ndarray
    edges: dict[tuple[int, int], tuple[float, ...]]
    cells: dict[tuple[int, ...], tuple[float, ...]]
    constraints: DimConstraints

    @property
    def n(self) -> int:
        return self.node_features.shape[0]

    def to_tensor(self, f1: int | None = None, f2: int | None = None) -> ComplexTensor:
        n = self.n
        f1 = f1 or max((len(v) for v in self.edges.values()), default=1)
        f2 = f2 or max((len(v) for v in self.cells.values()), default=1)
        A = torch.zeros(n, n, f1, dtype=DTYPE)
        for (i, j), feat in self.edges.items():
            A[i, j] = A[j, i] = torch.as_tensor(feat, dtype=DTYPE)
        return ComplexTensor.from_cells(self.node_features, A, dict(self.cells), self.constraints, f2)

    @classmethod
    def from_tensor(cls, ct: ComplexTensor) -> "CombinatorialComplex":
        return cls(ct.X.numpy().copy(), ct.edges(), ct.cells(), ct.constraints)

    def __eq__(self, other):
        if not isinstance(other, CombinatorialComplex):
            return NotImplemented
        return (self.constraints == other.constraints
                and np.array_equal(self.node_features, other.node_features)
                and self.edges == other.edges and self.cells == other.cells)
