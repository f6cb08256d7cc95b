"""Lift graphs into dimension-2 combinatorial complexes.

Two procedures are provided: ring (loop) lifting, where every chordless
cycle becomes a rank-2 cell, and path lifting, where the node set of every
simple path with ``k`` nodes that starts at a source node becomes a cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import torch

from .complex import DTYPE, ComplexTensor, DimConstraints


@dataclass(frozen=True)
class LiftSpec:
    method: str = "ring"
    path_length: int = 3
    source_nodes: frozenset[int] | None = None  # None means every node
    constraints: DimConstraints = field(default_factory=DimConstraints)

    def __post_init__(self):
        if self.method not in ("ring", "path"):
            raise ValueError(f"unknown lift method {self.method!r}")
        if self.path_length < 1:
            raise ValueError("path length must be >= 1")

    @property
    def support_rule(self) -> str:
        return "ring" if self.method == "ring" else "path"


def _neighbours(adj: np.ndarray) -> list[list[int]]:
    return [sorted(np.flatnonzero(adj[i]).tolist()) for i in range(adj.shape[0])]


def chordless_cycles(adj: np.ndarray, max_len: int) -> set[tuple[int, ...]]:
    """Node sets of induced cycles of length 3..max_len.

    Each cycle is grown from its smallest node ``s``; a path is only extended
    by a vertex that is not adjacent to any interior path vertex, which keeps
    every path (and the closed cycle) induced.
    """
    nbrs = _neighbours(adj)
    n = adj.shape[0]
    found: set[tuple[int, ...]] = set()

    def extend(path: list[int], on_path: set[int]):
        s, last = path[0], path[-1]
        for v in nbrs[last]:
            if v <= s or v in on_path:
                continue
            # v must not touch interior nodes; touching s closes the cycle
            interior = path[1:-1]
            if any(adj[v, u] for u in interior):
                continue
            if adj[v, s] and len(path) >= 2:
                found.add(tuple(sorted(path + [v])))
                continue
            if len(path) + 1 < max_len:
                on_path.add(v)
                path.append(v)
                extend(path, on_path)
                path.pop()
                on_path.discard(v)

    for s in range(n):
        for u in nbrs[s]:
            if u > s:
                extend([s, u], {s, u})
    return found


def simple_path_sets(adj: np.ndarray, k: int, sources: Iterable[int] | None = None) -> set[tuple[int, ...]]:
    """Node sets of simple paths with exactly ``k`` nodes starting at ``sources``."""
    n = adj.shape[0]
    if k > n:
        return set()
    nbrs = _neighbours(adj)
    starts = range(n) if sources is None else sorted(sources)
    found: set[tuple[int, ...]] = set()

    def walk(path: list[int], on_path: set[int]):
        if len(path) == k:
            found.add(tuple(sorted(path)))
            return
        for v in nbrs[path[-1]]:
            if v not in on_path:
                on_path.add(v)
                path.append(v)
                walk(path, on_path)
                path.pop()
                on_path.discard(v)

    for s in starts:
        walk([s], {s})
    return found


def _graph_arrays(X, A) -> tuple[torch.Tensor, torch.Tensor, np.ndarray]:
    A = torch.as_tensor(A, dtype=DTYPE)
    if A.dim() == 2:
        A = A[..., None]
    X = torch.as_tensor(X, dtype=DTYPE)
    if X.dim() == 1:
        X = X[:, None]
    binary = (A != 0).any(-1).numpy()
    if not np.array_equal(binary, binary.T):
        raise ValueError("graph adjacency must be symmetric")
    if binary.diagonal().any():
        raise ValueError("graph adjacency must not contain self-loops")
    return X, A, binary


def lift_ring(X, A, constraints: DimConstraints) -> ComplexTensor:
    X, A, adj = _graph_arrays(X, A)
    cycles = chordless_cycles(adj, constraints.d_max)
    cells = [c for c in cycles if constraints.d_min <= len(c) <= constraints.d_max]
    return ComplexTensor.from_cells(X, A, cells, constraints)


def lift_path(X, A, spec: LiftSpec) -> ComplexTensor:
    X, A, adj = _graph_arrays(X, A)
    c = spec.constraints
    paths = simple_path_sets(adj, spec.path_length, spec.source_nodes)
    cells = [p for p in paths if c.d_min <= len(p) <= c.d_max]
    return ComplexTensor.from_cells(X, A, cells, c)


def lift(X, A, spec: LiftSpec) -> ComplexTensor:
    if spec.method == "ring":
        return lift_ring(X, A, spec.constraints)
    return lift_path(X, A, spec)
