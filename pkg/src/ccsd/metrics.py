"""Graph and complex statistics and the MMD machinery used to compare sample sets."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch

from .complex import ComplexTensor, cell_layout, edge_pairs
from .nn.ops import CompactIncidence

ORBIT_IDS = tuple(range(4, 15))


# ---------------------------------------------------------------------------
# kernels and discrepancies
# ---------------------------------------------------------------------------

def emd_1d(p, q) -> float:
    """Earth mover's distance between histograms on the same unit-spaced support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"histograms differ in length: {p.shape} vs {q.shape}")
    return float(np.abs(np.cumsum(p) - np.cumsum(q)).sum())


def gaussian_kernel(x, y, sigma: float = 1.0) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-d.dot(d) / (2 * sigma ** 2)))


def gaussian_emd_kernel(x, y, sigma: float = 1.0) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return float(np.exp(-emd_1d(x, y) / (2 * sigma ** 2)))


KERNELS: dict[str, Callable] = {"gaussian": gaussian_kernel, "gaussian_emd": gaussian_emd_kernel}


def pad_to(vectors: Sequence[np.ndarray], length: int) -> list[np.ndarray]:
    out = []
    for v in vectors:
        v = np.asarray(v, dtype=float).ravel()
        out.append(np.pad(v, (0, length - len(v))))
    return out


def mmd(P: Sequence, Q: Sequence, kernel: str = "gaussian_emd", sigma: float = 1.0,
        normalize: bool = True) -> float:
    """Squared MMD with mean-normalized discrepancies, clamped at zero.

    Inputs are zero-padded to a common length; with ``normalize`` every
    vector is rescaled to sum to one (all-zero vectors are left as is).
    """
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("mmd needs two nonempty sample sets")
    k = KERNELS[kernel]
    length = max(len(np.ravel(v)) for v in itertools.chain(P, Q))
    P, Q = pad_to(P, length), pad_to(Q, length)
    if normalize:
        P = [v / v.sum() if v.sum() > 0 else v for v in P]
        Q = [v / v.sum() if v.sum() > 0 else v for v in Q]

    def disc(X, Y):
        return sum(k(x, y, sigma) for x in X for y in Y) / (len(X) * len(Y))

    return max(0.0, disc(P, P) + disc(Q, Q) - 2 * disc(P, Q))


# ---------------------------------------------------------------------------
# graph statistics
# ---------------------------------------------------------------------------

def _binary(adj) -> np.ndarray:
    if isinstance(adj, ComplexTensor):
        return adj.binary_adjacency()
    a = np.asarray(adj)
    if a.ndim == 3:
        a = np.abs(a).sum(-1)
    return a != 0


def degree_histogram(adj) -> np.ndarray:
    a = _binary(adj)
    n = a.shape[0]
    return np.bincount(a.sum(1).astype(int), minlength=max(n, 1)).astype(float)


def clustering_coefficients(adj) -> np.ndarray:
    a = _binary(adj).astype(float)
    deg = a.sum(1)
    tri = np.diag(a @ a @ a) / 2  # connected unordered neighbour pairs
    denom = deg * (deg - 1)
    return np.where(deg >= 2, 2 * tri / np.where(denom > 0, denom, 1), 0.0)


def clustering_histogram(adj, bins: int = 100) -> np.ndarray:
    hist, _ = np.histogram(clustering_coefficients(adj), bins=bins, range=(0.0, 1.0))
    return hist.astype(float)


def classify_quad(sub: np.ndarray) -> list[int]:
    """Orbit id of each node of a connected induced 4-node subgraph."""
    deg = sub.sum(1).astype(int)
    edges = int(deg.sum()) // 2
    if edges == 3:
        if deg.max() == 3:
            return [7 if d == 3 else 6 for d in deg]
        return [4 if d == 1 else 5 for d in deg]
    if edges == 4:
        if deg.max() == 2:
            return [8] * 4
        return [{1: 9, 2: 10, 3: 11}[d] for d in deg]
    if edges == 5:
        return [12 if d == 2 else 13 for d in deg]
    if edges == 6:
        return [14] * 4
    raise ValueError("subgraph is not a connected 4-node graph")


def connected_quads(a: np.ndarray) -> Iterable[tuple[int, ...]]:
    """Enumerate connected 4-node subsets once each (ESU enumeration)."""
    n = a.shape[0]
    nbrs = [set(np.flatnonzero(a[i]).tolist()) for i in range(n)]

    def extend(sub, ext, v, closed):
        if len(sub) == 4:
            yield tuple(sorted(sub))
            return
        ext = set(ext)
        while ext:
            w = ext.pop()
            new_ext = ext | {u for u in nbrs[w] if u > v and u not in closed}
            yield from extend(sub + [w], new_ext, v, closed | nbrs[w])

    for v in range(n):
        ext = {u for u in nbrs[v] if u > v}
        yield from extend([v], ext, v, nbrs[v] | {v})


def orbit_counts(adj) -> np.ndarray:
    """Per-node counts of the 4-node graphlet orbits 4..14, shape ``[n, 11]``."""
    a = _binary(adj)
    n = a.shape[0]
    counts = np.zeros((n, len(ORBIT_IDS)))
    for quad in connected_quads(a):
        idx = list(quad)
        for node, orbit in zip(idx, classify_quad(a[np.ix_(idx, idx)])):
            counts[node, orbit - 4] += 1
    return counts


def mean_orbit_vector(adj) -> np.ndarray:
    c = orbit_counts(adj)
    return c.mean(0) if len(c) else np.zeros(len(ORBIT_IDS))


# ---------------------------------------------------------------------------
# complex statistics
# ---------------------------------------------------------------------------

def rank_r_metric(ct: ComplexTensor, r: int) -> np.ndarray:
    """Cell counts per cardinality (single feature) or per feature index (featured)."""
    if r not in (0, 1, 2):
        raise ValueError(f"rank must be 0, 1 or 2, got {r}")
    if r == 0:
        X = ct.X[ct.node_mask.bool()].numpy()
        if X.shape[1] == 1:
            return np.array([float(len(X))])
        return (X != 0).sum(0).astype(float)
    if r == 1:
        vals = np.array(list(ct.edges().values())).reshape(-1, ct.f1)
        if ct.f1 == 1:
            return np.array([float(len(vals))])
        return (vals != 0).sum(0).astype(float)
    cells = ct.cells()
    c = ct.constraints
    if ct.f2 == 1:
        hist = np.zeros(c.d_max - c.d_min + 1)
        for nodes in cells:
            hist[len(nodes) - c.d_min] += 1
        return hist
    hist = np.zeros(ct.f2)
    for feat in cells.values():
        hist += np.asarray(feat) != 0
    return hist


def hodge_laplacian_of(ct: ComplexTensor) -> np.ndarray:
    backend = CompactIncidence(ct.layout)
    return backend.gram(ct.Fc[None])[0].numpy()


def hodge_spectrum(ct: ComplexTensor) -> np.ndarray:
    """Eigenvalues of ``F F^T`` in descending order (with multiplicity)."""
    H = hodge_laplacian_of(ct)
    try:
        vals = np.linalg.eigvalsh(H)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(H) if np.isfinite(H).all() else float("nan")
        raise np.linalg.LinAlgError(f"eigensolver failed on a {H.shape[0]}x{H.shape[0]} Hodge Laplacian "
                                    f"(condition number {cond:.3g}, frobenius {np.linalg.norm(H):.3g}): {exc}")
    return np.clip(vals[::-1], 0.0, None)


def graph_laplacian(ct: ComplexTensor) -> np.ndarray:
    a = ct.binary_adjacency().astype(float)
    return np.diag(a.sum(1)) - a


def _edge_permutation(perm: Sequence[int], n: int) -> np.ndarray:
    iu = edge_pairs(n).numpy()
    lookup = {(int(i), int(j)): e for e, (i, j) in enumerate(iu)}
    out = np.empty(len(iu), dtype=int)
    for e, (i, j) in enumerate(iu):
        a, b = sorted((perm[i], perm[j]))
        out[e] = lookup[(a, b)]
    return out


def hodge_distance_oracle(cc1: ComplexTensor, cc2: ComplexTensor, max_nodes: int = 6) -> float:
    """Exhaustive minimum over node relabellings of the Frobenius distance between Laplacians.

    Ranks 1 (graph Laplacian) and 2 (``F F^T`` on the edge axis) are each
    minimised separately and the two minima averaged.
    """
    n = cc1.n
    if cc2.n != n:
        raise ValueError("complexes must have the same node count")
    if n > max_nodes:
        raise ValueError(f"exhaustive search refused for n={n} > {max_nodes}")
    L1a, L1b = graph_laplacian(cc1), graph_laplacian(cc2)
    H2a, H2b = hodge_laplacian_of(cc1), hodge_laplacian_of(cc2)
    best1 = best2 = math.inf
    for perm in itertools.permutations(range(n)):
        p = np.asarray(perm)
        # node i of cc1 becomes node perm[i]
        P1 = np.empty_like(L1a)
        P1[np.ix_(p, p)] = L1a
        best1 = min(best1, float(np.linalg.norm(P1 - L1b)))
        e = _edge_permutation(perm, n)
        P2 = np.empty_like(H2a)
        P2[np.ix_(e, e)] = H2a
        best2 = min(best2, float(np.linalg.norm(P2 - H2b)))
    return 0.5 * (best1 + best2)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricConfig:
    degree_sigma: float = 1.0
    cluster_sigma: float = 1.0
    orbit_sigma: float = 1.0
    rank_sigma: float = 1.0
    spectrum_sigma: float = 1.0
    cluster_bins: int = 100

    @classmethod
    def from_config(cls, cfg: Mapping | None) -> "MetricConfig":
        cfg = dict(cfg or {})
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown metric keys: {sorted(unknown)}")
        return cls(**cfg)


@dataclass
class MetricReport:
    degree_mmd: float
    cluster_mmd: float
    orbit_mmd: float
    rank2_mmd: float
    hodge_spectrum_mmd: float
    rank0_mmd: float | None = None
    rank1_mmd: float | None = None
    graph_average: float = field(init=False)
    average: float = field(init=False)

    def __post_init__(self):
        vals = self.values()
        for k, v in vals.items():
            if v is not None and (math.isnan(v) or v < 0):
                raise ValueError(f"{k} must be a nonnegative number, got {v}")
        self.graph_average = (self.degree_mmd + self.cluster_mmd + self.orbit_mmd) / 3
        present = [v for v in vals.values() if v is not None]
        self.average = sum(present) / len(present)

    def values(self) -> dict:
        return {k: getattr(self, k) for k in ("degree_mmd", "cluster_mmd", "orbit_mmd", "rank0_mmd",
                                              "rank1_mmd", "rank2_mmd", "hodge_spectrum_mmd")}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(generated: Sequence[ComplexTensor], reference: Sequence[ComplexTensor],
             config: MetricConfig | None = None) -> MetricReport:
    if not generated or not reference:
        raise ValueError("evaluate needs two nonempty sets")
    cfg = config or MetricConfig()

    def stat(fn, items):
        return [fn(ct) for ct in items]

    def both(fn):
        return stat(fn, generated), stat(fn, reference)

    deg = mmd(*both(degree_histogram), kernel="gaussian_emd", sigma=cfg.degree_sigma)
    clus = mmd(*both(lambda c: clustering_histogram(c, cfg.cluster_bins)), kernel="gaussian_emd",
               sigma=cfg.cluster_sigma)
    orb = mmd(*both(mean_orbit_vector), kernel="gaussian", sigma=cfg.orbit_sigma, normalize=False)
    rank2 = mmd(*both(lambda c: rank_r_metric(c, 2)), kernel="gaussian", sigma=cfg.rank_sigma, normalize=False)
    spec = mmd(*both(hodge_spectrum), kernel="gaussian", sigma=cfg.spectrum_sigma, normalize=False)
    featured = generated[0].f0 > 1 and reference[0].f0 > 1
    rank0 = (mmd(*both(lambda c: rank_r_metric(c, 0)), kernel="gaussian", sigma=cfg.rank_sigma,
                 normalize=False) if featured else None)
    rank1 = (mmd(*both(lambda c: rank_r_metric(c, 1)), kernel="gaussian", sigma=cfg.rank_sigma,
                 normalize=False) if generated[0].f1 > 1 else None)
    return MetricReport(deg, clus, orb, rank2, spec, rank0, rank1)
