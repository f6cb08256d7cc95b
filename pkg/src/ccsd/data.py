"""Synthetic datasets, JSON-lines complex files and the binary checkpoint container."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import torch

from .complex import DTYPE, ComplexTensor, DimConstraints
from .lifting import LiftSpec, lift

DATASETS = ("community_small", "grid_small", "file")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_community_small(seed: int = 0, count: int = 100, n_range: tuple[int, int] = (12, 19),
                        p_intra: float = 0.7, p_inter: float = 0.05) -> list[np.ndarray]:
    """Two-community random graphs; community sizes ceil(n/2) and floor(n/2)."""
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        half = (n + 1) // 2
        side = np.arange(n) >= half
        same = side[:, None] == side[None, :]
        prob = np.where(same, p_intra, p_inter)
        draw = rng.random((n, n)) < prob
        adj = np.triu(draw, 1)
        graphs.append((adj | adj.T).astype(np.float64))
    return graphs


def grid_graph(rows: int, cols: int) -> np.ndarray:
    n = rows * cols
    adj = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                adj[i, i + 1] = adj[i + 1, i] = 1
            if r + 1 < rows:
                adj[i, i + cols] = adj[i + cols, i] = 1
    return adj


def gen_grid_small(seed: int = 0, count: int = 100, side_range: tuple[int, int] = (4, 7)) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    lo, hi = side_range
    return [grid_graph(int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))) for _ in range(count)]


def degree_features(adj: np.ndarray, f0: int) -> np.ndarray:
    """One-hot node degree; degrees >= f0 fall into the last slot."""
    deg = np.minimum(adj.sum(1).astype(int), f0 - 1)
    return np.eye(f0)[deg]


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "community_small"
    count: int = 100
    seed: int = 0
    max_nodes: int = 20
    max_features: int = 10
    lift: LiftSpec | None = field(default_factory=lambda: LiftSpec("path", 3))
    params: Mapping[str, Any] = field(default_factory=dict)
    path: str | None = None

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ValueError(f"unknown dataset {self.name!r}; expected one of {DATASETS}")
        if self.count < 1:
            raise ValueError("dataset count must be >= 1")


def generate_graphs(spec: DatasetSpec) -> list[np.ndarray]:
    if spec.name == "community_small":
        return gen_community_small(spec.seed, spec.count, **spec.params)
    if spec.name == "grid_small":
        return gen_grid_small(spec.seed, spec.count, **spec.params)
    raise ValueError("file datasets are read, not generated")


def complexes_from_graphs(graphs: Iterable[np.ndarray], f0: int, lift_spec: LiftSpec | None,
                          constraints: DimConstraints | None = None) -> list[ComplexTensor]:
    out = []
    for adj in graphs:
        X = degree_features(adj, f0)
        if lift_spec is None:
            out.append(ComplexTensor.from_cells(X, adj, [], constraints or DimConstraints()))
        else:
            out.append(lift(X, adj, lift_spec))
    return out


def build_dataset(spec: DatasetSpec) -> list[ComplexTensor]:
    if spec.name == "file":
        return read_complexes(spec.path)
    return complexes_from_graphs(generate_graphs(spec), spec.max_features, spec.lift)


def split_dataset(items: Sequence, test_fraction: float = 0.2, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled split; the test part holds round(test_fraction * len) items."""
    perm = np.random.default_rng(seed).permutation(len(items))
    n_test = int(round(test_fraction * len(items)))
    test = [items[i] for i in sorted(perm[:n_test])]
    train = [items[i] for i in sorted(perm[n_test:])]
    return train, test


# ---------------------------------------------------------------------------
# JSON-lines complexes
# ---------------------------------------------------------------------------

class DatasetFormatError(ValueError):
    pass


def complex_to_record(ct: ComplexTensor) -> dict:
    if not bool(ct.node_mask.all()):
        raise ValueError("trim padded complexes before writing")
    A = ct.A
    rec: dict[str, Any] = {"n": ct.n, "x": ct.X.tolist(),
                           "dims": [ct.constraints.d_min, ct.constraints.d_max]}
    binary = ct.f1 == 1 and bool(torch.all((A == 0) | (A == 1)))
    if binary:
        rec["edges"] = [list(e) for e in ct.edges()]
    else:
        rec["a"] = A.tolist()
    rec["f2"] = ct.f2
    rec["cells_2"] = [{"nodes": list(c), "feature": list(v)} for c, v in sorted(ct.cells().items())]
    return rec


def record_to_complex(rec: Mapping, constraints: DimConstraints | None = None) -> ComplexTensor:
    n = int(rec["n"])
    X = torch.tensor(rec["x"], dtype=DTYPE).reshape(n, -1)
    if "edges" in rec:
        A = torch.zeros(n, n, 1, dtype=DTYPE)
        for i, j in rec["edges"]:
            A[i, j, 0] = A[j, i, 0] = 1.0
    elif "a" in rec:
        A = torch.tensor(rec["a"], dtype=DTYPE).reshape(n, n, -1)
    else:
        raise KeyError("record needs 'edges' or 'a'")
    if constraints is None:
        d = rec.get("dims", [3, 3])
        constraints = DimConstraints(int(d[0]), int(d[1]))
    cells = {tuple(c["nodes"]): c["feature"] for c in rec.get("cells_2", [])}
    return ComplexTensor.from_cells(X, A, cells, constraints, f2=int(rec.get("f2", 1)))


def write_complexes(path, complexes: Iterable[ComplexTensor]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ct in complexes:
            fh.write(json.dumps(complex_to_record(ct), separators=(",", ":")) + "\n")


def read_complexes(path, constraints: DimConstraints | None = None) -> list[ComplexTensor]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(record_to_complex(json.loads(line), constraints))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError, RuntimeError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"CCSDCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (frozenset, set)):
        return sorted(obj)
    return obj


def spec_hash(*specs) -> str:
    blob = json.dumps([_plain(s) for s in specs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor], header: Mapping[str, Any]) -> None:
    """Write ``header`` (JSON) followed by named float64 arrays, little-endian with shape prefixes."""
    head = dict(_plain(header))
    head["format_version"] = FORMAT_VERSION
    head["tensors"] = list(tensors)
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name, t in tensors.items():
            arr = t.detach().to(torch.float64).contiguous().numpy()
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path, expect_hash: str | None = None) -> tuple[dict, dict[str, torch.Tensor]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    header = json.loads(data[16:16 + hlen])
    if expect_hash is not None and header.get("spec_hash") != expect_hash:
        raise CheckpointError(f"{path}: model spec hash {header.get('spec_hash')} does not match "
                              f"the configured models ({expect_hash})")
    off = 16 + hlen
    tensors = {}
    for _ in header["tensors"]:
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        tensors[name] = torch.from_numpy(arr.astype(np.float64))
    return header, tensors
