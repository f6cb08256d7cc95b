"""Score networks for the three ranks of a complex.

Networks predict the noise direction; the score is ``-output / std(t)``,
applied by the caller. Batched shapes: ``X [B, n, f0]``, ``A [B, n, n, f1]``,
``F`` in the backend layout (compact ``[B, K, E, f2]`` by default).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

import torch
from torch import nn

from ..complex import (DimConstraints, adjacency_to_edge_vector, cell_layout, edge_vector_to_adjacency,
                       hodge_dual_inverse, higher_order_adjacency)
from . import layers as L
from .ops import make_backend

MODEL_KINDS = ("score_x", "score_a_cc", "score_a_base_cc", "score_f")


@dataclass(frozen=True)
class ScoreModelSpec:
    which: str
    n: int = 20
    f0: int = 10
    f1: int = 1
    f2: int = 1
    constraints: DimConstraints = field(default_factory=DimConstraints)
    # graph track
    depth: int = 3              # GCN layers (score_x)
    hidden: int = 32
    heads: int = 4
    c_init: int = 2
    c_hid: int = 8
    c_final: int = 4
    num_layers: int = 5         # attention blocks (score_a_*)
    mlp_layers: int = 2
    # Hodge track
    hodge_layers: int = 1
    hodge_mlp_layers: int = 1
    hodge_mlp_hidden: int = 4
    hodge_c_hid: int = 2
    hodge_c_final: int = 2
    hodge_heads: int = 2
    hodge_attn_dim: int = 4
    hodge_hidden: int = 4       # feature width of F' between Hodge blocks
    # rank-2 score
    power: int = 2
    f_layers: int = 2           # HodgeNetwork stages in score_f
    f_mlp_layers: int = 1
    apply_hodge_mask: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.which not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.which!r}; expected one of {MODEL_KINDS}")
        counts = dict(n=self.n, f0=self.f0, f1=self.f1, f2=self.f2, hidden=self.hidden, heads=self.heads,
                      c_init=self.c_init, c_hid=self.c_hid, c_final=self.c_final, num_layers=self.num_layers,
                      mlp_layers=self.mlp_layers, hodge_mlp_layers=self.hodge_mlp_layers,
                      hodge_mlp_hidden=self.hodge_mlp_hidden, hodge_c_hid=self.hodge_c_hid,
                      hodge_c_final=self.hodge_c_final, hodge_heads=self.hodge_heads,
                      hodge_attn_dim=self.hodge_attn_dim, hodge_hidden=self.hodge_hidden,
                      power=self.power, f_mlp_layers=self.f_mlp_layers)
        bad = [k for k, v in counts.items() if v < 1]
        if bad:
            raise ValueError(f"counts must be >= 1: {bad}")
        if self.depth < 0 or self.hodge_layers < 0 or self.f_layers < 0:
            raise ValueError("layer counts must be >= 0")
        if self.hidden % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.hodge_attn_dim % self.hodge_heads:
            raise ValueError(f"hodge_heads ({self.hodge_heads}) must divide hodge_attn_dim ({self.hodge_attn_dim})")

    @classmethod
    def from_config(cls, which: str, cfg: Mapping[str, Any], **shared) -> "ScoreModelSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(cfg) - names)
        if unknown:
            raise ValueError(f"unknown model keys for {which}: {unknown}")
        return cls(which=which, **{**shared, **dict(cfg)})

    def replace(self, **kw) -> "ScoreModelSpec":
        return dataclasses.replace(self, **kw)


def _gen(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g


class ScoreNetworkX(nn.Module):
    def __init__(self, spec: ScoreModelSpec):
        super().__init__()
        g = _gen(spec.seed)
        dims = [spec.f0] + [spec.hidden] * spec.depth
        self.convs = nn.ModuleList(L.GCN(a, b, g) for a, b in zip(dims[:-1], dims[1:]))
        fdim = spec.f0 + spec.depth * spec.hidden
        self.final = L.MLP(fdim, 2 * fdim, spec.f0, 3, g)

    def forward(self, X, A, F=None, node_mask=None, backend=None):
        adj = A.sum(-1) if A.dim() == 4 else A
        hs = [X]
        x = X
        for conv in self.convs:
            x = torch.tanh(conv(x, adj))
            hs.append(x)
        return L.mask_nodes(self.final(torch.cat(hs, -1)), node_mask)


class _ScoreNetworkABase(nn.Module):
    """Shared graph (attention) track and readout for both adjacency scores."""

    def __init__(self, spec: ScoreModelSpec, hodge_blocks: nn.ModuleList):
        super().__init__()
        g = _gen(spec.seed)
        self.spec = spec
        self.layout = cell_layout(spec.n, spec.constraints)
        blocks = []
        for i in range(spec.num_layers):
            c_in = spec.c_init if i == 0 else spec.c_hid
            c_out = spec.c_final if i == spec.num_layers - 1 else spec.c_hid
            d_in = spec.f0 if i == 0 else spec.hidden
            blocks.append(L.AttLayer(d_in, spec.hidden, c_in, c_out, spec.heads, spec.mlp_layers, g))
        self.att = nn.ModuleList(blocks)
        self.hodge = hodge_blocks
        fdim = spec.c_init + spec.c_hid * (spec.num_layers - 1) + spec.c_final
        if spec.hodge_layers > 0:
            fdim += spec.c_init + spec.hodge_c_hid * (spec.hodge_layers - 1) + spec.hodge_c_final
        self.final = L.MLP(fdim, 2 * fdim, spec.f1, 3, _gen(spec.seed + 1))

    @staticmethod
    def hodge_channels(spec: ScoreModelSpec, i: int) -> tuple[int, int, int, int]:
        """``(c_in, c_out, f_in, f_out)`` of the ``i``-th Hodge block."""
        c_in = spec.c_init if i == 0 else spec.hodge_c_hid
        c_out = spec.hodge_c_final if i == spec.hodge_layers - 1 else spec.hodge_c_hid
        f_in = spec.f2 if i == 0 else spec.hodge_hidden
        return c_in, c_out, f_in, spec.hodge_hidden

    def forward(self, X, A, F, node_mask=None, backend=None):
        spec = self.spec
        adj = A.sum(-1) if A.dim() == 4 else A
        adjc = L.mask_pairs(higher_order_adjacency(adj, spec.c_init), node_mask)
        outs = [adjc]
        x = X
        for layer in self.att:
            x, adjc = layer(x, adjc, node_mask)
            outs.append(adjc)
        if len(self.hodge):
            if backend is None:
                backend = make_backend(self.layout, node_mask, compact=True)
            # Hodge duals are diagonal: carry them as [B, c, m] until a block makes them dense
            Hs = adjacency_to_edge_vector(outs[0])
            f = F
            outs.append(edge_vector_to_adjacency(Hs))
            for i, block in enumerate(self.hodge):
                last = i == len(self.hodge) - 1
                # only the diagonal of the last block's output is read back
                Hs, f = block(Hs, f, backend, with_values=not last, diag_only=last)
                outs.append(edge_vector_to_adjacency(Hs) if last else hodge_dual_inverse(Hs))
        h = torch.cat(outs, 1).permute(0, 2, 3, 1)
        out = self.final(h)
        out = 0.5 * (out + out.transpose(1, 2))
        out = out * (1 - torch.eye(spec.n, dtype=out.dtype))[None, :, :, None]
        if node_mask is not None:
            out = out * (node_mask[:, :, None] * node_mask[:, None, :])[..., None]
        return out


class ScoreNetworkA_CC(_ScoreNetworkABase):
    def __init__(self, spec: ScoreModelSpec):
        g = _gen(spec.seed + 2)
        K = len(cell_layout(spec.n, spec.constraints))
        blocks = []
        for i in range(spec.hodge_layers):
            c_in, c_out, f_in, f_out = self.hodge_channels(spec, i)
            blocks.append(L.HodgeAttLayer(K, f_in, f_out, c_in, c_out, spec.hodge_attn_dim, spec.hodge_heads,
                                          spec.hodge_mlp_layers, spec.hodge_mlp_hidden, g))
        super().__init__(spec, nn.ModuleList(blocks))


class ScoreNetworkA_Base_CC(_ScoreNetworkABase):
    def __init__(self, spec: ScoreModelSpec):
        g = _gen(spec.seed + 2)
        blocks = []
        for i in range(spec.hodge_layers):
            c_in, c_out, f_in, f_out = self.hodge_channels(spec, i)
            blocks.append(L.HodgeBaselineLayer(f_in, f_out, c_in, c_out, spec.hodge_mlp_layers,
                                               spec.hodge_mlp_hidden, g))
        super().__init__(spec, nn.ModuleList(blocks))


class ScoreNetworkF(nn.Module):
    """Entrywise network over the higher-order incidence channels ``F, HF, .., H^(p-1) F``."""

    def __init__(self, spec: ScoreModelSpec):
        super().__init__()
        g = _gen(spec.seed)
        self.spec = spec
        self.layout = cell_layout(spec.n, spec.constraints)
        c = spec.power * spec.f2
        self.stages = nn.ModuleList(L.MLP(c, c, c, spec.f_mlp_layers, g) for _ in range(spec.f_layers))
        fdim = c * (spec.f_layers + 1)
        self.final = L.MLP(fdim, 2 * fdim, spec.f2, max(spec.f_mlp_layers, 2), g)

    def incidence_powers(self, F, backend):
        spec = self.spec
        chans = [F]
        if spec.power > 1:
            H = backend.gram(F)
            Hp = H
            for _ in range(spec.power - 1):
                chans.append(backend.left_mul(Hp, F) if backend.compact or spec.apply_hodge_mask
                             else backend.left_mul_full(Hp, F))
                Hp = Hp @ H
        return torch.cat(chans, -1)

    def forward(self, X, A, F, node_mask=None, backend=None):
        spec = self.spec
        if backend is None:
            backend = make_backend(self.layout, node_mask, compact=True)
        if backend.compact and not spec.apply_hodge_mask:
            raise ValueError("the compact incidence layout requires apply_hodge_mask")
        k = self.incidence_powers(F, backend)
        ks = [k]
        for stage in self.stages:
            k = torch.tanh(stage(k))
            ks.append(k)
        out = self.final(torch.cat(ks, -1))
        return backend.mask(out) if spec.apply_hodge_mask else out


_REGISTRY = {
    "score_x": ScoreNetworkX,
    "score_a_cc": ScoreNetworkA_CC,
    "score_a_base_cc": ScoreNetworkA_Base_CC,
    "score_f": ScoreNetworkF,
}


def build(spec: ScoreModelSpec) -> nn.Module:
    return _REGISTRY[spec.which](spec)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
