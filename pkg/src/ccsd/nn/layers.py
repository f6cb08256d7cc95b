"""Graph and Hodge layers.

All layers are batched: node features ``[B, n, d]``, adjacency channels
``[B, c, n, n]``, Hodge-dual channels ``[B, c, m, m]`` and incidence tensors
in whatever layout the supplied backend (``ops.DenseIncidence`` or
``ops.CompactIncidence``) uses. ``node_mask`` is ``[B, n]`` or None.

A Hodge channel may also be passed as its diagonal ``[B, (c,) m]``; the
Hodge dual of an adjacency is diagonal, and this form avoids building the
``m x m`` matrices.
"""
from __future__ import annotations

import math

import torch
from torch import nn


def glorot_(w: torch.Tensor, fan_in: int, fan_out: int, gen: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * 2 * bound - bound)
    return w


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, gen: torch.Generator, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(glorot_(torch.empty(d_in, d_out, dtype=torch.float64), d_in, d_out, gen))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=torch.float64)) if bias else None

    def forward(self, x):
        out = x @ self.weight
        return out if self.bias is None else out + self.bias


class MLP(nn.Module):
    """Tanh hidden layers, linear output. ``num_layers=1`` is a single affine map."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, num_layers: int, gen: torch.Generator):
        super().__init__()
        if num_layers < 1:
            raise ValueError("MLP needs at least one layer")
        dims = [d_in] + [d_hidden] * (num_layers - 1) + [d_out]
        self.layers = nn.ModuleList(Linear(a, b, gen) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.tanh(x)
        return x


def mask_nodes(x: torch.Tensor, node_mask: torch.Tensor | None) -> torch.Tensor:
    return x if node_mask is None else x * node_mask[..., None]


def mask_pairs(a: torch.Tensor, node_mask: torch.Tensor | None) -> torch.Tensor:
    """Zero rows/columns of inactive nodes in ``[B, (c,) n, n]``."""
    if node_mask is None:
        return a
    pm = node_mask[:, :, None] * node_mask[:, None, :]
    if a.dim() == 4:
        pm = pm[:, None]
    return a * pm


def normalized(adj: torch.Tensor, self_loops: bool) -> torch.Tensor:
    """``D^-1/2 M D^-1/2`` with degrees clamped below at 1 (zero rows stay zero)."""
    if self_loops:
        adj = adj + torch.eye(adj.shape[-1], dtype=adj.dtype)
    d = adj.sum(-1).clamp(min=1).pow(-0.5)
    return d[..., :, None] * adj * d[..., None, :]


class GCN(nn.Module):
    """``D^-1/2 (A + I) D^-1/2 X Theta`` (no bias)."""

    def __init__(self, d_in: int, d_out: int, gen: torch.Generator):
        super().__init__()
        self.lin = Linear(d_in, d_out, gen, bias=False)

    def forward(self, x, adj):
        return normalized(adj, self_loops=True) @ self.lin(x)


def head_attention(q: torch.Tensor, k: torch.Tensor, heads: int, scale_dim: int) -> torch.Tensor:
    """Per-head scaled ``Q K^T`` on contiguous channel blocks, averaged over heads, symmetrized."""
    B, n, d = q.shape
    if d % heads:
        raise ValueError(f"attention dim {d} not divisible by {heads} heads")
    qh = q.reshape(B, n, heads, d // heads).transpose(1, 2)
    kh = k.reshape(B, n, heads, d // heads).transpose(1, 2)
    att = (qh @ kh.transpose(-1, -2)).mean(1) / math.sqrt(scale_dim)
    return 0.5 * (att + att.transpose(-1, -2))


class GMH(nn.Module):
    """Graph multi-head attention on one adjacency channel."""

    def __init__(self, d_in: int, d_attn: int, d_out: int, heads: int, gen: torch.Generator):
        super().__init__()
        if d_attn % heads:
            raise ValueError(f"attention dim {d_attn} not divisible by {heads} heads")
        self.heads = heads
        self.d_out = d_out
        self.value = GCN(d_in, d_out, gen)
        self.query = GCN(d_in, d_attn, gen)
        self.key = GCN(d_in, d_attn, gen)

    def forward(self, x, adj):
        value = self.value(x, adj)
        att = head_attention(self.query(x, adj), self.key(x, adj), self.heads, self.d_out)
        return value, att


class AttLayer(nn.Module):
    """One ``gmh`` per adjacency channel, then an MLP on the node values and one on the attention maps."""

    def __init__(self, d_in: int, d_hidden: int, c_in: int, c_out: int, heads: int,
                 mlp_layers: int, gen: torch.Generator):
        super().__init__()
        self.blocks = nn.ModuleList(GMH(d_in, d_hidden, d_hidden, heads, gen) for _ in range(c_in))
        self.node_mlp = MLP(c_in * d_hidden, 2 * d_hidden, d_hidden, mlp_layers, gen)
        self.adj_mlp = MLP(c_in, 2 * c_out, c_out, mlp_layers, gen)

    def forward(self, x, adjs, node_mask=None):
        values, atts = [], []
        for c, block in enumerate(self.blocks):
            v, a = block(x, adjs[:, c])
            values.append(v)
            atts.append(a)
        x_new = torch.tanh(self.node_mlp(torch.cat(values, -1)))
        a_new = self.adj_mlp(torch.stack(atts, -1)).permute(0, 3, 1, 2)
        return mask_nodes(x_new, node_mask), mask_pairs(a_new, node_mask)


def normalized_diag(h: torch.Tensor) -> torch.Tensor:
    """:func:`normalized` of ``diag(h)``, returned as its diagonal."""
    return h / h.clamp(min=1)


class HCN(nn.Module):
    """``D^-1/2 H D^-1/2 F Theta`` with ``Theta`` acting on the flattened ``(cell, feature)`` axis."""

    def __init__(self, num_cells: int, f_in: int, d_out: int, gen: torch.Generator):
        super().__init__()
        w = torch.empty(num_cells, f_in, d_out, dtype=torch.float64)
        self.weight = nn.Parameter(glorot_(w, num_cells * f_in, d_out, gen))

    def forward(self, H, F, backend):
        y = backend.theta(F, self.weight)
        if H.dim() == 2:
            return normalized_diag(H)[..., None] * y
        return normalized(H, self_loops=False) @ y


def head_attention_diag(q: torch.Tensor, k: torch.Tensor, heads: int, scale_dim: int) -> torch.Tensor:
    """Diagonal of :func:`head_attention`."""
    if q.shape[-1] % heads:
        raise ValueError(f"attention dim {q.shape[-1]} not divisible by {heads} heads")
    return (q * k).sum(-1) / heads / math.sqrt(scale_dim)


class HCCMH(nn.Module):
    """Hodge multi-head attention: value ``H F`` and symmetrized attention between edges."""

    def __init__(self, num_cells: int, f_in: int, d_attn: int, heads: int, gen: torch.Generator):
        super().__init__()
        if d_attn % heads:
            raise ValueError(f"Hodge attention dim {d_attn} not divisible by {heads} heads")
        self.heads = heads
        self.d_attn = d_attn
        self.query = HCN(num_cells, f_in, d_attn, gen)
        self.key = HCN(num_cells, f_in, d_attn, gen)

    def forward(self, H, F, backend, with_value: bool = True, diag_only: bool = False):
        """With ``diag_only`` only the diagonal ``[B, m]`` of the attention is returned."""
        value = backend.left_mul(H, F) if with_value else None
        attend = head_attention_diag if diag_only else head_attention
        att = attend(self.query(H, F, backend), self.key(H, F, backend), self.heads, self.d_attn)
        return value, att


class HodgeAttLayer(nn.Module):
    def __init__(self, num_cells: int, f_in: int, f_out: int, c_in: int, c_out: int, d_attn: int,
                 heads: int, mlp_layers: int, mlp_hidden: int, gen: torch.Generator):
        super().__init__()
        self.blocks = nn.ModuleList(HCCMH(num_cells, f_in, d_attn, heads, gen) for _ in range(c_in))
        self.hodge_mlp = MLP(c_in, mlp_hidden, c_out, mlp_layers, gen)
        self.value_mlp = MLP(c_in * f_in, mlp_hidden, f_out, mlp_layers, gen)

    def forward(self, Hs, F, backend, with_values: bool = True, diag_only: bool = False):
        """``Hs`` is ``[B, c_in, m, m]`` or ``[B, c_in, m]``; returns ``(H', F' or None)``.

        ``H'`` is ``[B, c_out, m, m]``, or its diagonal ``[B, c_out, m]`` with ``diag_only``.
        """
        values, atts = [], []
        for c, block in enumerate(self.blocks):
            v, a = block(Hs[:, c], F, backend, with_values, diag_only)
            values.append(v)
            atts.append(a)
        H_new = torch.tanh(self.hodge_mlp(torch.stack(atts, -1)))
        H_new = H_new.permute(0, 2, 1) if diag_only else H_new.permute(0, 3, 1, 2)
        F_new = backend.mask(self.value_mlp(torch.cat(values, -1))) if with_values else None
        return H_new, F_new


class HodgeBaselineLayer(nn.Module):
    """Attention-free Hodge block: channel MLPs on the stacked ``H`` and on the values ``H F``."""

    def __init__(self, f_in: int, f_out: int, c_in: int, c_out: int, mlp_layers: int,
                 mlp_hidden: int, gen: torch.Generator):
        super().__init__()
        self.hodge_mlp = MLP(c_in, mlp_hidden, c_out, mlp_layers, gen)
        self.value_mlp = MLP(c_in * f_in, mlp_hidden, f_out, mlp_layers, gen)

    def forward(self, Hs, F, backend, with_values: bool = True, diag_only: bool = False):
        if diag_only:
            d = Hs if Hs.dim() == 3 else torch.diagonal(Hs, dim1=-2, dim2=-1)
            H_new = torch.tanh(self.hodge_mlp(d.permute(0, 2, 1))).permute(0, 2, 1)
        else:
            full = torch.diag_embed(Hs) if Hs.dim() == 3 else Hs
            H_new = torch.tanh(self.hodge_mlp(full.permute(0, 2, 3, 1))).permute(0, 3, 1, 2)
        if not with_values:
            return H_new, None
        values = [backend.left_mul(Hs[:, c], F) for c in range(Hs.shape[1])]
        return H_new, backend.mask(self.value_mlp(torch.cat(values, -1)))
