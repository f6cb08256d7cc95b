"""Incidence-tensor backends shared by the Hodge layers.

Every Hodge layer touches the rank-2 incidence tensor through four primitives:
the Gram matrix ``F F^T``, a left multiplication ``H F`` read back on the
support, a contraction with a learnable ``[K, f, d]`` weight, and masking.
``DenseIncidence`` works on ``[B, m, K, f]`` tensors. ``CompactIncidence``
stores only the ``C(d_max, 2)`` node pairs of each cell (``[B, K, E, f]``)
and is what the training and sampling code use.
"""
from __future__ import annotations

import torch

from ..complex import CellIndex


class DenseIncidence:
    compact = False

    def __init__(self, layout: CellIndex, node_mask: torch.Tensor | None = None):
        self.layout = layout
        self.num_edges = layout.num_edges
        self.num_cells = len(layout)
        dense = torch.zeros(layout.num_edges, len(layout), dtype=torch.float64)
        cols = torch.arange(len(layout))[:, None].expand_as(layout.rows)
        dense[layout.rows[layout.valid], cols[layout.valid]] = 1.0
        if node_mask is not None:
            dense = dense * layout.active_cells(node_mask).to(dense.dtype)[..., None, :]
        self._mask = dense[..., None]  # [(B,) m, K, 1]

    def mask(self, F: torch.Tensor) -> torch.Tensor:
        return F * self._mask

    def gram(self, F: torch.Tensor) -> torch.Tensor:
        Fs = F.sum(-1)
        return Fs @ Fs.transpose(-1, -2)

    def left_mul(self, H: torch.Tensor, F: torch.Tensor) -> torch.Tensor:
        """``H F`` over the edge axis, restricted to the cell support (``H`` may be a diagonal ``[B, m]``)."""
        if H.dim() == 2:
            return self.mask(H[:, :, None, None] * F)
        return self.mask(torch.einsum("bij,bjkf->bikf", H, F))

    def left_mul_full(self, H: torch.Tensor, F: torch.Tensor) -> torch.Tensor:
        return torch.einsum("bij,bjkf->bikf", H, F)

    def theta(self, F: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
        """``F Theta`` with ``F`` flattened over ``(K, f)``: returns ``[B, m, d]``."""
        return torch.einsum("bmkf,kfd->bmd", F, W)

    def to_dense(self, F: torch.Tensor) -> torch.Tensor:
        return F


class CompactIncidence:
    compact = True

    def __init__(self, layout: CellIndex, node_mask: torch.Tensor | None = None):
        self.layout = layout
        self.num_edges = layout.num_edges
        self.num_cells = len(layout)
        self.rows = layout.rows
        self._mask = layout.compact_mask(node_mask)[..., None]  # [(B,) K, E, 1]
        # node-pair slots of every cell, used to gather H at [rows, rows]
        self._ri = layout.rows[:, :, None].expand(-1, -1, layout.slots)
        self._rj = layout.rows[:, None, :].expand(-1, layout.slots, -1)

    def mask(self, F: torch.Tensor) -> torch.Tensor:
        return F * self._mask

    def gram(self, F: torch.Tensor) -> torch.Tensor:
        # sum over cells of outer products of each cell's edge column
        Fs = (F * self._mask).sum(-1)  # [B, K, E]
        B = Fs.shape[0]
        outer = Fs[:, :, :, None] * Fs[:, :, None, :]  # [B, K, E, E]
        m = self.num_edges
        flat = (self._ri * m + self._rj).reshape(-1)
        H = Fs.new_zeros(B, m * m)
        H.index_add_(1, flat, outer.reshape(B, -1))
        return H.reshape(B, m, m)

    def left_mul(self, H: torch.Tensor, F: torch.Tensor) -> torch.Tensor:
        """``(H F)`` read at the support of each cell; exact when ``F`` is supported there."""
        if H.dim() == 2:
            return self.mask(H[:, self.rows, None] * F)
        Hs = H[:, self._ri, self._rj]  # [B, K, E, E]
        return self.mask(torch.einsum("bkae,bkef->bkaf", Hs, F * self._mask))

    def theta(self, F: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
        per_slot = torch.einsum("bkaf,kfd->bkad", F * self._mask, W)  # [B, K, E, d]
        B, _, _, d = per_slot.shape
        out = per_slot.new_zeros(B, self.num_edges, d)
        out.index_add_(1, self.rows.reshape(-1), per_slot.reshape(B, -1, d))
        return out

    def to_dense(self, F: torch.Tensor) -> torch.Tensor:
        return self.layout.to_dense(F)


def make_backend(layout: CellIndex, node_mask=None, compact: bool = True):
    return (CompactIncidence if compact else DenseIncidence)(layout, node_mask)
