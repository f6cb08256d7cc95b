"""Central finite-difference check of autograd gradients on sampled parameter entries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn


@dataclass
class GradcheckResult:
    checked: int
    max_rel_err: float
    worst: str
    passed: bool


def finite_difference_check(model: nn.Module, loss_fn: Callable[[], torch.Tensor], num_entries: int = 25,
                            h: float = 1e-5, tol: float = 1e-4, seed: int = 0,
                            floor: float = 1e-6) -> GradcheckResult:
    """Compare ``d loss / d theta`` from autograd against ``(L(theta+h) - L(theta-h)) / 2h``.

    Entries are drawn uniformly over all scalar parameters. The relative error
    uses ``max(|g_ad|, |g_fd|, floor)`` as the denominator, so entries whose
    gradient is numerically zero are compared absolutely.
    """
    params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
             for name, p in params}
    sizes = torch.tensor([p.numel() for _, p in params])
    total = int(sizes.sum())
    g = torch.Generator()
    g.manual_seed(seed)
    picks = torch.randperm(total, generator=g)[:num_entries]
    offsets = torch.cumsum(sizes, 0) - sizes
    worst, worst_name = 0.0, ""
    with torch.no_grad():
        for flat in picks.tolist():
            which = int(torch.searchsorted(offsets, torch.tensor(flat), right=True)) - 1
            name, p = params[which]
            idx = flat - int(offsets[which])
            view = p.view(-1)
            orig = view[idx].item()
            view[idx] = orig + h
            up = loss_fn().item()
            view[idx] = orig - h
            down = loss_fn().item()
            view[idx] = orig
            fd = (up - down) / (2 * h)
            ad = grads[name].view(-1)[idx].item()
            err = abs(fd - ad) / max(abs(fd), abs(ad), floor)
            if err > worst:
                worst, worst_name = err, f"{name}[{idx}]"
    return GradcheckResult(len(picks), worst, worst_name, worst <= tol)


def _small_inputs(seed: int, B: int = 2, n: int = 5, f0: int = 3):
    from ..complex import DimConstraints, cell_layout

    g = torch.Generator()
    g.manual_seed(seed)
    X = torch.randn(B, n, f0, generator=g, dtype=torch.float64)
    A = torch.randn(B, n, n, generator=g, dtype=torch.float64)
    A = torch.triu(A, 1)
    A = (A + A.transpose(1, 2))[..., None]
    constraints = DimConstraints(3, 4)
    layout = cell_layout(n, constraints)
    F = torch.randn(B, len(layout), layout.slots, 1, generator=g, dtype=torch.float64)
    F = F * layout.valid[None, :, :, None]
    node_mask = torch.ones(B, n, dtype=torch.float64)
    node_mask[1, -1] = 0
    return X, A, F, node_mask, constraints, layout, g


def layer_suite(seed: int = 0):
    """``(name, module, loss_fn)`` triples for every layer and score network on small random inputs."""
    from . import layers as L
    from .models import ScoreModelSpec, build
    from .ops import make_backend
    from ..complex import hodge_dual, higher_order_adjacency

    X, A, F, node_mask, constraints, layout, g = _small_inputs(seed)
    n, f0 = X.shape[1], X.shape[2]
    adj = A[..., 0].abs()
    backend = make_backend(layout, node_mask, compact=True)
    Hs = hodge_dual(higher_order_adjacency(A[..., 0], 2), check=False)
    K = len(layout)
    weights = torch.randn(64, generator=g, dtype=torch.float64)

    def proj(out):
        # fixed random projection so every output entry matters
        flat = out.reshape(-1)
        w = weights.repeat(flat.numel() // 64 + 1)[:flat.numel()]
        return (flat * w).sum() + 0.1 * (flat ** 2).sum()

    suite = []
    gcn = L.GCN(f0, 9, g)
    suite.append(("gcn", gcn, lambda: proj(gcn(X, adj))))
    gmh = L.GMH(f0, 8, 6, 2, g)
    suite.append(("gmh", gmh, lambda: proj(torch.cat([t.reshape(2, -1) for t in gmh(X, adj)], 1))))
    att = L.AttLayer(f0, 8, 2, 3, 2, 2, g)
    adjs = higher_order_adjacency(adj, 2)
    suite.append(("att_layer", att, lambda: proj(torch.cat([t.reshape(2, -1) for t in att(X, adjs, node_mask)], 1))))
    hcn = L.HCN(K, 1, 4, g)
    suite.append(("hcn", hcn, lambda: proj(hcn(Hs[:, 1], F, backend))))
    hccmh = L.HCCMH(K, 1, 4, 2, g)
    suite.append(("hccmh", hccmh, lambda: proj(hccmh(Hs[:, 0], F, backend)[1])))
    hatt = L.HodgeAttLayer(K, 1, 3, 2, 2, 4, 2, 2, 4, g)
    suite.append(("hodge_att_layer", hatt,
                  lambda: proj(torch.cat([t.reshape(2, -1) for t in hatt(Hs, F, backend)], 1))))
    hbase = L.HodgeBaselineLayer(1, 3, 2, 2, 2, 4, g)
    suite.append(("hodge_baseline_layer", hbase,
                  lambda: proj(torch.cat([t.reshape(2, -1) for t in hbase(Hs, F, backend)], 1))))
    common = dict(n=n, f0=f0, constraints=constraints, hidden=8, heads=2, c_init=2, c_hid=3, c_final=2,
                  num_layers=2, depth=2, hodge_layers=2, hodge_c_hid=2, hodge_c_final=2, hodge_attn_dim=4,
                  hodge_heads=2, hodge_hidden=3, hodge_mlp_layers=2, seed=seed)
    for which in ("score_x", "score_a_cc", "score_a_base_cc", "score_f"):
        model = build(ScoreModelSpec(which, **common))
        suite.append((which, model,
                      lambda m=model: proj(m(X, A, F, node_mask=node_mask, backend=backend))))
    return suite


def run_suite(seed: int = 0, num_entries: int = 25, h: float = 1e-5, tol: float = 1e-4):
    return [(name, finite_difference_check(module, fn, num_entries, h, tol, seed))
            for name, module, fn in layer_suite(seed)]
