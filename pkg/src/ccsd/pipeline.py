"""Generation and imputation with trained score networks."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
from torch import nn

from .complex import DTYPE, ComplexTensor, DimConstraints, cell_layout, quantize_adjacency, quantize_incidence_compact
from .nn.ops import make_backend
from .sde import (RankState, SamplerConfig, SdeSpec, perturbation_kernel, prior_std, rank_generators,
                  solve_reverse, symmetric_noise, time_grid)
from .training import pair_mask


class EmpiricalNodeDist:
    """Histogram of node counts observed in the training set."""

    def __init__(self, counts: dict[int, int]):
        if not counts or any(k < 1 for k in counts) or any(v < 0 for v in counts.values()):
            raise ValueError("node-count histogram needs positive sizes and nonnegative counts")
        total = sum(counts.values())
        if total == 0:
            raise ValueError("node-count histogram is empty")
        self.sizes = sorted(counts)
        self.probs = torch.tensor([counts[k] / total for k in self.sizes], dtype=DTYPE)

    @classmethod
    def from_complexes(cls, complexes: Sequence[ComplexTensor]) -> "EmpiricalNodeDist":
        return cls(dict(Counter(int(ct.node_mask.sum()) for ct in complexes)))

    @property
    def max_n(self) -> int:
        return self.sizes[-1]

    def sample(self, count: int, gen: torch.Generator) -> list[int]:
        idx = torch.multinomial(self.probs, count, replacement=True, generator=gen)
        return [self.sizes[i] for i in idx.tolist()]

    def to_dict(self) -> dict:
        return {str(k): float(p) for k, p in zip(self.sizes, self.probs.tolist())}


@dataclass(frozen=True)
class GenerationSetup:
    n_max: int
    f0: int
    f1: int
    f2: int
    constraints: DimConstraints
    support_rule: str = "path"
    adjacency_mode: str = "binary"
    x_mode: str = "onehot"
    threshold: float = 0.5


def node_masks(sizes: Sequence[int], n_max: int) -> torch.Tensor:
    mask = torch.zeros(len(sizes), n_max, dtype=DTYPE)
    for b, n in enumerate(sizes):
        if n > n_max:
            raise ValueError(f"node count {n} exceeds the model size {n_max}")
        mask[b, :n] = 1
    return mask


def rank_masks(setup: GenerationSetup, node_mask: torch.Tensor):
    layout = cell_layout(setup.n_max, setup.constraints)
    backend = make_backend(layout, node_mask, compact=True)
    B, n = node_mask.shape
    shapes = [(B, n, setup.f0), (B, n, n, setup.f1), (B, len(layout), layout.slots, setup.f2)]
    masks = [node_mask[:, :, None].expand(shapes[0]), pair_mask(node_mask)[..., None].expand(shapes[1]),
             backend._mask.expand(shapes[2])]
    return shapes, masks, backend


def score_callbacks(models: Sequence[nn.Module], specs: Sequence[SdeSpec], node_mask, backend
                    ) -> list[Callable]:
    """Score of rank ``r`` as ``-network_r(X, A, F) / std_r(t)``; all ranks read the same joint state."""
    def make(r):
        model, spec = models[r], specs[r]

        def fn(states, t):
            X, A, F = states
            with torch.no_grad():
                out = model(X, A, F, node_mask=node_mask, backend=backend)
            std = perturbation_kernel(spec, t).std.reshape((-1,) + (1,) * (out.dim() - 1))
            return -out / std
        return fn
    return [make(r) for r in range(3)]


def draw_priors(shapes, masks, specs: Sequence[SdeSpec], gens) -> list[torch.Tensor]:
    out = []
    for r, (shape, mask, spec, g) in enumerate(zip(shapes, masks, specs, gens)):
        if r == 1:
            z = symmetric_noise(shape, g, channel_last=True)
        else:
            z = torch.randn(shape, generator=g, dtype=DTYPE)
        out.append(prior_std(spec) * z * mask)
    return out


def quantize_states(states: Sequence[torch.Tensor], sizes: Sequence[int], setup: GenerationSetup,
                    node_mask: torch.Tensor) -> list[ComplexTensor]:
    X, A, Fc = states
    layout = cell_layout(setup.n_max, setup.constraints)
    out = []
    for b, n in enumerate(sizes):
        a = A[b]
        if setup.f1 == 1:
            aq = quantize_adjacency(a[..., 0], setup.adjacency_mode)[..., None]
        else:
            # one-hot edge types: an edge exists where the channel maximum clears 0.5
            sym = 0.5 * (a + a.transpose(0, 1))
            val, arg = sym.max(-1)
            aq = torch.nn.functional.one_hot(arg, setup.f1).to(DTYPE) * (val > 0.5)[..., None]
            aq = aq * (1 - torch.eye(setup.n_max, dtype=DTYPE))[..., None]
        aq = aq * pair_mask(node_mask[b:b + 1])[0][..., None]
        fq = quantize_incidence_compact(Fc[b], aq, layout, setup.threshold, setup.support_rule, node_mask[b])
        x = X[b]
        if setup.x_mode == "onehot":
            x = torch.nn.functional.one_hot(x.argmax(-1), setup.f0).to(DTYPE)
        x = x * node_mask[b][:, None]
        full = ComplexTensor(x, aq, fq, setup.constraints, node_mask[b].bool())
        out.append(trim(full, n))
    return out


def trim(ct: ComplexTensor, n: int) -> ComplexTensor:
    """Drop nodes ``n..`` (which must carry nothing) and re-index the cells."""
    return ComplexTensor.from_cells(ct.X[:n], ct.A[:n, :n], dict(ct.cells()), ct.constraints, f2=ct.f2)


def sample(models: Sequence[nn.Module], specs: Sequence[SdeSpec], cfg: SamplerConfig,
           node_dist: EmpiricalNodeDist, batch_size: int, setup: GenerationSetup,
           sizes: Sequence[int] | None = None) -> list[ComplexTensor]:
    """Generate ``batch_size`` quantized complexes; node counts come from ``node_dist`` unless given."""
    for m in models:
        m.eval()
    count_gen = torch.Generator()
    count_gen.manual_seed(cfg.seed)
    if sizes is None:
        sizes = node_dist.sample(batch_size, count_gen)
    node_mask = node_masks(sizes, setup.n_max)
    shapes, masks, backend = rank_masks(setup, node_mask)
    gens = rank_generators(cfg.seed, 3)
    priors = draw_priors(shapes, masks, specs, gens)
    fns = score_callbacks(models, specs, node_mask, backend)
    ranks = [RankState(specs[r], fns[r], masks[r], symmetric=(r == 1)) for r in range(3)]
    states = solve_reverse(ranks, priors, cfg, gens, batch_size=len(sizes))
    return quantize_states(states, sizes, setup, node_mask)


def impute_states(ranks: Sequence[RankState], observed: Sequence[torch.Tensor], known: Sequence[torch.Tensor],
                  priors: Sequence[torch.Tensor], cfg: SamplerConfig, gens=None) -> list[torch.Tensor]:
    """Reverse solve where known entries are resampled from the forward kernel of the observation.

    After each step at time ``t`` the known entries are replaced by
    ``mean(t') * y + std(t') * z`` with ``t' = t + dt``; the final state
    carries the observation itself on known entries.
    """
    for o, k, p in zip(observed, known, priors):
        if o.shape != k.shape or o.shape != p.shape:
            raise ValueError(f"known mask / observation shape mismatch: {tuple(k.shape)} vs {tuple(o.shape)}")
    gens = list(gens) if gens is not None else rank_generators(cfg.seed, len(ranks))
    hook_gens = rank_generators(cfg.seed + 7, len(ranks))
    times, dt = time_grid([r.spec for r in ranks], cfg)
    last = len(times) - 1
    known = [k.to(DTYPE) for k in known]

    def hook(i, t_vec, states):
        new = []
        for r, (x, y, k, rank, g) in enumerate(zip(states, observed, known, ranks, hook_gens)):
            if i == last:
                fill = y
            else:
                t_next = (t_vec + dt).clamp(min=0)
                kern = perturbation_kernel(rank.spec, t_next)
                shape = (-1,) + (1,) * (x.dim() - 1)
                z = (symmetric_noise(x.shape, g, channel_last=True) if rank.symmetric
                     else torch.randn(x.shape, generator=g, dtype=x.dtype))
                fill = kern.mean_coeff.reshape(shape) * y + kern.std.reshape(shape) * z
                if rank.mask is not None:
                    fill = fill * rank.mask
            new.append(k * fill + (1 - k) * x)
        return new

    return solve_reverse(ranks, priors, cfg, gens, step_hook=hook, batch_size=priors[0].shape[0])


def impute(models: Sequence[nn.Module], specs: Sequence[SdeSpec], cfg: SamplerConfig, setup: GenerationSetup,
           observed: ComplexTensor, known_mask: Sequence[torch.Tensor]) -> ComplexTensor:
    """Complete ``observed`` (at its own node count) given per-rank known masks.

    ``known_mask`` holds boolean tensors shaped like ``observed.X``,
    ``observed.A`` and ``observed.Fc``.
    """
    from .training import pad_complex

    n = observed.n
    for got, want, name in zip(known_mask, (observed.X, observed.A, observed.Fc), "XAF"):
        if tuple(got.shape) != tuple(want.shape):
            raise ValueError(f"known mask for {name} has shape {tuple(got.shape)}, expected {tuple(want.shape)}")
    for m in models:
        m.eval()
    padded = pad_complex(observed, setup.n_max)
    node_mask = padded.node_mask.to(DTYPE)[None]
    shapes, masks, backend = rank_masks(setup, node_mask)
    # lift the known masks to the padded layout
    kX = torch.zeros(shapes[0][1:], dtype=DTYPE)
    kX[:n] = known_mask[0].to(DTYPE)
    kA = torch.zeros(shapes[1][1:], dtype=DTYPE)
    kA[:n, :n] = known_mask[1].to(DTYPE)
    small = observed.layout
    big = padded.layout
    kF = torch.zeros(shapes[2][1:], dtype=DTYPE)
    for j, cell in enumerate(small.cells):
        kF[big.position[cell]] = known_mask[2][j].to(DTYPE)
    known = [kX[None] * masks[0], kA[None] * masks[1], kF[None] * masks[2]]
    obs = [padded.X[None], padded.A[None], padded.Fc[None]]
    gens = rank_generators(cfg.seed, 3)
    priors = draw_priors(shapes, masks, specs, gens)
    fns = score_callbacks(models, specs, node_mask, backend)
    ranks = [RankState(specs[r], fns[r], masks[r], symmetric=(r == 1)) for r in range(3)]
    states = impute_states(ranks, obs, known, priors, cfg, gens)
    out = quantize_states(states, [n], setup, node_mask)[0]
    # quantization may move known values; put the observation back on them
    X = torch.where(known_mask[0].bool(), observed.X, out.X)
    A = torch.where(known_mask[1].bool(), observed.A, out.A)
    Fc = torch.where(known_mask[2].bool(), observed.Fc, out.Fc)
    return ComplexTensor(X, A, Fc, observed.constraints)
