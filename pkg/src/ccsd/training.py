"""Denoising score matching for the node, edge and rank-2 score networks."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import torch
from torch import nn

from .complex import DTYPE, ComplexTensor, DimConstraints, cell_layout
from .nn.models import ScoreModelSpec, build
from .nn.ops import make_backend
from .sde import SdeSpec, perturbation_kernel, symmetric_noise

logger = logging.getLogger(__name__)

RANKS = ("x", "a", "f")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 5000
    max_steps: int | None = None   # stop after this many optimizer steps
    ema_decay: float | None = None
    lambda_rule: str = "sigma_sq"
    gamma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    grad_clip: float | None = 1.0
    seed: int = 0
    eval_interval: int = 100
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.ema_decay is not None and not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")
        if any(g < 0 for g in self.gamma):
            raise ValueError("penalty weights must be >= 0")
        if self.lambda_rule != "sigma_sq":
            raise ValueError(f"unsupported lambda rule {self.lambda_rule!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_interval < 1:
            raise ValueError("batch_size, epochs and eval_interval must be >= 1")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class ComplexBatch:
    X: torch.Tensor          # [B, n, f0]
    A: torch.Tensor          # [B, n, n, f1]
    Fc: torch.Tensor         # [B, K, E, f2]
    node_mask: torch.Tensor  # [B, n] float
    constraints: DimConstraints

    def __len__(self):
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def index(self, idx) -> "ComplexBatch":
        return ComplexBatch(self.X[idx], self.A[idx], self.Fc[idx], self.node_mask[idx], self.constraints)


def pad_complex(ct: ComplexTensor, n_max: int) -> ComplexTensor:
    """Embed ``ct`` into ``n_max`` nodes; the extra nodes are masked out."""
    n = ct.n
    if n > n_max:
        raise ValueError(f"complex has {n} nodes, more than the padded size {n_max}")
    X = torch.zeros(n_max, ct.f0, dtype=DTYPE)
    X[:n] = ct.X
    A = torch.zeros(n_max, n_max, ct.f1, dtype=DTYPE)
    A[:n, :n] = ct.A
    padded = ComplexTensor.from_cells(X, A, dict(ct.cells()), ct.constraints, f2=ct.f2)
    mask = torch.zeros(n_max, dtype=torch.bool)
    mask[:n] = ct.node_mask.bool()
    return ComplexTensor(padded.X, padded.A, padded.Fc, ct.constraints, mask)


def collate(complexes: Sequence[ComplexTensor], n_max: int | None = None) -> ComplexBatch:
    if not complexes:
        raise ValueError("empty batch")
    n_max = n_max or max(ct.n for ct in complexes)
    padded = [pad_complex(ct, n_max) for ct in complexes]
    return ComplexBatch(torch.stack([p.X for p in padded]), torch.stack([p.A for p in padded]),
                        torch.stack([p.Fc for p in padded]),
                        torch.stack([p.node_mask for p in padded]).to(DTYPE), complexes[0].constraints)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def pair_mask(node_mask: torch.Tensor) -> torch.Tensor:
    n = node_mask.shape[-1]
    return node_mask[:, :, None] * node_mask[:, None, :] * (1 - torch.eye(n, dtype=node_mask.dtype))


@dataclass
class PerturbedBatch:
    t: torch.Tensor
    states: list[torch.Tensor]
    noises: list[torch.Tensor]
    masks: list[torch.Tensor]
    stds: list[torch.Tensor]
    backend: object


def perturb_batch(batch: ComplexBatch, specs: Sequence[SdeSpec], gen: torch.Generator,
                  t: torch.Tensor | None = None) -> PerturbedBatch:
    """Noise X, A and F at one shared time per element."""
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    eps = min(s.eps for s in specs)
    T = specs[0].T
    if t is None:
        t = torch.rand(B, generator=gen, dtype=DTYPE) * (T - eps) + eps
    layout = cell_layout(batch.n, batch.constraints)
    backend = make_backend(layout, batch.node_mask, compact=True)
    masks = [batch.node_mask[:, :, None].expand_as(batch.X),
             pair_mask(batch.node_mask)[..., None].expand_as(batch.A),
             backend._mask.expand_as(batch.Fc)]
    noises = [torch.randn(batch.X.shape, generator=gen, dtype=DTYPE) * masks[0],
              symmetric_noise(batch.A.shape, gen, channel_last=True) * masks[1],
              torch.randn(batch.Fc.shape, generator=gen, dtype=DTYPE) * masks[2]]
    states, stds = [], []
    for x0, z, spec in zip((batch.X, batch.A, batch.Fc), noises, specs):
        k = perturbation_kernel(spec, t)
        shape = (B,) + (1,) * (x0.dim() - 1)
        std = k.std.reshape(shape)
        states.append(k.mean_coeff.reshape(shape) * x0 + std * z)
        stds.append(std)
    states = [s * m for s, m in zip(states, masks)]
    return PerturbedBatch(t, states, noises, masks, stds, backend)


def run_networks(models: Sequence[nn.Module], pb: PerturbedBatch, node_mask: torch.Tensor) -> list[torch.Tensor]:
    X, A, F = pb.states
    return [m(X, A, F, node_mask=node_mask, backend=pb.backend) for m in models]


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over unmasked entries per element, then over the batch."""
    dims = tuple(range(1, values.dim()))
    per = (values * mask).sum(dims) / mask.sum(dims).clamp(min=1)
    return per.mean()


def dsm_losses(models: Sequence[nn.Module], batch: ComplexBatch, specs: Sequence[SdeSpec],
               gen: torch.Generator, gamma: Sequence[float] = (0.0, 0.0, 0.0),
               t: torch.Tensor | None = None) -> list[torch.Tensor]:
    """Three sigma^2-weighted DSM losses.

    Networks output the noise estimate ``e``; the score is ``-e / std``, so
    ``std^2 |s - target|^2 = |e - noise|^2``.
    """
    pb = perturb_batch(batch, specs, gen, t)
    outs = run_networks(models, pb, batch.node_mask)
    losses = []
    for out, z, mask, std, g in zip(outs, pb.noises, pb.masks, pb.stds, gamma):
        loss = masked_mean((out - z) ** 2, mask)
        if g > 0:
            loss = loss + g * masked_mean((out / std) ** 2, mask)
        losses.append(loss)
    return losses


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                             betas=(0.9, 0.999), eps=1e-8)


def adam_step(model: nn.Module, opt: torch.optim.Optimizer, loss: torch.Tensor,
              grad_clip: float | None = None) -> None:
    opt.zero_grad()
    loss.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    opt.step()


@torch.no_grad()
def ema_update(shadow: nn.Module, model: nn.Module, decay: float) -> None:
    if not 0 < decay < 1:
        raise ValueError("decay must lie in (0, 1)")
    for s, p in zip(shadow.parameters(), model.parameters()):
        s.mul_(decay).add_(p, alpha=1 - decay)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainResult:
    models: list[nn.Module]
    ema: list[nn.Module] | None
    curve: list[dict]
    best_test: float
    steps: int


def model_state(models: Sequence[nn.Module]) -> dict[str, torch.Tensor]:
    out = {}
    for rank, m in zip(RANKS, models):
        for name, p in m.state_dict().items():
            out[f"{rank}.{name}"] = p
    return out


def load_model_state(models: Sequence[nn.Module], tensors: Mapping[str, torch.Tensor]) -> None:
    for rank, m in zip(RANKS, models):
        prefix = rank + "."
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        own = m.state_dict()
        if set(state) != set(own) or any(own[k].shape != state[k].shape for k in own):
            raise ValueError(f"checkpoint tensors do not fit the configured {rank} network")
        m.load_state_dict(state)


def train(model_specs: Sequence[ScoreModelSpec], train_set: Sequence[ComplexTensor],
          test_set: Sequence[ComplexTensor], sde_specs: Sequence[SdeSpec], cfg: TrainConfig,
          out_dir: str | Path | None = None, header: Mapping | None = None) -> TrainResult:
    """Optimise the three networks independently on jointly perturbed batches.

    Writes ``losses.csv`` and the ``best``/``final`` checkpoints when
    ``out_dir`` is given.
    """
    from .data import save_checkpoint  # local import keeps data free of torch.nn deps

    if not train_set:
        raise ValueError("training set is empty")
    torch.manual_seed(cfg.seed)
    n_max = model_specs[0].n
    data = collate(train_set, n_max)
    test = collate(test_set, n_max) if test_set else None
    models = [build(s) for s in model_specs]
    opts = [make_optimizer(m, cfg) for m in models]
    ema = [copy.deepcopy(m) for m in models] if cfg.ema_decay else None
    gen = torch.Generator()
    gen.manual_seed(cfg.seed)
    curve: list[dict] = []
    best, step = math.inf, 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    header = dict(header or {})

    def save(tag):
        if out is None:
            return
        tensors = model_state(ema if ema is not None else models)
        save_checkpoint(out / f"{tag}.ckpt", tensors, {**header, "step": step, "tag": tag})

    def test_losses():
        g = torch.Generator()
        g.manual_seed(cfg.seed + 1)
        net = ema if ema is not None else models
        with torch.no_grad():
            return [float(v) for v in dsm_losses(net, test, sde_specs, g, cfg.gamma)]

    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(data), generator=gen)
        sums = [0.0, 0.0, 0.0]
        batches = 0
        for start in range(0, len(data), cfg.batch_size):
            batch = data.index(perm[start:start + cfg.batch_size])
            losses = dsm_losses(models, batch, sde_specs, gen, cfg.gamma)
            for r, loss in enumerate(losses):
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(f"non-finite {RANKS[r]} loss at epoch {epoch}, step {step}")
            for m, opt, loss in zip(models, opts, losses):
                adam_step(m, opt, loss, cfg.grad_clip)
            if ema is not None:
                for s, m in zip(ema, models):
                    ema_update(s, m, cfg.ema_decay)
            sums = [a + b.item() for a, b in zip(sums, losses)]
            batches += 1
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        curve.append({"step": step, "loss_x": sums[0] / batches, "loss_a": sums[1] / batches,
                      "loss_f": sums[2] / batches, "split": "train"})
        done = cfg.max_steps is not None and step >= cfg.max_steps
        if test is not None and ((epoch + 1) % cfg.eval_interval == 0 or done or epoch == cfg.epochs - 1):
            tl = test_losses()
            curve.append({"step": step, "loss_x": tl[0], "loss_a": tl[1], "loss_f": tl[2], "split": "test"})
            if sum(tl) < best:
                best = sum(tl)
                save("best")
            logger.info("step %d  test losses x=%.4f a=%.4f f=%.4f", step, *tl)
        if done:
            break
    save("final")
    if out is not None:
        write_curve(out / "losses.csv", curve)
    return TrainResult(models, ema, curve, best, step)


def write_curve(path, curve: Sequence[Mapping]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "loss_x", "loss_a", "loss_f", "split"])
        w.writeheader()
        for row in curve:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
