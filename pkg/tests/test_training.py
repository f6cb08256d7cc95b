import dataclasses
import math

import pytest
import torch
from torch import nn

from ccsd.complex import DimConstraints
from ccsd.config import build_experiment, load_config
from ccsd.data import build_dataset, split_dataset
from ccsd.nn.models import ScoreModelSpec, build
from ccsd.sde import SdeSpec, perturbation_kernel
from ccsd.training import (NonFiniteLossError, TrainConfig, adam_step, collate, dsm_losses, ema_update,
                           make_optimizer, perturb_batch, train)
from conftest import random_complex

D = torch.float64
SPECS = [SdeSpec("VP", 0.1, 1.0), SdeSpec("VP", 0.1, 1.0), SdeSpec("VP", 0.1, 1.0)]


def small_batch(rng, count=4, n_max=7):
    c = DimConstraints(3, 3)
    cs = [random_complex(rng, int(rng.integers(4, n_max + 1)), c, f0=2, cell_prob=0.2, binary_cells=True)
          for _ in range(count)]
    return collate(cs, n_max)


class Oracle(nn.Module):
    """Returns a fixed tensor (the true noise or zeros) regardless of input."""

    def __init__(self, value):
        super().__init__()
        self.value = value
        self.w = nn.Parameter(torch.zeros(1, dtype=D))

    def forward(self, X, A, F, node_mask=None, backend=None):
        return self.value + 0 * self.w


def gen(seed=0):
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def noises_for(batch, seed):
    return perturb_batch(batch, SPECS, gen(seed)).noises


def test_perfect_and_zero_models(rng):
    batch = small_batch(rng)
    noises = noises_for(batch, 1)
    perfect = [Oracle(z) for z in noises]
    assert all(l.item() == 0.0 for l in dsm_losses(perfect, batch, SPECS, gen(1)))
    big = small_batch(rng, count=64)
    zero = [Oracle(torch.zeros_like(z)) for z in noises_for(big, 1)]
    # mean of squared standard normals over unmasked entries
    losses = dsm_losses(zero, big, SPECS, gen(1))
    for l in losses:
        assert 0.85 < l.item() < 1.15


def test_gamma_penalty(rng):
    batch = small_batch(rng)
    noises = noises_for(batch, 2)
    perfect = [Oracle(z) for z in noises]
    pb = perturb_batch(batch, SPECS, gen(2))
    losses = dsm_losses(perfect, batch, SPECS, gen(2), gamma=(0.5, 0.5, 0.5))
    for l, z, m, s in zip(losses, noises, pb.masks, pb.stds):
        dims = tuple(range(1, z.dim()))
        expected = 0.5 * (((z / s) ** 2 * m).sum(dims) / m.sum(dims)).mean()
        assert torch.allclose(l, expected)
    models = [build(ScoreModelSpec(w, n=7, f0=2, constraints=DimConstraints(3, 3), hidden=8, heads=2,
                                   num_layers=2, depth=2)) for w in ("score_x", "score_a_cc", "score_f")]
    plain = dsm_losses(models, batch, SPECS, gen(3))
    pen = dsm_losses(models, batch, SPECS, gen(3), gamma=(0.1, 0.1, 0.1))
    assert all(p > q for p, q in zip(pen, plain))


def test_lambda_weighting_normalises_target_energy(tgen):
    # E |score_target|^2 = d / std^2 for the Gaussian kernel
    d = 200
    for t in (0.2, 0.7):
        std = float(perturbation_kernel(SPECS[0], t).std)
        z = torch.randn(5000, d, generator=tgen, dtype=D)
        energy = ((z / std) ** 2).sum(1).mean().item()
        assert abs(energy / (d / std ** 2) - 1) < 0.02


def test_joint_perturbation_uses_one_time(rng):
    batch = small_batch(rng)
    pb = perturb_batch(batch, [SdeSpec("VP", 0.1, 1.0), SdeSpec("VE", sigma_min=0.2, sigma_max=1.0),
                               SdeSpec("subVP", 0.1, 1.0)], gen(4))
    ve = perturbation_kernel(SdeSpec("VE", sigma_min=0.2, sigma_max=1.0), pb.t).std
    assert torch.allclose(pb.stds[1].flatten(), ve)
    assert torch.allclose(pb.stds[0].flatten(), perturbation_kernel(SdeSpec("VP", 0.1, 1.0), pb.t).std)
    A = pb.states[1]
    assert torch.equal(A, A.transpose(1, 2))


def test_padded_entries_do_not_change_loss(rng):
    batch = small_batch(rng)
    models = [build(ScoreModelSpec(w, n=7, f0=2, constraints=DimConstraints(3, 3), hidden=8, heads=2,
                                   num_layers=2, depth=2)) for w in ("score_x", "score_a_cc", "score_f")]
    base = dsm_losses(models, batch, SPECS, gen(5))
    pb = perturb_batch(batch, SPECS, gen(5))
    junk = dataclasses.replace(batch)
    junk.X = batch.X + 7.0 * (1 - pb.masks[0])
    junk.A = batch.A + 3.0 * (1 - pb.masks[1])
    junk.Fc = batch.Fc + 5.0 * (1 - pb.masks[2])
    other = dsm_losses(models, junk, SPECS, gen(5))
    for a, b in zip(base, other):
        assert torch.allclose(a, b, atol=1e-12)


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        collate([])


def test_adam_first_step_and_zero_gradient():
    lin = nn.Linear(3, 1).double()
    cfg = TrainConfig(lr=0.01, weight_decay=0.0)
    opt = make_optimizer(lin, cfg)
    before = [p.detach().clone() for p in lin.parameters()]
    adam_step(lin, opt, (lin.weight * 0).sum() + (lin.bias * 0).sum(), grad_clip=None)
    assert all(torch.equal(a, p) for a, p in zip(before, lin.parameters()))
    opt = make_optimizer(lin, cfg)
    before = lin.weight.detach().clone()
    g = torch.tensor([[0.3, -2.0, 5.0]], dtype=D)
    adam_step(lin, opt, (lin.weight * g).sum(), grad_clip=None)
    # bias-corrected first step: -lr * g / (|g| + eps)
    expected = before - 0.01 * g / (g.abs() + 1e-8)
    assert torch.allclose(lin.weight, expected, atol=1e-12)


def test_ema_update():
    a, b = nn.Linear(2, 2).double(), nn.Linear(2, 2).double()
    b.load_state_dict(a.state_dict())
    ema_update(a, b, 0.999)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    with torch.no_grad():
        for p in b.parameters():
            p.fill_(1.0)
    err0 = max((p - 1).abs().max().item() for p in a.parameters())
    for _ in range(10):
        ema_update(a, b, 0.9)
    err = max((p - 1).abs().max().item() for p in a.parameters())
    assert math.isclose(err, err0 * 0.9 ** 10, rel_tol=1e-9)
    with pytest.raises(ValueError):
        ema_update(a, b, 1.0)


def test_nan_loss_aborts(rng):
    c = DimConstraints(3, 3)
    cs = [random_complex(rng, 5, c, f0=2) for _ in range(4)]
    specs = [ScoreModelSpec(w, n=5, f0=2, constraints=c, hidden=4, heads=2, num_layers=2, depth=1)
             for w in ("score_x", "score_a_cc", "score_f")]
    bad = [dataclasses.replace(cs[0], X=cs[0].X * float("nan"))] + cs[1:]
    with pytest.raises(NonFiniteLossError, match="epoch 0"):
        train(specs, bad, [], SPECS, TrainConfig(epochs=1, batch_size=4))


def mini_setup(count=20):
    exp = build_experiment(load_config("community_small_smoke"), 0)
    cs = build_dataset(dataclasses.replace(exp.dataset, count=count))
    tr, te = split_dataset(cs, 0.2, 0)
    models = [m.replace(hidden=8, c_hid=2, c_final=2, num_layers=2) if m.which != "score_f" else m
              for m in exp.models]
    return exp, tr, te, models


def test_toy_run_losses_halve(tmp_path):
    exp, tr, te, models = mini_setup()
    cfg = dataclasses.replace(exp.train, batch_size=16, epochs=1000, max_steps=200, lr=5e-3, eval_interval=100)
    res = train(models, tr, te, exp.sdes, cfg, tmp_path)
    rows = [r for r in res.curve if r["split"] == "train"]
    assert len(rows) == 200
    for key in ("loss_x", "loss_a", "loss_f"):
        first = sum(r[key] for r in rows[:10]) / 10
        last = sum(r[key] for r in rows[-10:]) / 10
        assert last <= 0.5 * first, (key, first, last)
    assert {"losses.csv", "best.ckpt", "final.ckpt"} <= {p.name for p in tmp_path.iterdir()}


def test_training_is_deterministic(tmp_path):
    exp, tr, te, models = mini_setup(10)
    cfg = dataclasses.replace(exp.train, batch_size=4, epochs=3, eval_interval=1)
    train(models, tr, te, exp.sdes, cfg, tmp_path / "a")
    train(models, tr, te, exp.sdes, cfg, tmp_path / "b")
    for name in ("losses.csv", "final.ckpt", "best.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
