import numpy as np
import pytest
import torch

from ccsd.complex import ComplexTensor, DimConstraints
from ccsd.nn.models import ScoreModelSpec, build
from ccsd.pipeline import EmpiricalNodeDist, GenerationSetup, impute, impute_states, sample
from ccsd.sde import RankState, SamplerConfig, SdeSpec, perturbation_kernel, prior_std
from conftest import random_complex

D = torch.float64
C = DimConstraints(3, 3)
N_MAX = 8
SETUP = GenerationSetup(n_max=N_MAX, f0=3, f1=1, f2=1, constraints=C, support_rule="path")
SPECS = [SdeSpec("VP", 0.1, 1.0), SdeSpec("VP", 0.1, 1.0), SdeSpec("VP", 0.1, 1.0)]
CFG = SamplerConfig(predictor="euler_maruyama", corrector="langevin", snr=0.05, scale_coeff=0.7,
                    num_steps=30, seed=3)


@pytest.fixture(scope="module")
def models():
    common = dict(n=N_MAX, f0=3, constraints=C, hidden=8, heads=2, c_hid=2, c_final=2, num_layers=2, depth=2)
    return [build(ScoreModelSpec(w, **common)) for w in ("score_x", "score_a_cc", "score_f")]


def test_node_distribution():
    dist = EmpiricalNodeDist({12: 3, 15: 1, 19: 4})
    assert abs(float(dist.probs.sum()) - 1) < 1e-12
    g = torch.Generator()
    g.manual_seed(0)
    draws = dist.sample(500, g)
    assert set(draws) <= {12, 15, 19} and dist.max_n == 19
    with pytest.raises(ValueError):
        EmpiricalNodeDist({})
    with pytest.raises(ValueError):
        EmpiricalNodeDist({0: 2})


def test_samples_are_valid_and_inside_support(models):
    dist = EmpiricalNodeDist({5: 1, 6: 1, 7: 2})
    out = sample(models, SPECS, CFG, dist, 6, SETUP)
    assert len(out) == 6
    for ct in out:
        assert 5 <= ct.n <= 7
        assert ct.violations("path") == []
        assert torch.equal(ct.A, ct.A.transpose(0, 1))
        assert torch.all(ct.X.sum(1) == 1)  # one-hot node features


def test_sampling_is_deterministic(models):
    dist = EmpiricalNodeDist({5: 1, 6: 1})
    a = sample(models, SPECS, CFG, dist, 3, SETUP)
    b = sample(models, SPECS, CFG, dist, 3, SETUP)
    for x, y in zip(a, b):
        assert torch.equal(x.X, y.X) and torch.equal(x.A, y.A) and torch.equal(x.Fc, y.Fc)


def test_too_many_nodes_rejected(models):
    with pytest.raises(ValueError):
        sample(models, SPECS, CFG, EmpiricalNodeDist({9: 1}), 1, SETUP)


def observed_complex(rng, n=6):
    ct = random_complex(rng, n, C, f0=3, cell_prob=0.0)
    X = torch.nn.functional.one_hot(torch.tensor(rng.integers(0, 3, n)), 3).to(D)
    A = (ct.A != 0).to(D)
    return ComplexTensor.from_cells(X, A, [], C)


def test_impute_all_known_returns_observation(models, rng):
    obs = observed_complex(rng)
    known = [torch.ones_like(obs.X, dtype=torch.bool), torch.ones_like(obs.A, dtype=torch.bool),
             torch.ones_like(obs.Fc, dtype=torch.bool)]
    out = impute(models, SPECS, CFG, SETUP, obs, known)
    assert torch.equal(out.X, obs.X) and torch.equal(out.A, obs.A) and torch.equal(out.Fc, obs.Fc)


def test_impute_nothing_known_equals_sampling(models, rng):
    obs = observed_complex(rng)
    known = [torch.zeros_like(obs.X, dtype=torch.bool), torch.zeros_like(obs.A, dtype=torch.bool),
             torch.zeros_like(obs.Fc, dtype=torch.bool)]
    out = impute(models, SPECS, CFG, SETUP, obs, known)
    ref = sample(models, SPECS, CFG, EmpiricalNodeDist({obs.n: 1}), 1, SETUP, sizes=[obs.n])[0]
    assert torch.equal(out.X, ref.X) and torch.equal(out.A, ref.A) and torch.equal(out.Fc, ref.Fc)


def test_impute_rejects_bad_mask(models, rng):
    obs = observed_complex(rng)
    with pytest.raises(ValueError):
        impute(models, SPECS, CFG, SETUP, obs, [torch.ones(2, 2, dtype=torch.bool)] * 3)


@pytest.mark.parametrize("spec", [SdeSpec("VP", 0.1, 20.0), SdeSpec("VE", sigma_min=0.01, sigma_max=50.0),
                                  SdeSpec("subVP", 0.1, 20.0)], ids=["VP", "VE", "subVP"])
def test_imputation_matches_gaussian_conditional(spec):
    mu = torch.tensor([1.0, 2.0], dtype=D)
    cov = torch.tensor([[1.0, 0.8], [0.8, 1.0]], dtype=D)

    def score(states, t):
        k = perturbation_kernel(spec, t[0])
        cov_t = k.mean_coeff ** 2 * cov + k.std ** 2 * torch.eye(2, dtype=D)
        return -(states[0] - k.mean_coeff * mu) @ torch.linalg.inv(cov_t)

    trials = 500
    y = torch.tensor([[2.0, 0.0]], dtype=D).expand(trials, 2)
    known = torch.tensor([[1.0, 0.0]], dtype=D).expand(trials, 2)
    g = torch.Generator()
    g.manual_seed(1)
    prior = prior_std(spec) * torch.randn(trials, 2, generator=g, dtype=D)
    cfg = SamplerConfig(predictor="reverse_diffusion", corrector="langevin", snr=0.16, num_steps=1000, seed=0)
    (out,) = impute_states([RankState(spec, score)], [y], [known], [prior], cfg)
    assert torch.all(out[:, 0] == 2.0)
    conditional_mean = 2.0 + 0.8 * (2.0 - 1.0)
    assert abs(out[:, 1].mean().item() / conditional_mean - 1) < 0.05
