"""Forward SDEs, their Gaussian transition kernels, and reverse-time solvers.

Each rank of a complex (``X``, ``A``, ``F``) diffuses under its own SDE. The
reverse system is integrated jointly: at every step all partial scores are
evaluated on the same state before any tensor moves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import torch

logger = logging.getLogger(__name__)

KINDS = ("VP", "VE", "subVP")
PREDICTORS = ("euler_maruyama", "reverse_diffusion", "ode_flow")
CORRECTORS = ("none", "langevin")


@dataclass(frozen=True)
class SdeSpec:
    kind: str = "VP"
    beta_min: float = 0.1
    beta_max: float = 1.0
    sigma_min: float = 0.2
    sigma_max: float = 1.0
    T: float = 1.0
    num_steps: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown SDE kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "VE":
            if not 0 < self.sigma_min < self.sigma_max:
                raise ValueError("VE needs 0 < sigma_min < sigma_max")
        elif not 0 < self.beta_min < self.beta_max:
            raise ValueError(f"{self.kind} needs 0 < beta_min < beta_max")
        if self.num_steps < 1 or self.T <= 0:
            raise ValueError("num_steps >= 1 and T > 0 required")

    @classmethod
    def from_config(cls, cfg: Mapping) -> "SdeSpec":
        """VE reads its sigma range from ``beta_min``/``beta_max`` unless sigma keys are given."""
        kind = cfg.get("kind", "VP")
        kw = dict(kind=kind, num_steps=int(cfg.get("num_steps", 1000)), T=float(cfg.get("T", 1.0)))
        if kind == "VE":
            kw["sigma_min"] = float(cfg.get("sigma_min", cfg.get("beta_min", 0.2)))
            kw["sigma_max"] = float(cfg.get("sigma_max", cfg.get("beta_max", 1.0)))
        else:
            kw["beta_min"] = float(cfg.get("beta_min", 0.1))
            kw["beta_max"] = float(cfg.get("beta_max", 1.0))
        return cls(**kw)

    @property
    def eps(self) -> float:
        """Lower integration cutoff."""
        return 1e-5 if self.kind == "VE" else 1e-3

    # -- schedules -------------------------------------------------------
    def beta(self, t):
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integrated_beta(self, t):
        return self.beta_min * t + 0.5 * t ** 2 * (self.beta_max - self.beta_min)

    def sigma(self, t):
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t


@dataclass(frozen=True)
class TransitionKernel:
    mean_coeff: torch.Tensor
    std: torch.Tensor


def _as_time(t, like: torch.Tensor | None = None) -> torch.Tensor:
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(t, dtype=dtype)


def _bcast(v: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Broadcast a per-batch (or scalar) coefficient over the trailing dims of ``x``."""
    if v.dim() == 0:
        return v
    return v.reshape(v.shape + (1,) * (x.dim() - v.dim()))


def diffusion_coeff(spec: SdeSpec, t) -> torch.Tensor:
    t = _as_time(t)
    if spec.kind == "VP":
        return torch.sqrt(spec.beta(t))
    if spec.kind == "VE":
        return spec.sigma(t) * math.sqrt(2 * math.log(spec.sigma_max / spec.sigma_min))
    return torch.sqrt(spec.beta(t) * (1 - torch.exp(-2 * spec.integrated_beta(t))))


def drift_diffusion(spec: SdeSpec, x: torch.Tensor, t) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(f_t(x), g_t)`` for the forward SDE."""
    t = _as_time(t, x)
    g = diffusion_coeff(spec, t).to(x.dtype)
    if spec.kind == "VE":
        return torch.zeros_like(x), g
    return -0.5 * _bcast(spec.beta(t), x) * x, g


def perturbation_kernel(spec: SdeSpec, t) -> TransitionKernel:
    t = _as_time(t)
    if torch.any(t < 0) or torch.any(t > spec.T + 1e-12):
        raise ValueError(f"t must lie in [0, {spec.T}]")
    if spec.kind == "VE":
        return TransitionKernel(torch.ones_like(t), spec.sigma(t))
    ib = spec.integrated_beta(t)
    mean = torch.exp(-0.5 * ib)
    if spec.kind == "VP":
        std = torch.sqrt(1 - torch.exp(-ib))
    else:
        std = 1 - torch.exp(-ib)
    return TransitionKernel(mean, std)


def prior_std(spec: SdeSpec) -> float:
    return spec.sigma_max if spec.kind == "VE" else 1.0


def symmetric_noise(shape, generator: torch.Generator | None = None, dtype=torch.float64,
                    channel_last: bool = False) -> torch.Tensor:
    """Standard normal noise on the upper triangle of the last two axes, mirrored, zero diagonal.

    With ``channel_last`` the node axes are the two before the last (``[B, n, n, f]``).
    """
    if channel_last:
        shape = tuple(shape)
        z = symmetric_noise(shape[:-3] + (shape[-1],) + shape[-3:-1], generator, dtype)
        return z.movedim(-3, -1)
    z = torch.randn(shape, generator=generator, dtype=dtype)
    z = torch.triu(z, diagonal=1)
    return z + z.transpose(-1, -2)


def perturb(x0: torch.Tensor, spec: SdeSpec, t, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Sample ``x_t | x_0`` with the given noise and return the conditional score target."""
    kernel = perturbation_kernel(spec, _as_time(t, x0))
    std = _bcast(kernel.std.to(x0.dtype), x0)
    if torch.any(std == 0):
        raise ValueError("score target undefined where std(t) = 0")
    xt = _bcast(kernel.mean_coeff.to(x0.dtype), x0) * x0 + std * noise
    return xt, -noise / std


# ---------------------------------------------------------------------------
# discretizations
# ---------------------------------------------------------------------------

def _discretize(spec: SdeSpec, x: torch.Tensor, t: torch.Tensor):
    """Ancestral forward step ``x_{i+1} = x_i + f_i + G_i z`` on the spec's own grid."""
    N = spec.num_steps
    idx = torch.clamp((t * (N - 1) / spec.T).round().long(), 0, N - 1)
    if spec.kind == "VP":
        betas = torch.linspace(spec.beta_min / N, spec.beta_max / N, N, dtype=x.dtype)
        beta = betas[idx]
        f = (torch.sqrt(1 - _bcast(beta, x)) - 1) * x
        return f, torch.sqrt(beta)
    if spec.kind == "VE":
        sigmas = torch.exp(torch.linspace(math.log(spec.sigma_min), math.log(spec.sigma_max), N,
                                          dtype=x.dtype))
        sig = sigmas[idx]
        prev = torch.where(idx == 0, torch.zeros_like(sig), sigmas[(idx - 1).clamp(min=0)])
        return torch.zeros_like(x), torch.sqrt(sig ** 2 - prev ** 2)
    dt = spec.T / N
    f, g = drift_diffusion(spec, x, t)
    return f * dt, g * math.sqrt(dt)


def _noise_like(x: torch.Tensor, generator, symmetric: bool) -> torch.Tensor:
    if symmetric:
        return symmetric_noise(x.shape, generator, x.dtype, channel_last=True)
    return torch.randn(x.shape, generator=generator, dtype=x.dtype)


def predictor_step(x: torch.Tensor, t, dt: float, score: torch.Tensor, spec: SdeSpec,
                   kind: str = "euler_maruyama", generator: torch.Generator | None = None,
                   symmetric: bool = False, mask: torch.Tensor | None = None
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    """One reverse-time step; returns ``(x_next, x_mean)``.

    ``symmetric`` draws noise mirrored over the node axes of a channel-last
    adjacency ``[B, n, n, f]``; ``mask`` multiplies the noise.
    """
    if score.shape != x.shape:
        raise ValueError(f"score shape {tuple(score.shape)} != state shape {tuple(x.shape)}")
    if dt >= 0:
        raise ValueError("reverse steps need dt < 0")
    t = _as_time(t, x)
    if kind == "ode_flow":
        f, g = drift_diffusion(spec, x, t)
        g2 = _bcast(g, x) ** 2
        x_new = x + (f - 0.5 * g2 * score) * dt
        return x_new, x_new
    if kind == "euler_maruyama":
        f, g = drift_diffusion(spec, x, t)
        g = _bcast(g, x)
        mean = x + (f - g ** 2 * score) * dt
        z = _noise_like(x, generator, symmetric)
        if mask is not None:
            z = z * mask
        return mean + g * math.sqrt(-dt) * z, mean
    if kind == "reverse_diffusion":
        f, G = _discretize(spec, x, t)
        G = _bcast(G, x)
        mean = x - (f - G ** 2 * score)
        z = _noise_like(x, generator, symmetric)
        if mask is not None:
            z = z * mask
        return mean + G * z, mean
    raise ValueError(f"unknown predictor {kind!r}; expected one of {PREDICTORS}")


@dataclass(frozen=True)
class SamplerConfig:
    predictor: str = "euler_maruyama"
    corrector: str = "none"
    snr: float = 0.1
    scale_coeff: float = 1.0
    num_steps: int = 1000
    eps_final: float | None = None  # None: take the tightest per-SDE cutoff
    seed: int = 0

    def __post_init__(self):
        if self.predictor not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.corrector not in CORRECTORS:
            raise ValueError(f"unknown corrector {self.corrector!r}")
        if self.corrector == "langevin" and self.snr <= 0:
            raise ValueError("langevin corrector needs snr > 0")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")

    @classmethod
    def from_config(cls, cfg: Mapping) -> "SamplerConfig":
        # "S4" is run as reverse diffusion + Langevin at equal step count
        predictor = cfg.get("predictor", "euler_maruyama")
        corrector = cfg.get("corrector", "none")
        if predictor.lower() == "s4":
            predictor, corrector = "reverse_diffusion", "langevin"
        eps = cfg.get("eps_final")
        return cls(predictor=predictor, corrector=corrector, snr=float(cfg.get("snr", 0.1)),
                   scale_coeff=float(cfg.get("scale_coeff", 1.0)),
                   num_steps=int(cfg.get("num_steps", 1000)),
                   eps_final=None if eps is None else float(eps), seed=int(cfg.get("seed", 0)))


def langevin_correct(x: torch.Tensor, t, score: torch.Tensor, cfg: SamplerConfig,
                     generator: torch.Generator | None = None, symmetric: bool = False,
                     mask: torch.Tensor | None = None, noise: torch.Tensor | None = None
                     ) -> tuple[torch.Tensor, torch.Tensor]:
    """One Langevin correction with step ``2 (snr |z| / |score|)^2`` (global norms)."""
    z = noise if noise is not None else _noise_like(x, generator, symmetric)
    if mask is not None:
        z = z * mask
    score_norm = torch.linalg.vector_norm(score)
    if score_norm == 0:
        logger.warning("zero score at t=%s; Langevin step skipped", float(torch.as_tensor(t).flatten()[0]))
        return x, x
    alpha = 2 * (cfg.snr * torch.linalg.vector_norm(z) / score_norm) ** 2
    mean = x + alpha * score
    return mean + cfg.scale_coeff * torch.sqrt(2 * alpha) * z, mean


# ---------------------------------------------------------------------------
# joint reverse solver
# ---------------------------------------------------------------------------

ScoreFn = Callable[[Sequence[torch.Tensor], torch.Tensor], torch.Tensor]


@dataclass
class RankState:
    """Per-rank bookkeeping for :func:`solve_reverse`."""

    spec: SdeSpec
    score_fn: ScoreFn
    mask: torch.Tensor | None = None
    symmetric: bool = False


def time_grid(specs: Sequence[SdeSpec], cfg: SamplerConfig) -> tuple[torch.Tensor, float]:
    T = specs[0].T
    eps = cfg.eps_final if cfg.eps_final is not None else min(s.eps for s in specs)
    times = torch.linspace(T, eps, cfg.num_steps, dtype=torch.float64)
    return times, -(T - eps) / cfg.num_steps


def rank_generators(seed: int, count: int) -> list[torch.Generator]:
    """Independent, order-free RNG streams (one per rank) derived from one seed."""
    gens = []
    for r in range(count):
        g = torch.Generator()
        g.manual_seed(seed * 1_000_003 + 7919 * (r + 1))
        gens.append(g)
    return gens


class NonFiniteStateError(RuntimeError):
    pass


def solve_reverse(ranks: Sequence[RankState], priors: Sequence[torch.Tensor], cfg: SamplerConfig,
                  generators: Sequence[torch.Generator] | None = None,
                  step_hook: Callable[[int, torch.Tensor, list[torch.Tensor]], list[torch.Tensor]] | None = None,
                  batch_size: int | None = None) -> list[torch.Tensor]:
    """Integrate the coupled reverse system from ``T`` to ``eps_final``.

    Every ``score_fn(states, t)`` receives the full joint state. ``step_hook``
    may overwrite states after each step (used by imputation); on the last
    step it receives the means. The returned tensors are the noise-free means
    of the final step.
    """
    if len(ranks) != len(priors):
        raise ValueError("one prior per rank required")
    gens = list(generators) if generators is not None else rank_generators(cfg.seed, len(ranks))
    specs = [r.spec for r in ranks]
    times, dt = time_grid(specs, cfg)
    states = [p if r.mask is None else p * r.mask for p, r in zip(priors, ranks)]
    means = states
    B = batch_size if batch_size is not None else priors[0].shape[0]

    def scores_at(xs, t_vec):
        return [r.score_fn(xs, t_vec) for r in ranks]

    def masked(v, r):
        return v if r.mask is None else v * r.mask

    for i, t in enumerate(times):
        t_vec = torch.full((B,), float(t), dtype=torch.float64)
        if cfg.corrector == "langevin":
            scores = scores_at(states, t_vec)
            new = []
            for x, s, r, g in zip(states, scores, ranks, gens):
                xn, _ = langevin_correct(x, t_vec, s, cfg, g, r.symmetric, r.mask)
                new.append(masked(xn, r))
            states = new
        scores = scores_at(states, t_vec)
        new, means = [], []
        for x, s, r, g in zip(states, scores, ranks, gens):
            xn, mean = predictor_step(x, t_vec, dt, s, r.spec, cfg.predictor, g, r.symmetric, r.mask)
            new.append(masked(xn, r))
            means.append(masked(mean, r))
        states = new
        if step_hook is not None:
            if i == len(times) - 1:
                means = step_hook(i, t_vec, means)
            else:
                states = step_hook(i, t_vec, states)
        for r_idx, x in enumerate(states):
            if not torch.isfinite(x).all():
                raise NonFiniteStateError(f"non-finite values in rank {r_idx} state at step {i} (t={float(t):.5f})")
    return means
