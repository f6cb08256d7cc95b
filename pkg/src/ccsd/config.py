"""Experiment configuration: TOML loading, validation and object construction."""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .complex import DimConstraints
from .data import DatasetSpec
from .lifting import LiftSpec
from .metrics import MetricConfig
from .nn.models import ScoreModelSpec
from .pipeline import GenerationSetup
from .sde import SamplerConfig, SdeSpec
from .training import TrainConfig

REQUIRED_KEYS = (
    "dataset.name", "dataset.max_nodes", "dataset.max_features", "dataset.lift", "dataset.d_min",
    "dataset.d_max",
    "model.a.which",
    *(f"sde.{r}.{k}" for r in "xaf" for k in ("kind", "beta_min", "beta_max", "num_steps")),
    "sampler.predictor", "sampler.corrector", "sampler.snr", "sampler.scale_coeff", "sampler.num_steps",
    "train.lr", "train.weight_decay", "train.batch_size", "train.epochs",
)

BUILTIN = ("community_small", "grid_small", "community_small_smoke")


class ConfigError(ValueError):
    pass


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("ccsd") / "configs" / f"{name}.toml"))


def load_config(path: str | Path) -> dict:
    """Read a TOML file; a bare built-in name (e.g. ``community_small``) is accepted too."""
    p = Path(path)
    if not p.exists() and str(path) in BUILTIN:
        p = builtin_path(str(path))
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def get(cfg: Mapping, dotted: str, default: Any = None) -> Any:
    node: Any = cfg
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return default
        node = node[part]
    return node


def missing_keys(cfg: Mapping, required=REQUIRED_KEYS) -> list[str]:
    sentinel = object()
    return [k for k in required if get(cfg, k, sentinel) is sentinel]


def check_required(cfg: Mapping, required=REQUIRED_KEYS) -> None:
    missing = missing_keys(cfg, required)
    if missing:
        raise ConfigError("missing config keys: " + ", ".join(missing))


def merged(base: Mapping, override: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = merged(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Experiment:
    raw: dict
    seed: int
    dataset: DatasetSpec
    constraints: DimConstraints
    models: tuple[ScoreModelSpec, ScoreModelSpec, ScoreModelSpec]
    sdes: tuple[SdeSpec, SdeSpec, SdeSpec]
    sampler: SamplerConfig
    train: TrainConfig
    metrics: MetricConfig
    setup: GenerationSetup
    num_samples: int


def build_experiment(cfg: Mapping, seed: int | None = None) -> Experiment:
    check_required(cfg)
    try:
        return _build(cfg, seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cfg: Mapping, seed: int | None) -> Experiment:
    seed = int(seed if seed is not None else cfg.get("seed", 0))
    ds = dict(cfg["dataset"])
    constraints = DimConstraints(int(ds["d_min"]), int(ds["d_max"]))
    method = ds["lift"]
    lift_spec = None if method == "none" else LiftSpec(method, int(ds.get("path_length", 3)), None, constraints)
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in dict(ds.get("params", {})).items()}
    dataset = DatasetSpec(name=ds["name"], count=int(ds.get("count", 100)), seed=seed,
                          max_nodes=int(ds["max_nodes"]), max_features=int(ds["max_features"]),
                          lift=lift_spec, params=params, path=ds.get("path"))
    f1 = int(ds.get("f1", 1))
    f2 = int(ds.get("f2", 1))
    shared = dict(n=dataset.max_nodes, f0=dataset.max_features, f1=f1, f2=f2, constraints=constraints, seed=seed)
    mx = dict(get(cfg, "model.x", {}))
    ma = dict(get(cfg, "model.a", {}))
    mf = dict(get(cfg, "model.f", {}))
    which_a = ma.pop("which")
    models = (ScoreModelSpec.from_config("score_x", mx, **shared),
              ScoreModelSpec.from_config(which_a, ma, **shared),
              ScoreModelSpec.from_config("score_f", mf, **shared))
    sdes = tuple(SdeSpec.from_config(cfg["sde"][r]) for r in "xaf")
    sampler = SamplerConfig.from_config({**cfg["sampler"], "seed": seed})
    tr = dict(cfg["train"])
    if "test_fraction" in ds:
        tr.setdefault("test_fraction", float(ds["test_fraction"]))
    if "gamma" in tr:
        tr["gamma"] = tuple(float(g) for g in tr["gamma"])
    train = TrainConfig(**{**tr, "seed": seed})
    metrics = MetricConfig.from_config(cfg.get("eval"))
    gen = dict(cfg.get("generate", {}))
    support = {"path": "path", "ring": "ring"}.get(method, "none")
    setup = GenerationSetup(n_max=dataset.max_nodes, f0=dataset.max_features, f1=f1, f2=f2,
                            constraints=constraints, support_rule=gen.get("support_rule", support),
                            adjacency_mode=gen.get("adjacency_mode", "binary"),
                            x_mode=gen.get("x_mode", "onehot"), threshold=float(gen.get("threshold", 0.5)))
    return Experiment(dict(cfg), seed, dataset, constraints, models, sdes, sampler, train, metrics, setup,
                      int(gen.get("num_samples", 64)))
