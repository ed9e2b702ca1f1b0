"""Experiment configuration: a typed TOML file parsed into dataclasses.

Every table and key is checked against the known set; anything unknown is a
:class:`ConfigError` naming the offending key.  The seed is mandatory.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .distributions import (
    DistributionSpec,
    Empirical,
    GaussianMixture,
    StdGaussian,
    Uniform,
    UnionOfIntervals,
    gaussian,
)
from .statmatch import OBJECTIVE_KEYS, Objective

KINDS = ("train-statmatch", "train-nll", "train-elbo", "simulate-flow", "curriculum",
         "compare", "reproduce-fig1")

DENSITY_OBJECTIVES = {"nll-flow": {"template", "hidden"}, "elbo-lg": {"a0"}}


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    layers: list = field(default_factory=lambda: [1, 32, 32, 1])
    activation: str = "tanh"
    output: str = "identity"
    skip: bool = False
    zero_last: bool = False


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1000
    batch_size: int = 512
    lr_end_frac: float = 1.0


@dataclass
class EvalConfig:
    n_samples: int = 10_000
    grid: list = field(default_factory=lambda: [-3.0, 3.0, 601])
    w1_max: float | None = None


@dataclass
class CurriculumConfig:
    times: list | None = None
    t0: float = 4.0
    ratio: float = 0.35
    stages: int = 8
    stage_epochs: int = 1000
    retry_cap: int = 2
    threshold: float = 0.05

    def schedule_times(self) -> list:
        if self.times is not None:
            return [float(t) for t in self.times]
        return [self.t0 * self.ratio ** k for k in range(self.stages - 1)] + [0.0]


@dataclass
class FlowConfig:
    potential: str = "quadratic"
    t_end: float = 12.0
    dt: float = 1e-2
    steps: int = 400
    horizon: float = 12.0
    n_particles: int = 10_000
    checkpoints: int = 10


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    out_dir: str = "runs/out"
    n_data: int = 10_000
    base: DistributionSpec = field(default_factory=StdGaussian)
    target: DistributionSpec | None = None
    objective: dict = field(default_factory=lambda: {"key": "energy"})
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)

    def statmatch_objective(self) -> Objective:
        params = {k: v for k, v in self.objective.items() if k != "key"}
        return Objective(self.objective["key"], params)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["base"] = spec_to_dict(self.base)
        d["target"] = None if self.target is None else spec_to_dict(self.target)
        return d


# --------------------------------------------------------------------------
# distribution tables
# --------------------------------------------------------------------------

_SPEC_KEYS = {
    "std-gaussian": {"dim"},
    "gaussian": {"mean", "var"},
    "uniform": {"lo", "hi"},
    "intervals": {"intervals", "weights"},
    "mixture": {"components"},
    "empirical": {"samples"},
}


def spec_from_dict(d: dict, where: str) -> DistributionSpec:
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _SPEC_KEYS:
        raise ConfigError(f"{where}.type: unknown distribution {kind!r}; "
                          f"expected one of {sorted(_SPEC_KEYS)}")
    _reject_unknown(d, _SPEC_KEYS[kind], where)
    try:
        if kind == "std-gaussian":
            return StdGaussian(int(d.get("dim", 1)))
        if kind == "gaussian":
            return gaussian(float(d["mean"]), float(d["var"]))
        if kind == "uniform":
            return Uniform(float(d.get("lo", 0.0)), float(d.get("hi", 1.0)))
        if kind == "intervals":
            return UnionOfIntervals(tuple(map(tuple, d["intervals"])),
                                    tuple(d["weights"]) if "weights" in d else None)
        if kind == "mixture":
            return GaussianMixture(tuple(map(tuple, d["components"])))
        return Empirical(d["samples"])
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def spec_to_dict(spec: DistributionSpec) -> dict:
    if isinstance(spec, StdGaussian):
        return {"type": "std-gaussian", "dim": spec.dim}
    if isinstance(spec, Uniform):
        return {"type": "uniform", "lo": float(spec.lo), "hi": float(spec.hi)}
    if isinstance(spec, UnionOfIntervals):
        return {"type": "intervals", "intervals": [list(iv) for iv in spec.intervals],
                "weights": list(spec.weights)}
    if isinstance(spec, GaussianMixture):
        if len(spec.components) == 1:
            m, v, _ = spec.components[0]
            return {"type": "gaussian", "mean": m, "var": v}
        return {"type": "mixture", "components": [list(c) for c in spec.components]}
    return {"type": "empirical", "samples": spec.samples[:, 0].tolist()}


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _reject_unknown(d: dict, allowed, where: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _section(cls, raw: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(raw, names, where)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: dict) -> ExperimentConfig:
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    _reject_unknown(raw, top, "config")
    if "seed" not in raw:
        raise ConfigError("config: 'seed' is required")
    if not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError("config: 'seed' must be a nonnegative integer")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"config.kind: unknown experiment kind {kind!r}; "
                          f"expected one of {list(KINDS)}")
    kw = {"kind": kind, "seed": raw["seed"]}
    for key in ("out_dir", "n_data"):
        if key in raw:
            kw[key] = raw[key]
    for key in ("base", "target"):
        if key in raw:
            kw[key] = spec_from_dict(raw[key], key)
    sections = {"model": ModelConfig, "optimizer": OptimizerConfig, "eval": EvalConfig,
                "curriculum": CurriculumConfig, "flow": FlowConfig}
    for key, cls in sections.items():
        if key in raw:
            kw[key] = _section(cls, raw[key], key)
    if "objective" in raw:
        obj = dict(raw["objective"])
        okey = obj.get("key")
        if okey in OBJECTIVE_KEYS:
            _reject_unknown(obj, OBJECTIVE_KEYS[okey] | {"key"}, "objective")
        elif okey in DENSITY_OBJECTIVES:
            _reject_unknown(obj, DENSITY_OBJECTIVES[okey] | {"key"}, "objective")
        else:
            raise ConfigError(f"objective.key: unknown objective {okey!r}; expected one of "
                              f"{sorted(OBJECTIVE_KEYS) + sorted(DENSITY_OBJECTIVES)}")
        kw["objective"] = obj
    cfg = ExperimentConfig(**kw)
    _check_consistency(cfg)
    return cfg


def _check_consistency(cfg: ExperimentConfig):
    needs_target = cfg.kind != "reproduce-fig1"
    if needs_target and cfg.target is None:
        raise ConfigError(f"config: kind {cfg.kind!r} needs a [target] table")
    okey = cfg.objective.get("key")
    if cfg.kind == "train-nll" and okey != "nll-flow":
        raise ConfigError("train-nll needs objective.key = 'nll-flow'")
    if cfg.kind == "train-nll" and cfg.n_data < 1000:
        raise ConfigError("n_data: likelihood training needs at least 1000 data points")
    if cfg.kind == "train-elbo" and okey != "elbo-lg":
        raise ConfigError("train-elbo needs objective.key = 'elbo-lg'")
    if cfg.kind in ("train-statmatch", "curriculum", "compare") and okey not in OBJECTIVE_KEYS:
        raise ConfigError(f"{cfg.kind} needs a statistics-matching objective, got {okey!r}")
    if cfg.optimizer.name != "adam":
        raise ConfigError(f"optimizer.name: only 'adam' is supported, got {cfg.optimizer.name!r}")
    if cfg.flow.potential != "quadratic":
        raise ConfigError("flow.potential: only 'quadratic' is available from config files")
    lo, hi, n = cfg.eval.grid
    if not (hi > lo and int(n) >= 2):
        raise ConfigError("eval.grid must be [lo, hi, n] with hi > lo and n >= 2")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw)


def fig1_config(seed: int = 0, out_dir: str = "runs/fig1") -> ExperimentConfig:
    """Preset for the Gaussian-to-uniform Fourier-matching experiment."""
    return ExperimentConfig(
        kind="reproduce-fig1",
        seed=seed,
        out_dir=out_dir,
        n_data=100_000,
        base=StdGaussian(1),
        target=Uniform(0.0, 1.0),
        objective={"key": "d2-fourier", "frequencies": list(range(1, 11)),
                   "interval": [0.0, 1.0], "estimator": "biased"},
        model=ModelConfig([1, 32, 32, 1], "tanh", "sigmoid"),
        optimizer=OptimizerConfig(lr=1e-3, epochs=5000, batch_size=512),
        eval=EvalConfig(10_000, [-3.0, 3.0, 601], w1_max=0.02),
    )
