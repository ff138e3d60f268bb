"""Experiment configuration read from TOML.

A config fully specifies a run: frame, phase designs, balance thresholds, estimators,
replication count, seed and output paths.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..balance import BalanceCriterion, parse_gamma
from ..designs import make_design
from ..errors import ConfigurationError, SchemaError
from ..estequ import EstimatingFunction
from ..population import FinitePopulation, generate_api_like, generate_synthetic, load_population

ESTIMATOR_KINDS = ("pi_star", "hajek", "reg", "ee", "ree")
KIND_ALIASES = {"reg2": "reg"}
VARIANCE_STYLES = ("srs", "ht", "syg", "none")


@dataclass(frozen=True)
class PopulationSpec:
    source: str = "synthetic"  # synthetic | api_like | file
    n_units: int = 100_000
    beta: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0
    path: str | None = None
    x_cols: tuple = ()
    z_cols: tuple = ()
    y_col: str | None = None
    id_col: str | None = None

    def build(self, base_dir: Path | None = None) -> FinitePopulation:
        if self.source == "synthetic":
            return generate_synthetic(self.seed, self.n_units, self.beta, self.noise_sd)
        if self.source == "api_like":
            return generate_api_like(self.seed, self.n_units)
        if self.source == "file":
            if not self.path:
                raise ConfigurationError("file population needs a path")
            p = Path(self.path)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return load_population(p, self.x_cols, self.y_col, self.z_cols or None, self.id_col)
        raise ConfigurationError(f"unknown population source {self.source!r}")


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator column.

    ``kind`` is 'pi_star', 'hajek' (phase-I mean), 'reg' (alias 'reg2'), 'ee' (with ``parameter``)
    or 'ree' (with ``strata_col``). ``x_cols`` names regressors when they differ from the frame's
    full x block.
    """

    name: str
    kind: str = "pi_star"
    variance: str = "srs"
    parameter: str = "mean"
    component: int = 0
    strata_col: str | None = None
    x_cols: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KIND_ALIASES.get(self.kind, self.kind))
        if self.x_cols is not None:
            object.__setattr__(self, "x_cols", tuple(self.x_cols))
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"unknown estimator kind {self.kind!r}")
        if self.variance not in VARIANCE_STYLES:
            raise ConfigurationError(f"unknown variance style {self.variance!r}")
        if self.kind == "ee":
            EstimatingFunction.parse(self.parameter)
        if self.kind == "ree" and self.strata_col is None:
            raise ConfigurationError("ree needs a strata_col")


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationSpec
    phase_designs: tuple  # design mappings, outermost first
    gamma_sq: tuple  # phase-II thresholds, one scenario each
    estimators: tuple
    balance: dict = field(default_factory=dict)  # shared BalanceCriterion options
    n_replicates: int = 1000
    base_seed: int = 0
    alpha: float = 0.05
    quantile_draws: int = 200_000
    quantile_seed: int = 0
    approx_joint: bool = False
    n_jobs: int = 1
    max_error_fraction: float = 0.01
    out: str | None = None
    replicates_out: str | None = None
    keep_replicates: bool = False
    base_dir: Path | None = None

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ConfigurationError("n_replicates must be >= 1")
        if len(self.phase_designs) != 2:
            raise ConfigurationError("run_experiment takes exactly two phase designs")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if not self.estimators:
            raise ConfigurationError("no estimators configured")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ConfigurationError("estimator names must be unique")
        for g in self.gamma_sq:
            parse_gamma(g, 1)

    def designs(self):
        return tuple(make_design(d) for d in self.phase_designs)

    def criterion(self, gamma_sq) -> BalanceCriterion:
        opts = dict(self.balance)
        for k in ("columns", "tiers", "tier_weights"):
            if opts.get(k) is not None:
                opts[k] = tuple(tuple(t) if isinstance(t, list) else t for t in opts[k])
        return BalanceCriterion(gamma_sq=gamma_sq, **opts)

    def check_columns(self, pop: FinitePopulation):
        """Referenced columns must exist in the frame."""
        for col in self.balance.get("columns") or ():
            if isinstance(col, str) and col not in pop.x_names:
                raise SchemaError(f"balance column {col!r} not in the frame")
        for d in self.phase_designs:
            for key in ("size_col", "stratum_col"):
                if d.get(key) is not None:
                    pop.columns(d[key])
        for e in self.estimators:
            if e.strata_col is not None:
                pop.columns(e.strata_col)
            for col in e.x_cols or ():
                if col not in pop.x_names:
                    raise SchemaError(f"regressor {col!r} not in the frame's x block")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_BALANCE_KEYS = ("columns", "tiers", "tier_weights", "max_draws", "normalization", "ridge")


def _gamma_list(raw) -> tuple:
    raw = raw if isinstance(raw, list) else [raw]
    return tuple(math.inf if isinstance(g, str) and g.strip().lower() == "inf" else g for g in raw)


def config_from_dict(data: dict, base_dir: Path | None = None) -> ExperimentConfig:
    pop = dict(data.get("population", {}))
    for k in ("x_cols", "z_cols"):
        if isinstance(pop.get(k), str):
            pop[k] = [c.strip() for c in pop[k].split(",") if c.strip()]
        if k in pop:
            pop[k] = tuple(pop[k])
    unknown = set(pop) - set(PopulationSpec.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown population keys {sorted(unknown)}")
    design = data.get("design", {})
    phases = tuple(design[k] for k in sorted(design) if k.startswith("phase"))
    bal = dict(data.get("balance", {}))
    gammas = _gamma_list(bal.pop("gamma_sq", [math.inf]))
    unknown = set(bal) - set(_BALANCE_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown balance keys {sorted(unknown)}")
    ests = tuple(EstimatorSpec(**e) for e in data.get("estimators", []))
    run = dict(data.get("run", {}))
    allowed = {"n_replicates", "base_seed", "alpha", "quantile_draws", "quantile_seed", "approx_joint", "n_jobs",
               "max_error_fraction", "out", "replicates_out", "keep_replicates"}
    unknown = set(run) - allowed
    if unknown:
        raise ConfigurationError(f"unknown run keys {sorted(unknown)}")
    return ExperimentConfig(population=PopulationSpec(**pop), phase_designs=phases, gamma_sq=gammas,
                            estimators=ests, balance=bal, base_dir=base_dir, **run)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from e
    return config_from_dict(data, base_dir=path.parent)


FAST_SCALE = {"n_units": 20_000, "n_I": 1000, "n_II": 200}


def fast_variant(cfg: ExperimentConfig) -> ExperimentConfig:
    """Desk-scale variant: N = 2e4, n_I = 1000, n_II = 200 for SRS phases."""
    pop = replace(cfg.population, n_units=FAST_SCALE["n_units"]) if cfg.population.source == "synthetic" \
        else cfg.population
    phases = list(cfg.phase_designs)
    if phases[0].get("design", "srswor") == "srswor":
        phases[0] = dict(phases[0], n=FAST_SCALE["n_I"])
    if phases[1].get("design", "srswor") == "srswor":
        phases[1] = dict(phases[1], n=FAST_SCALE["n_II"])
    return replace(cfg, population=pop, phase_designs=tuple(phases))
