"""Three-phase study on a school-performance style frame.

SRS phase I, Poisson phase II proportional to x, Poisson phase III proportional to the sum of
the z block; every replicate yields the two- and three-phase estimators from one chain.
"""

from __future__ import annotations

import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..balance import BalanceCriterion, draw_three_phase, truncate_chain
from ..designs import PoissonDesign, SRSDesign
from ..errors import ConfigurationError, RejectiveError, RunFailure
from ..estimators import EstimateReport, pi_star_mean, regression_estimate_three_phase, regression_estimate_two_phase
from ..ldist import chisq_quantile
from ..variance import confidence_interval, vhat_general, vhat_three_phase
from .config import PopulationSpec
from .experiment import _to_csv, _write, replicate_rng

log = logging.getLogger(__name__)

LABELS_PLAIN = ("simple2", "reg2", "simple3", "reg3")
LABELS_REJ = ("rej2", "rej-reg2", "rej3", "rej-reg3")


@dataclass(frozen=True)
class ThreePhaseConfig:
    population: PopulationSpec = field(default_factory=lambda: PopulationSpec(source="api_like", n_units=6194))
    n_I: int = 2000
    expected_n_II: float = 500.0
    expected_n_III: float = 100.0
    size_col_II: str = "x"
    size_col_III: str = "z"
    gamma1_sq: float | str = 0.1
    gamma2_sq: float | str = "chisq_quantile:0.05"
    style: str = "ht"
    n_replicates: int = 1000
    base_seed: int = 0
    alpha: float = 0.05
    quantile_draws: int = 200_000
    quantile_seed: int = 0
    max_error_fraction: float = 0.01
    out: str | None = None

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ConfigurationError("n_replicates must be >= 1")
        if self.style not in ("ht", "syg"):
            raise ConfigurationError("three-phase variance style must be 'ht' or 'syg'")

    def designs(self):
        return (SRSDesign(self.n_I), PoissonDesign(self.expected_n_II, size_col=self.size_col_II),
                PoissonDesign(self.expected_n_III, size_col=self.size_col_III))


def load_three_phase_config(path) -> ThreePhaseConfig:
    path = Path(path)
    with path.open("rb") as fh:
        data = tomllib.load(fh)
    pop = dict(data.get("population", {}))
    for k in ("x_cols", "z_cols"):
        if k in pop:
            pop[k] = tuple(pop[k])
    kw = dict(data.get("three_phase", {}))
    kw.update(data.get("run", {}))
    if "population" in data:
        kw["population"] = PopulationSpec(**pop)
    try:
        return ThreePhaseConfig(**kw)
    except TypeError as e:
        raise ConfigurationError(str(e)) from e


def _report(label, est, comps, cfg) -> EstimateReport:
    lo, hi = confidence_interval(est, comps, cfg.alpha, n_draws=cfg.quantile_draws, seed=cfg.quantile_seed)
    return EstimateReport(float(est), comps.variance, lo, hi, label)


def three_phase_replicate(pop, cfg: ThreePhaseConfig, index: int, rejective: bool) -> tuple[dict, int]:
    """All four estimators of one scenario on one chain, keyed by label, and the number of
    Poisson inclusion probabilities clamped at 1 in the accepted chain."""
    rng = replicate_rng(cfg.base_seed, index)
    crit1 = BalanceCriterion(cfg.gamma1_sq if rejective else math.inf)
    crit2 = BalanceCriterion(cfg.gamma2_sq if rejective else math.inf)
    chain = draw_three_phase(rng, pop, *cfg.designs(), crit1, crit2)
    labels = LABELS_REJ if rejective else LABELS_PLAIN
    two = truncate_chain(chain, 2)
    y2, y3 = chain.y(1), chain.y(2)
    comps2 = vhat_general(two, y2, style=cfg.style)
    comps3 = vhat_three_phase(chain, y3, style=cfg.style)
    reg2, _ = regression_estimate_two_phase(two, y2)
    reg3, _ = regression_estimate_three_phase(chain, y3)
    reports = {
        labels[0]: _report(labels[0], pi_star_mean(two, y2), comps2, cfg),
        labels[1]: _report(labels[1], reg2, comps2.regression(), cfg),
        labels[2]: _report(labels[2], pi_star_mean(chain, y3), comps3, cfg),
        labels[3]: _report(labels[3], reg3, comps3.regression(), cfg),
    }
    return reports, sum(smp.clamped for smp in chain.samples)


@dataclass
class ThreePhaseResult:
    columns: tuple
    rows: list
    reports: dict  # label -> list of EstimateReport
    target: float
    clamped: int = 0  # Poisson probabilities clamped at 1, summed over replicates

    def row(self, label: str) -> dict:
        return next(r for r in self.rows if r["estimator"] == label)

    def summary_csv(self) -> str:
        return _to_csv(self.columns, self.rows)


def run_api_style_three_phase(cfg: ThreePhaseConfig, pop=None) -> ThreePhaseResult:
    """Variance and coverage of the eight estimators with and without rejection."""
    pop = cfg.population.build() if pop is None else pop
    if pop.z is None:
        raise ConfigurationError("three-phase study needs a frame with a z block")
    target = float(pop.require_y().mean())
    reports = {lab: [] for lab in LABELS_PLAIN + LABELS_REJ}
    clamped = 0
    for rejective in (False, True):
        failed = 0
        t0 = time.perf_counter()
        for k in range(cfg.n_replicates):
            try:
                out, n_clamped = three_phase_replicate(pop, cfg, k, rejective)
            except RejectiveError as e:
                failed += 1
                log.warning("replicate %d (rejective=%s): %s: %s", k, rejective, type(e).__name__, e)
                continue
            clamped += n_clamped
            for lab, rep in out.items():
                reports[lab].append(rep)
        log.info("rejective=%s: %d replicates in %.1fs", rejective, cfg.n_replicates, time.perf_counter() - t0)
        if failed > cfg.max_error_fraction * cfg.n_replicates:
            raise RunFailure(f"{failed} of {cfg.n_replicates} three-phase replicates failed", failed, cfg.n_replicates)
    g2 = cfg.gamma2_sq
    cols = ("estimator", "gamma1_sq", "gamma2_sq", "n_ok", "bias", "var", "mse", "mean_ve", "coverage")
    rows = []
    for lab, reps in reports.items():
        est = np.array([r.estimate for r in reps])
        rej = lab in LABELS_REJ
        rows.append({
            "estimator": lab,
            "gamma1_sq": cfg.gamma1_sq if rej else math.inf,
            "gamma2_sq": (g2 if not str(g2).startswith("chisq") else _g2_value(pop, cfg)) if rej else math.inf,
            "n_ok": est.size,
            "bias": float(est.mean() - target),
            "var": float(np.var(est, ddof=1)) if est.size > 1 else math.nan,
            "mse": float(np.mean((est - target) ** 2)),
            "mean_ve": float(np.mean([r.variance for r in reps])),
            "coverage": 100.0 * float(np.mean([r.covers(target) for r in reps])),
        })
    if clamped:
        log.warning("%d Poisson inclusion probabilities clamped at 1 across replicates", clamped)
    result = ThreePhaseResult(cols, rows, reports, target, clamped)
    if cfg.out:
        _write(cfg.out, result.summary_csv())
    return result


def _g2_value(pop, cfg) -> float:
    """Numeric phase-III threshold for a chi-square quantile spec on c = (x, a)."""
    q = float(str(cfg.gamma2_sq).split(":", 1)[1])
    return chisq_quantile(pop.p + pop.q, q)
