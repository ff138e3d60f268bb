"""Monte Carlo replication of two-phase rejective designs.

Replicate k of every scenario draws from ``SeedSequence(base_seed, spawn_key=(k,))``, so
scenarios that differ only in the threshold see matched seeds and replicates can run in any
order. The spawn key keeps replicate streams apart from a frame generated with
``default_rng(base_seed)``; entropy lists like ``[base_seed, 0]`` would not (trailing zeros
are dropped).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..balance import draw_tprs
from ..errors import RejectiveError, RunFailure
from ..estequ import EstimatingFunction, ee_variance, solve_ee, weighted_quantile
from ..estimators import (EstimateReport, hajek_mean, pi_star_mean, ree, regression_estimate_two_phase,
                          regression_weights)
from ..ldist import v_pgamma
from ..variance import confidence_interval, vhat_general, vhat_srs_mean
from .config import ExperimentConfig

log = logging.getLogger(__name__)


def replicate_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=(int(index),)))


def theoretical_varred(f_II_I: float, f_I_0: float, p: int, gamma_sq: float, r_sq: float) -> float:
    """Asymptotic percentage variance reduction of ybar_II from rejection; 0 for a census."""
    if math.isclose(f_II_I * f_I_0, 1.0):
        log.info("census design (f_II,I * f_I,0 = 1): no variance reduction")
        return 0.0
    return 100.0 * (1 - f_II_I) / (1 - f_II_I * f_I_0) * (1 - v_pgamma(p, gamma_sq)) * r_sq


def population_r2(pop) -> float:
    """Frame R^2 of the linear regression of y on x."""
    y = pop.require_y()
    x = pop.x - pop.x.mean(axis=0)
    yc = y - y.mean()
    beta, *_ = np.linalg.lstsq(x, yc, rcond=None)
    return float(np.sum((x @ beta) ** 2) / np.sum(yc**2))


def parameter_target(pop, spec) -> float:
    """Frame value of the estimand of an estimator spec."""
    y = pop.require_y()
    if spec.kind != "ee":
        return float(y.mean())
    func = EstimatingFunction.parse(spec.parameter)
    if func.kind == "mean":
        return float(y.mean())
    if func.kind == "proportion_below_c":
        return float(np.mean(y < func.params["c"]))
    if func.kind == "variance":
        return float(y.mean()) if spec.component == 0 else float(y.var())
    return weighted_quantile(y, np.ones_like(y), func.params["tau"])


@dataclass
class ReplicateRecord:
    """Per-replicate output: reports by estimator, draw counts and diagnostics."""

    index: int
    scenario: float
    reports: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    draws: tuple = ()
    negative_weights: int | None = None
    clamped: int = 0
    seconds: float = 0.0


def _variance(chain, spec, cfg, fit=None):
    if spec.variance == "srs":
        return vhat_srs_mean(chain, fit, x_cols=spec.x_cols)
    return vhat_general(chain, style=spec.variance, x_cols=spec.x_cols, approx_joint=cfg.approx_joint)


def _estimate(chain, spec, cfg) -> tuple[EstimateReport, dict]:
    y = chain.y(1)
    diag = {}
    comps = None
    if spec.kind == "pi_star":
        est = pi_star_mean(chain, y)
        if spec.variance != "none":
            comps = _variance(chain, spec, cfg)
    elif spec.kind == "hajek":
        est = hajek_mean(chain.samples[0], chain.y(0))
    elif spec.kind == "reg":
        est, fit = regression_estimate_two_phase(chain, y, spec.x_cols)
        _, diag["negative_weights"] = regression_weights(chain, spec.x_cols)
        if spec.variance != "none":
            comps = _variance(chain, spec, cfg, fit).regression()
    elif spec.kind == "ee":
        func = EstimatingFunction.parse(spec.parameter)
        fit = solve_ee(chain, func, x_cols=spec.x_cols)
        est = float(fit.xi_hat[spec.component])
        if spec.variance != "none":
            style = "ht" if spec.variance == "srs" else spec.variance
            comps = ee_variance(chain, fit, style=style, component=spec.component, x_cols=spec.x_cols,
                                approx_joint=cfg.approx_joint)
    else:
        est = ree(chain, chain.pop.columns(spec.strata_col)[:, 0], y)
    if comps is None:
        return EstimateReport(float(est), math.nan, math.nan, math.nan, spec.name, diag), diag
    lo, hi = confidence_interval(est, comps, cfg.alpha, n_draws=cfg.quantile_draws, seed=cfg.quantile_seed)
    return EstimateReport(float(est), comps.variance, lo, hi, spec.name, diag), diag


def run_replicate(pop, designs, criterion, cfg: ExperimentConfig, index: int, scenario: float) -> ReplicateRecord:
    rec = ReplicateRecord(index, scenario)
    t0 = time.perf_counter()
    rng = replicate_rng(cfg.base_seed, index)
    try:
        chain = draw_tprs(rng, pop, designs[0], designs[1], criterion)
    except RejectiveError as e:
        rec.errors = {s.name: f"{type(e).__name__}: {e}" for s in cfg.estimators}
        rec.seconds = time.perf_counter() - t0
        return rec
    rec.draws = chain.draws_attempted
    rec.clamped = sum(s.clamped for s in chain.samples)
    for spec in cfg.estimators:
        try:
            rep, diag = _estimate(chain, spec, cfg)
        except RejectiveError as e:
            rec.errors[spec.name] = f"{type(e).__name__}: {e}"
            continue
        rec.reports[spec.name] = rep
        if "negative_weights" in diag:
            rec.negative_weights = diag["negative_weights"]
    rec.seconds = time.perf_counter() - t0
    return rec


def _run_block(args):
    pop, cfg, scenario, indices = args
    designs = cfg.designs()
    crit = cfg.criterion(scenario)
    return [run_replicate(pop, designs, crit, cfg, k, scenario) for k in indices]


@dataclass
class ScenarioResult:
    gamma_sq: float
    records: list

    def failed(self) -> int:
        return sum(1 for r in self.records if r.errors)

    def estimates(self, name: str) -> np.ndarray:
        return np.array([r.reports[name].estimate for r in self.records if name in r.reports])

    def reports(self, name: str) -> list:
        return [r.reports[name] for r in self.records if name in r.reports]

    def negative_weight_replicates(self) -> int:
        return sum(1 for r in self.records if r.negative_weights)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    scenarios: list
    targets: dict
    columns: tuple
    rows: list

    def scenario(self, gamma_sq) -> ScenarioResult:
        for s in self.scenarios:
            if s.gamma_sq == gamma_sq or (math.isinf(s.gamma_sq) and math.isinf(float(gamma_sq))):
                return s
        raise KeyError(gamma_sq)

    def row(self, gamma_sq, estimator: str) -> dict:
        g = float(gamma_sq)
        for r in self.rows:
            if r["estimator"] == estimator and (r["gamma_sq"] == g or (math.isinf(g) and math.isinf(r["gamma_sq"]))):
                return r
        raise KeyError((gamma_sq, estimator))

    def summary_csv(self) -> str:
        return _to_csv(self.columns, self.rows)

    def replicates_csv(self) -> str:
        cols = ("gamma_sq", "replicate", "estimator", "estimate", "variance", "ci_low", "ci_high", "draws",
                "negative_weights", "seconds", "error")
        rows = []
        for s in self.scenarios:
            for r in s.records:
                for spec in self.config.estimators:
                    rep = r.reports.get(spec.name)
                    rows.append({
                        "gamma_sq": s.gamma_sq, "replicate": r.index, "estimator": spec.name,
                        "estimate": rep.estimate if rep else math.nan,
                        "variance": rep.variance if rep else math.nan,
                        "ci_low": rep.ci_low if rep else math.nan, "ci_high": rep.ci_high if rep else math.nan,
                        "draws": r.draws[-1] if r.draws else 0, "negative_weights": r.negative_weights,
                        "seconds": r.seconds, "error": r.errors.get(spec.name, ""),
                    })
        return _to_csv(cols, rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else ("" if math.isnan(v) else format(float(v), ".10g"))
    return str(v)


def _to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def summarize(cfg: ExperimentConfig, scenarios: list, targets: dict) -> tuple[tuple, list]:
    """Bias, Var, MSE, mean VE, coverage % and VarRed % per scenario and estimator."""
    baseline = next((s for s in scenarios if math.isinf(s.gamma_sq)), None)
    with_varred = baseline is not None and any(not math.isinf(s.gamma_sq) for s in scenarios)
    cols = ["gamma_sq", "estimator", "n_ok", "n_error", "mean", "bias", "var", "mse", "mean_ve", "coverage"]
    if with_varred:
        cols.append("varred")
    cols += ["mean_draws", "negative_weight_reps"]
    rows = []
    for s in scenarios:
        draws = [r.draws[-1] for r in s.records if r.draws]
        for spec in cfg.estimators:
            reps = s.reports(spec.name)
            est = np.array([r.estimate for r in reps])
            target = targets[spec.name]
            n_ok = est.size
            var = float(np.var(est, ddof=1)) if n_ok > 1 else math.nan
            ve = np.array([r.variance for r in reps])
            row = {
                "gamma_sq": s.gamma_sq, "estimator": spec.name, "n_ok": n_ok,
                "n_error": len(s.records) - n_ok,
                "mean": float(est.mean()) if n_ok else math.nan,
                "bias": float(est.mean() - target) if n_ok else math.nan,
                "var": var,
                "mse": float(np.mean((est - target) ** 2)) if n_ok else math.nan,
                "mean_ve": float(ve.mean()) if n_ok and np.all(np.isfinite(ve)) else math.nan,
                "coverage": 100.0 * float(np.mean([r.covers(target) for r in reps]))
                if n_ok and np.all(np.isfinite(ve)) else math.nan,
                "mean_draws": float(np.mean(draws)) if draws else math.nan,
                "negative_weight_reps": s.negative_weight_replicates() if spec.kind == "reg" else None,
            }
            if with_varred:
                base = baseline.estimates(spec.name)
                vb = float(np.var(base, ddof=1)) if base.size > 1 else math.nan
                row["varred"] = None if math.isinf(s.gamma_sq) else 100.0 * (1.0 - var / vb)
            rows.append(row)
    return tuple(cols), rows


def run_experiment(cfg: ExperimentConfig, pop=None) -> ExperimentResult:
    """Run every threshold scenario of ``cfg`` and reduce to the summary table."""
    pop = cfg.population.build(cfg.base_dir) if pop is None else pop
    cfg.check_columns(pop)
    targets = {spec.name: parameter_target(pop, spec) for spec in cfg.estimators}
    scenarios = []
    for g in cfg.gamma_sq:
        gamma = cfg.criterion(g).threshold(len(cfg.balance.get("columns") or range(pop.p)))
        indices = list(range(cfg.n_replicates))
        if cfg.n_jobs > 1:
            chunks = [indices[i::cfg.n_jobs] for i in range(cfg.n_jobs)]
            with ProcessPoolExecutor(cfg.n_jobs) as ex:
                parts = list(ex.map(_run_block, [(pop, cfg, g, c) for c in chunks]))
            records = sorted((r for part in parts for r in part), key=lambda r: r.index)
        else:
            records = _run_block((pop, cfg, g, indices))
        res = ScenarioResult(gamma, records)
        n_failed = res.failed()
        clamped = sum(r.clamped for r in records)
        if clamped:
            log.warning("gamma_sq=%s: %d Poisson inclusion probabilities clamped at 1 across replicates",
                        gamma, clamped)
        for r in records:
            for name, msg in r.errors.items():
                log.warning("gamma_sq=%s replicate %d %s: %s", gamma, r.index, name, msg)
        if n_failed > cfg.max_error_fraction * cfg.n_replicates:
            raise RunFailure(f"{n_failed} of {cfg.n_replicates} replicates failed at gamma_sq={gamma}",
                             n_failed, cfg.n_replicates)
        scenarios.append(res)
    cols, rows = summarize(cfg, scenarios, targets)
    result = ExperimentResult(cfg, scenarios, targets, cols, rows)
    if cfg.out:
        _write(cfg.out, result.summary_csv())
    if cfg.keep_replicates and cfg.replicates_out:
        _write(cfg.replicates_out, result.replicates_csv())
    return result


def _write(path, text: str):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
