"""Acceptance criteria at full scale. Each test records one PASS/FAIL line in the terminal summary."""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from rejective import (BalanceCriterion, EstimatingFunction, FinitePopulation, L_cdf_p1, SRSDesign, draw_tprs,
                       generate_synthetic, pi_star_mean, sample_L, solve_ee, v_pgamma, vhat_general)
from rejective.harness import (enumerate_two_phase, load_config, load_three_phase_config, population_r2,
                               run_api_style_three_phase, run_experiment, theoretical_varred)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


def _run(name):
    cfg = load_config(CONFIGS / f"{name}.toml")
    return run_experiment(replace(cfg, out=None))


@pytest.fixture(scope="session")
def srs_runs():
    return {tag: _run(f"srs_beta{tag}") for tag in ("0p5", "1", "2")}


@pytest.fixture(scope="session")
def ee_run():
    return _run("ee_median")


@pytest.fixture(scope="session")
def three_phase_run():
    cfg = load_three_phase_config(CONFIGS / "api_three_phase.toml")
    return run_api_style_three_phase(replace(cfg, out=None))


def test_enumeration_oracle_exactness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=6)
    y = 1 + x + rng.normal(size=6)
    u, v = x, y
    enum = enumerate_two_phase(x, 4, 2)
    units = enum.units()
    n_I, n_II, N = 4, 2, 6
    # design-unbiasedness with the N-denominator expansion estimator
    est = y[units].sum(axis=2) / (n_I / N * n_II / n_I) / N
    tower = abs(enum.expectation(est, rejective=False) - y.mean())
    # conditional covariance of phase-II means given A
    ua, va = u[enum.a_units], v[enum.a_units]
    ub, vb = u[units].mean(axis=2), v[units].mean(axis=2)
    cov = (ub * vb).mean(axis=1) - ub.mean(axis=1) * vb.mean(axis=1)
    v_I = ((ua - ua.mean(1, keepdims=True)) * (va - va.mean(1, keepdims=True))).sum(1) / (n_I - 1)
    cov_err = np.max(np.abs(cov - (1 / n_II - 1 / n_I) * v_I))
    # conditional unbiasedness of the phase-II covariance
    v_II = ((u[units] - ub[..., None]) * (v[units] - vb[..., None])).sum(2) / (n_II - 1)
    vuv_err = np.max(np.abs(v_II.mean(axis=1) - v_I))
    secs = time.perf_counter() - t0
    ok = max(tower, cov_err, vuv_err) < 1e-12 and secs < 1.0
    verdict("oracle exactness", ok,
            f"|E ybar - ybar0| = {tower:.1e}, cov err = {cov_err:.1e}, E V_uv err = {vuv_err:.1e}, {secs:.3f} s")


def test_v_factor_values(verdict):
    t0 = time.perf_counter()
    got = [v_pgamma(1, g) for g in (0.01, 0.05, 0.1)]
    secs = time.perf_counter() - t0
    want = [0.003, 0.017, 0.033]
    ok = all(abs(a - b) <= 0.0005 for a, b in zip(got, want)) and secs < 1.0
    verdict("v_{1,g} values", ok, f"{[round(g, 5) for g in got]} vs {want}, {secs * 1e3:.2f} ms")


def test_srs_full_scale_beta1(srs_runs, verdict):
    res = srs_runs["1"]
    vr = res.row(0.01, "ybar_II")["varred"]
    vr_reg = res.row(0.01, "ybar_II_reg")["varred"]
    cov = [r["coverage"] for r in res.rows]
    ve = [r["mean_ve"] / r["var"] - 1 for r in res.rows]
    ok = abs(vr - 50) <= 5 and abs(vr_reg) <= 5 and all(abs(c - 95) <= 2 for c in cov) and \
        all(abs(e) <= 0.15 for e in ve)
    verdict("full-scale beta = 1", ok,
            f"VarRed ybar {vr:.1f} (50 +/- 5), VarRed reg {vr_reg:.1f} (0 +/- 5), coverage "
            f"{min(cov):.1f}..{max(cov):.1f}, VE/var - 1 in [{min(ve):+.3f}, {max(ve):+.3f}]")


def test_srs_full_scale_beta2(srs_runs, verdict):
    vr = srs_runs["2"].row(0.01, "ybar_II")["varred"]
    verdict("full-scale beta = 2", abs(vr - 76) <= 5, f"VarRed ybar {vr:.1f} (76 +/- 5)")


def test_empirical_matches_asymptotic_reduction(srs_runs, verdict):
    cells = []
    for tag, res in srs_runs.items():
        cfg = res.config
        n_I, n_II = (d["n"] for d in cfg.phase_designs)
        r2 = population_r2(cfg.population.build())
        for g in (0.01, 0.05, 0.1):
            theory = theoretical_varred(n_II / n_I, n_I / cfg.population.n_units, 1, g, r2)
            cells.append((tag, g, res.row(g, "ybar_II")["varred"], theory))
    worst = max(abs(e - t) for *_, e, t in cells)
    detail = ", ".join(f"b{tag}/g{g:g}: {e:.1f} vs {t:.1f}" for tag, g, e, t in cells)
    verdict("asymptotic VarRed, nine cells", worst <= 5, f"max |diff| {worst:.2f}; {detail}")


def test_syg_properties(verdict):
    pop = generate_synthetic(17, 2000, 1.0)
    rng = np.random.default_rng(18)
    ht = np.empty((10_000, 2))
    syg = np.empty((10_000, 2))
    for k in range(10_000):
        c = draw_tprs(rng, pop, SRSDesign(200), SRSDesign(30), BalanceCriterion())
        a, b = vhat_general(c, style="ht"), vhat_general(c, style="syg")
        ht[k] = a.v2, a.v3
        syg[k] = b.v2, b.v3
    nonneg = bool(np.all(syg >= 0))
    ratio = syg.mean(axis=0) / ht.mean(axis=0)
    ok = nonneg and bool(np.all(np.abs(ratio - 1) <= 0.05))
    verdict("squared-contrast variance forms", ok,
            f"min SYG (V2, V3) = ({syg[:, 0].min():.3g}, {syg[:, 1].min():.3g}), mean ratio SYG/HT = "
            f"({ratio[0]:.6f}, {ratio[1]:.6f}) over 10^4 draws")


def test_limit_law_checks(verdict):
    rng = np.random.default_rng(19)
    rel = {}
    for p, g in ((1, 0.01), (1, 0.1), (2, 0.05), (3, 1.0), (5, 10.0)):
        d = sample_L(rng, p, g, 1_000_000)
        rel[(p, g)] = d.var() / v_pgamma(p, g) - 1
    ks = stats.kstest(sample_L(rng, 1, 0.05, 1_000_000), lambda t: L_cdf_p1(t, 0.05)).statistic
    ok = all(abs(r) <= 0.02 for r in rel.values()) and ks < 0.005
    verdict("truncated limit law", ok,
            f"max |var/v - 1| = {max(abs(r) for r in rel.values()):.4f}, KS (p = 1) = {ks:.5f}")


def test_negative_weights_reduced(srs_runs, verdict):
    res = srs_runs["2"]
    free = res.scenario(math.inf).negative_weight_replicates()
    rej = res.scenario(0.01).negative_weight_replicates()
    ok = rej <= free and (free < 10 or rej < free)
    verdict("negative regression weights", ok, f"{rej} replicates with rejection vs {free} without (1000 matched)")


def test_estimating_equations(ee_run, verdict):
    pop = generate_synthetic(1, 100_000, 1.0)
    rng = np.random.default_rng(20)
    worst = 0.0
    for g in (math.inf, 0.01, 0.1):
        c = draw_tprs(rng, pop, SRSDesign(5000), SRSDesign(200), BalanceCriterion(g))
        xi = solve_ee(c, EstimatingFunction("mean")).xi_hat[0]
        m = pi_star_mean(c, c.y(1))
        worst = max(worst, abs(xi - m) / abs(m))
    cov = ee_run.row(0.05, "median_ee")["coverage"]
    ok = worst <= 1e-10 and abs(cov - 95) <= 2
    verdict("estimating equations", ok, f"mean-kind rel. diff {worst:.1e}, median CI coverage {cov:.1f}% (1000 reps)")


def test_three_phase_study(three_phase_run, verdict):
    rows = {r["estimator"]: r for r in three_phase_run.rows}
    three = ("simple3", "reg3", "rej3", "rej-reg3")
    cov = {k: rows[k]["coverage"] for k in three}
    var = {k: rows[k]["var"] for k in ("rej-reg3", "reg3", "simple3")}
    ok = all(abs(c - 95) <= 2 for c in cov.values()) and var["rej-reg3"] <= var["reg3"] <= var["simple3"]
    verdict("three-phase study", ok,
            "coverage " + ", ".join(f"{k} {c:.1f}" for k, c in cov.items()) +
            "; var " + " <= ".join(f"{k} {v:.2f}" for k, v in var.items()))
