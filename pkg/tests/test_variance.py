import dataclasses
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from rejective import (BalanceCriterion, FinitePopulation, PoissonDesign, SRSDesign, VarianceComponents,
                       VarianceTerm, confidence_interval, draw_three_phase, draw_tprs, generate_api_like,
                       generate_synthetic, mixture_quantile, v_pgamma, vhat_general, vhat_srs_mean, vhat_srs_reg,
                       vhat_three_phase)
from rejective.errors import CapabilityError, ConfigurationError, InsufficientDataError


def _srs_oracle(x, y, n_I, N, v):
    """Closed form evaluated from scratch with numpy's OLS."""
    n = y.size
    X = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    beta = coef[1:]
    e = y - X @ coef
    vee = e @ e / (n - x.shape[1] - 1)
    vyy = beta @ np.atleast_2d(np.cov(x, rowvar=False)) @ beta + vee
    r2 = (vyy - vee) / vyy
    f, f0 = n / n_I, n_I / N
    return ((1 - f) * (1 - (1 - v) * r2) + f * (1 - f0)) * vyy / n, vyy, vee


@pytest.mark.parametrize("gamma", [math.inf, 0.1, 0.01])
def test_srs_closed_form_against_oracle(small_pop, gamma):
    c = draw_tprs(np.random.default_rng(1), small_pop, SRSDesign(400), SRSDesign(50), BalanceCriterion(gamma))
    vc = vhat_srs_mean(c)
    want, vyy, vee = _srs_oracle(c.covariates(1), c.y(1), 400, small_pop.n_units, v_pgamma(1, gamma))
    assert vc.variance == pytest.approx(want, rel=1e-10)
    assert vc.extra["Vyy"] == pytest.approx(vyy, rel=1e-10)
    assert vc.extra["Vee"] == pytest.approx(vee, rel=1e-10)


def test_srs_no_rejection_identity(chain):
    c = dataclasses.replace(chain, gamma_sq=(math.inf,))
    vc = vhat_srs_mean(c)
    n, n_I, N = c.samples[1].n, c.samples[0].n, c.n_population
    # v = 1 collapses to (1 - n_II/N) Vyy / n_II
    assert vc.variance == pytest.approx((1 - n / N) * vc.extra["Vyy"] / n, rel=1e-12)
    assert vhat_srs_mean(chain, v_pg=1.0).variance == pytest.approx(vc.variance, rel=1e-12)
    assert n_I == 300


def test_srs_zero_r2_has_no_gain(srs_chain):
    x = np.tile([-1.0, 1.0], 100)
    y = np.tile([2.0, 2.0, 5.0, 5.0], 50)
    c = srs_chain(FinitePopulation(x=x, y=y), np.arange(200), np.arange(20), gamma_sq=0.5)
    vc = vhat_srs_mean(c)
    assert vc.extra["R2"] == pytest.approx(0.0, abs=1e-14)
    assert vc.variance == pytest.approx(vhat_srs_mean(c, v_pg=1.0).variance, rel=1e-12)


def test_vyy_decomposition(chain):
    vc = vhat_srs_mean(chain)
    n, p = chain.samples[1].n, 1
    s2 = np.var(chain.y(1), ddof=1)
    sse = vc.extra["Vee"] * (n - p - 1)
    assert vc.extra["Vyy"] - s2 == pytest.approx(sse * p / ((n - p - 1) * (n - 1)), rel=1e-9)


def test_srs_reg_forms(small_pop, srs_chain):
    rng = np.random.default_rng(2)
    c = srs_chain(small_pop, np.arange(small_pop.n_units), np.sort(rng.choice(small_pop.n_units, 40, replace=False)))
    vc = vhat_srs_reg(c)
    n, N = 40, small_pop.n_units
    assert vc.variance == pytest.approx((1 - n / N) * vhat_srs_mean(c).extra["Vee"] / n, rel=1e-12)
    pop = FinitePopulation(x=small_pop.x, y=3 - 2 * small_pop.x[:, 0])
    c = draw_tprs(rng, pop, SRSDesign(300), SRSDesign(30), BalanceCriterion(0.1))
    vm = vhat_srs_mean(c)
    assert vm.extra["Vee"] < 1e-20
    assert vhat_srs_reg(c).variance == pytest.approx(30 / 300 * (1 - 300 / N) * vm.extra["Vyy"] / 30, rel=1e-9)


def test_srs_df_error(small_pop, srs_chain):
    c = srs_chain(small_pop, np.arange(10), np.array([0, 1]))
    with pytest.raises(InsufficientDataError):
        vhat_srs_mean(c)


@given(seed=st.integers(0, 5000), a=st.floats(-4, 4).filter(lambda v: abs(v) > 1e-2), b=st.floats(-10, 10))
def test_scale_equivariance(small_pop, seed, a, b):
    c = draw_tprs(np.random.default_rng(seed), small_pop, SRSDesign(150), SRSDesign(20), BalanceCriterion(0.3))
    y = c.y(1)
    for f in (lambda v: vhat_srs_mean(c, values=v).variance, lambda v: vhat_srs_reg(c, values=v).variance,
              lambda v: vhat_general(c, v, "ht").variance, lambda v: vhat_general(c, v, "syg").variance):
        assert f(a * y + b) == pytest.approx(a * a * f(y), rel=1e-8, abs=1e-12)


def test_syg_nonnegative_and_constant_y(small_pop):
    rng = np.random.default_rng(7)
    for _ in range(300):
        c = draw_tprs(rng, small_pop, SRSDesign(100), SRSDesign(15), BalanceCriterion())
        vc = vhat_general(c, style="syg")
        assert vc.v2 >= -1e-15 and vc.v3 >= -1e-15
    for style in ("ht", "syg"):
        vc = vhat_general(c, np.full(15, 2.5), style)
        assert vc.v3 == pytest.approx(0.0, abs=1e-14)
        assert vc.v1 == pytest.approx(0.0, abs=1e-14)


def test_general_close_to_srs_closed_form(small_pop):
    c = draw_tprs(np.random.default_rng(3), small_pop, SRSDesign(600), SRSDesign(150), BalanceCriterion(0.05))
    g = vhat_general(c).variance
    s = vhat_srs_mean(c).variance
    assert g == pytest.approx(s, rel=0.1)


def test_general_no_rejection_identity(chain):
    c = dataclasses.replace(chain, gamma_sq=(math.inf,))
    vc = vhat_general(c)
    assert vc.variance == pytest.approx((vc.v1 + vc.v2 + vc.v3) / vc.n, rel=1e-13)
    vr = vc.regression()
    assert vr.variance == pytest.approx((vc.v2 + vc.v3) / vc.n, rel=1e-13)


def test_capability_error_and_approximation(chain, caplog):
    a, b = chain.samples
    c = dataclasses.replace(chain, samples=(a, dataclasses.replace(b, pairwise=None)))
    with pytest.raises(CapabilityError):
        vhat_general(c)
    with caplog.at_level(logging.WARNING):
        vc = vhat_general(c, approx_joint=True)
    assert "approximating" in caplog.text
    assert np.isfinite(vc.variance) and vc.variance > 0


def test_three_phase_reductions():
    pop = generate_api_like(2, 3000)
    rng = np.random.default_rng(4)
    des = (SRSDesign(1000), PoissonDesign(300, "x"), PoissonDesign(80, "z"))
    c = draw_three_phase(rng, pop, *des, BalanceCriterion(), BalanceCriterion())
    vc = vhat_three_phase(c)
    vals = [t.value for t in vc.terms]
    assert all(np.isfinite(vals))
    assert vc.variance == pytest.approx(sum(vals), rel=1e-13)
    assert vc.regression().variance == pytest.approx(vc["V2"] + vc["V4"] + vc["V5"], rel=1e-13)
    # y exactly linear in c = (x, a): both residual terms vanish
    y_lin = 1 + c.c_block(2) @ np.array([2.0] + [0.5] * (c.c_block(2).shape[1] - 1))
    vl = vhat_three_phase(c, y_lin)
    scale = abs(vl["V1"]) + abs(vl["V5"])
    assert abs(vl["V2"]) < 1e-10 * scale
    c2 = draw_three_phase(rng, pop, *des, BalanceCriterion(0.1), BalanceCriterion("chisq_quantile:0.05"))
    v2 = vhat_three_phase(c2)
    assert [t.factor < 1 for t in v2.terms] == [True, False, True, False, False]


def test_consistency_improves_with_n(small_pop):
    pop = generate_synthetic(21, 10_000, 1.0)
    target = np.var(pop.y, ddof=1)
    rng = np.random.default_rng(8)
    meds = []
    for n in (50, 200, 800):
        errs = [abs(vhat_srs_mean(draw_tprs(rng, pop, SRSDesign(2000), SRSDesign(n),
                                            BalanceCriterion(0.5))).extra["Vyy"] - target)
                for _ in range(60)]
        meds.append(np.median(errs))
    assert meds[0] > meds[1] > meds[2]


def test_confidence_interval_forms(chain):
    vc = dataclasses.replace(vhat_srs_mean(chain), terms=vhat_srs_mean(chain).terms)
    est = 1.7
    assert confidence_interval(est, vc, alpha=1.0) == (est, est)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            confidence_interval(est, vc, alpha=bad)
    lo, hi = confidence_interval(est, vc, quantile_source="normal")
    half = norm.ppf(0.975) * math.sqrt(vc.variance)
    assert (lo, hi) == pytest.approx((est - half, est + half), rel=1e-12)
    lo, hi = confidence_interval(est, vc, n_draws=200_000)
    q = mixture_quantile(vc.mixture(), [0.025, 0.975], 200_000, 0)
    assert (lo, hi) == pytest.approx((est - q[1], est - q[0]), rel=1e-12)
    assert lo <= est <= hi


def test_infinite_threshold_interval_is_normal():
    vc = VarianceComponents((VarianceTerm("V1", 2.0, 1, math.inf), VarianceTerm("V2", 1.0),
                             VarianceTerm("V3", 0.5)), 10, "srs")
    assert not vc.has_truncation
    lo, hi = confidence_interval(0.0, vc)
    assert -lo == pytest.approx(hi) and hi == pytest.approx(norm.ppf(0.975) * math.sqrt(0.35), rel=1e-12)
    lo_m, hi_m = confidence_interval(0.0, vc, quantile_source="mixture")
    assert (lo_m, hi_m) == pytest.approx((lo, hi), rel=1e-12)


def test_syg_versus_ht_beyond_srs():
    from rejective import StratifiedDesign
    base = generate_synthetic(6, 3000, 1.0)
    lab = (base.x[:, 0] > 0).astype(float)
    pop = FinitePopulation(x=np.column_stack([base.x[:, 0], lab, base.x[:, 0] + 2.0]), y=base.y,
                           x_names=("x", "s", "size"))
    rng = np.random.default_rng(10)
    # fixed takes per stratum: the forms still agree exactly
    for _ in range(20):
        c = draw_tprs(rng, pop, SRSDesign(400), StratifiedDesign({0: 10, 1: 30}, stratum_col="s"),
                      BalanceCriterion(columns=("x",)))
        ht, syg = vhat_general(c, style="ht", x_cols=("x",)), vhat_general(c, style="syg", x_cols=("x",))
        assert syg.v3 == pytest.approx(ht.v3, rel=1e-9)
        assert syg.v2 >= 0
    # random phase-II size: the phase-I double sums differ
    diffs = []
    for _ in range(20):
        c = draw_tprs(rng, pop, SRSDesign(400), PoissonDesign(40, "size"), BalanceCriterion(columns=("x",)))
        ht, syg = vhat_general(c, style="ht", x_cols=("x",)), vhat_general(c, style="syg", x_cols=("x",))
        diffs.append(abs(syg.v3 - ht.v3) / abs(ht.v3))
    assert max(diffs) > 1e-3
