"""Variance estimators and confidence intervals for the pi* and regression estimators.

A variance estimate is a list of components, each tagged with its limiting law: a
balance component follows a scaled L_{p,g} law (variance factor v_{p,g}), the others
are normal. The estimate is sum(value * factor) / n, and the CI quantiles come from
the matching mixture.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .balance import phase2_diff_covariance_general
from .designs import Pairwise
from .errors import CapabilityError, ConfigurationError, InsufficientDataError
from .estimators import fit_regression, weighted_mean
from .ldist import DEFAULT_MIXTURE_DRAWS, MixtureSpec, mixture_quantile, v_pgamma

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VarianceTerm:
    label: str
    value: float
    dim: int = 0  # 0 = normal component, otherwise the L dimension p
    gamma_sq: float = math.inf
    v: float | None = None  # explicit variance factor, overrides v_{p,g}

    @property
    def is_balance(self) -> bool:
        return self.dim > 0

    @property
    def factor(self) -> float:
        if not self.is_balance:
            return 1.0
        return v_pgamma(self.dim, self.gamma_sq) if self.v is None else self.v


@dataclass(frozen=True)
class VarianceComponents:
    """Components of an estimated variance; ``variance`` is sum(value * factor) / n."""

    terms: tuple
    n: float
    style: str
    kind: str = "mean"
    extra: dict = field(default_factory=dict)

    def __getitem__(self, label: str) -> float:
        for t in self.terms:
            if t.label == label:
                return t.value
        raise KeyError(label)

    @property
    def v1(self) -> float:
        return self["V1"]

    @property
    def v2(self) -> float:
        return self["V2"]

    @property
    def v3(self) -> float:
        return self["V3"]

    @property
    def variance(self) -> float:
        return sum(t.value * t.factor for t in self.terms) / self.n

    def regression(self) -> "VarianceComponents":
        """The regression-estimator variance: balance components dropped."""
        return VarianceComponents(tuple(t for t in self.terms if not t.is_balance), self.n, self.style, "reg",
                                  dict(self.extra))

    def mixture(self) -> MixtureSpec:
        """Mixture law of (estimate - target) implied by the components."""
        root = lambda v: math.sqrt(max(v, 0.0) / self.n)  # noqa: E731
        return MixtureSpec(
            l_terms=tuple((root(t.value), t.dim, t.gamma_sq) for t in self.terms if t.is_balance),
            normal_terms=tuple(root(t.value) for t in self.terms if not t.is_balance),
        )

    @property
    def has_truncation(self) -> bool:
        return any(t.is_balance and not math.isinf(t.gamma_sq) and t.value > 0 for t in self.terms)


# -- SRS closed forms ------------------------------------------------------------------------------

def _srs_parts(chain, fit=None, x_cols=None, values=None):
    y = chain.y(1) if values is None else np.asarray(values, dtype=float)
    x = chain.covariates(1, x_cols)
    n, p = x.shape
    if n <= p + 1:
        raise InsufficientDataError(f"n_II = {n} leaves no residual degrees of freedom for p = {p}")
    if fit is None:
        fit = fit_regression(1.0 / chain.pi_star[1], x, y)
    beta = np.atleast_1d(fit.coefficients)
    vxx = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    e = y - x @ beta
    vee = float(np.sum((e - e.mean()) ** 2) / (n - p - 1))
    bvb = float(beta @ vxx @ beta)
    vyy = bvb + vee
    n_I, N = chain.samples[0].n, chain.n_population
    f, f0 = n / n_I, n_I / N
    return n, p, f, f0, bvb, vee, vyy


def vhat_srs_mean(chain, fit=None, v_pg: float | None = None, x_cols=None, values=None) -> VarianceComponents:
    """Closed-form variance of ybar_II under SRS phases.

    n^{-1}[(1 - f){1 - (1 - v) R^2} + f(1 - f0)] Vyy with f = n_II/n_I, f0 = n_I/N,
    Vyy = beta^T Vxx beta + Vee and Vee on n_II - p - 1 degrees of freedom.
    """
    n, p, f, f0, bvb, vee, vyy = _srs_parts(chain, fit, x_cols, values)
    gamma = chain.gamma_sq[0] if chain.gamma_sq else math.inf
    terms = (
        VarianceTerm("V1", (1 - f) * bvb, p, gamma),
        VarianceTerm("V2", (1 - f) * vee),
        VarianceTerm("V3", f * (1 - f0) * vyy),
    )
    if v_pg is not None:
        terms = (VarianceTerm("V1", (1 - f) * bvb, p, gamma, v=float(v_pg)),) + terms[1:]
    extra = {"Vyy": vyy, "Vee": vee, "R2": bvb / vyy if vyy > 0 else 0.0}
    return VarianceComponents(terms, n, "srs", "mean", extra)


def vhat_srs_reg(chain, fit=None, x_cols=None, values=None) -> VarianceComponents:
    """n^{-1}{f(1 - f0) Vyy + (1 - f) Vee} for the two-phase regression estimator."""
    return vhat_srs_mean(chain, fit, x_cols=x_cols, values=values).regression()


# -- general designs -------------------------------------------------------------------------------

def double_sum(delta, joint, u, q, style):
    """HT: sum delta/joint (u_i/q_i)(u_j/q_j)^T; SYG: -1/2 sum delta/joint (u_i/q_i - u_j/q_j)^{(x)2}.

    ``u`` may be a vector (scalar result) or an n x k block (k x k result).
    """
    k = delta / joint
    a = np.asarray(u, dtype=float)
    a = (a.T / q).T
    if style == "ht":
        out = a.T @ k @ a
    elif style == "syg":
        row = k.sum(axis=1)
        out = a.T @ k @ a - (a.T * row) @ a
    else:
        raise ConfigurationError(f"unknown variance style {style!r}")
    return float(out) if np.ndim(out) == 0 else out


def _joints(chain, design_phase, unit_phase, approx_joint):
    """Joint inclusion matrix and first-order probabilities of one phase's design over later units."""
    s = chain.samples[design_phase]
    pi = chain.cond_pi(design_phase, unit_phase)
    if s.pairwise is None and not approx_joint:
        raise CapabilityError("joint inclusion probabilities unavailable; enable approx_joint")
    if approx_joint:
        log.warning("approximating joint inclusion probabilities by products")
        m = np.outer(pi, pi)
        np.fill_diagonal(m, pi)
        return m, pi
    return chain.joint(design_phase, unit_phase), pi


def _pairwise(sample, approx_joint):
    """The sample's joint-probability provider, or independence when approximating."""
    if sample.pairwise is not None and not approx_joint:
        return sample.pairwise
    if not approx_joint:
        raise CapabilityError("joint inclusion probabilities unavailable; enable approx_joint")
    return Pairwise(sample.first_order)


def vxx_phase1(chain, x_cols=None, approx_joint: bool = False) -> np.ndarray:
    """Conditional covariance of the phase-II mean of x given the phase-I sample."""
    a_sample, b_sample = chain.samples[0], chain.samples[1]
    return phase2_diff_covariance_general(chain.covariates(0, x_cols), a_sample.pi, b_sample.first_order,
                                          _pairwise(b_sample, approx_joint), chain.n_population)


def vhat_general(chain, values=None, style: str = "ht", x_cols=None, approx_joint: bool = False,
                 residuals=None) -> VarianceComponents:
    """V1 = n beta^T V_xx,I beta with the phase-II (V2) and phase-I (V3) double sums over B.

    ``style`` is 'ht' (Horvitz-Thompson type) or 'syg' (squared contrasts).
    """
    y = chain.y(1) if values is None else np.asarray(values, dtype=float)
    x = chain.covariates(1, x_cols)
    n, p = x.shape
    N = chain.n_population
    pstar = chain.pi_star[1]
    w = 1.0 / pstar
    fit = fit_regression(w, x, y)
    e = y - x @ fit.coefficients if residuals is None else np.asarray(residuals, dtype=float)
    e = e - weighted_mean(w, e)
    yc = y - weighted_mean(w, y)
    p2, pi2 = _joints(chain, 1, 1, approx_joint)
    p1, pi1 = _joints(chain, 0, 1, approx_joint)
    d2 = p2 - np.outer(pi2, pi2)
    d1 = p1 - np.outer(pi1, pi1)
    v2 = n / N**2 * double_sum(d2, p2, e, pstar, style)
    v3 = n / N**2 * double_sum(d1, p1 * p2, yc, pi1, style)
    beta = np.atleast_1d(fit.coefficients)
    v1 = n * float(beta @ vxx_phase1(chain, x_cols, approx_joint) @ beta)
    gamma = chain.gamma_sq[0] if chain.gamma_sq else math.inf
    terms = (VarianceTerm("V1", v1, p, gamma), VarianceTerm("V2", v2), VarianceTerm("V3", v3))
    return VarianceComponents(terms, n, style, "mean", {"beta": beta})


def vhat_three_phase(chain, values=None, style: str = "ht", x_cols=None, approx_joint: bool = False
                     ) -> VarianceComponents:
    """Five-component variance of ybar_III (mean scale, n = 1); ``.regression()`` gives ybar_III,reg."""
    if chain.n_phases < 3:
        raise ConfigurationError("three-phase variance needs a three-phase chain")
    y = chain.y(2) if values is None else np.asarray(values, dtype=float)
    N = chain.n_population
    x3 = chain.covariates(2, x_cols)
    c3 = chain.c_block(2, x_cols)
    p1, p2 = x3.shape[1], c3.shape[1] - x3.shape[1]
    ps3 = chain.pi_star[2]
    ps2 = chain.pi_star[1][chain.positions(2, 1)]
    w3 = 1.0 / ps3
    fit_yx = fit_regression(w3, x3, y)
    fit_yc = fit_regression(w3, c3, y)
    e_yx = y - x3 @ fit_yx.coefficients
    e_yc = y - c3 @ fit_yc.coefficients
    e_yx = e_yx - weighted_mean(w3, e_yx)
    e_yc = e_yc - weighted_mean(w3, e_yc)
    yc = y - weighted_mean(w3, y)
    j1, pi1 = _joints(chain, 0, 2, approx_joint)
    j2, pi2 = _joints(chain, 1, 2, approx_joint)
    j3, pi3 = _joints(chain, 2, 2, approx_joint)
    d1 = j1 - np.outer(pi1, pi1)
    d2 = j2 - np.outer(pi2, pi2)
    d3 = j3 - np.outer(pi3, pi3)
    v_yy0 = double_sum(d1, j1 * j2 * j3, yc, pi1, style) / N**2
    v_eyx = double_sum(d2, j2 * j3, e_yx, ps2, style) / N**2
    v_eyc = double_sum(d3, j3, e_yc, ps3, style) / N**2
    s3 = chain.samples[2]
    c2 = chain.c_block(1, x_cols)
    v_cc = phase2_diff_covariance_general(c2, chain.pi_star[1], s3.first_order, _pairwise(s3, approx_joint), N)
    b_yc = np.atleast_1d(fit_yc.coefficients)
    b_yx = np.atleast_1d(fit_yx.coefficients)
    g1 = chain.gamma_sq[0] if len(chain.gamma_sq) > 0 else math.inf
    g2 = chain.gamma_sq[1] if len(chain.gamma_sq) > 1 else math.inf
    terms = (
        VarianceTerm("V1", float(b_yc @ v_cc @ b_yc), p1 + p2, g2),
        VarianceTerm("V2", v_eyc),
        VarianceTerm("V3", float(b_yx @ vxx_phase1(chain, x_cols, approx_joint) @ b_yx), p1, g1),
        VarianceTerm("V4", v_eyx),
        VarianceTerm("V5", v_yy0),
    )
    return VarianceComponents(terms, 1.0, style, "mean", {"beta_yc": b_yc, "beta_yx": b_yx})


def confidence_interval(estimate: float, components: VarianceComponents, alpha: float = 0.05,
                        quantile_source: str = "auto", n_draws: int = DEFAULT_MIXTURE_DRAWS, seed: int = 0):
    """(1 - alpha) interval (estimate - nu_{1-alpha/2}, estimate - nu_{alpha/2}).

    nu are quantiles of the component mixture ('mixture') or of a normal with the estimated
    variance ('normal'). 'auto' uses the mixture only when a truncated balance term is present.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha == 1.0:
        return float(estimate), float(estimate)
    if quantile_source not in ("auto", "mixture", "normal"):
        raise ConfigurationError(f"unknown quantile source {quantile_source!r}")
    use_mixture = quantile_source == "mixture" or (quantile_source == "auto" and components.has_truncation)
    if use_mixture and components.has_truncation:
        lo_q, hi_q = mixture_quantile(components.mixture(), [alpha / 2, 1 - alpha / 2], n_draws, seed)
        return float(estimate - hi_q), float(estimate - lo_q)
    half = norm.ppf(1 - alpha / 2) * math.sqrt(max(components.variance, 0.0))
    return float(estimate - half), float(estimate + half)
