"""Point estimators: Hajek and pi* means, REE, two- and three-phase regression estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import spd_solve
from .errors import CollinearityError, ConfigurationError, EstimationError, InsufficientDataError


def weighted_mean(w: np.ndarray, values: np.ndarray):
    """Hajek mean sum w u / sum w (vectorised over columns)."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise EstimationError("empty sample")
    tot = w.sum()
    if not tot > 0:
        raise EstimationError("weights sum to zero")
    return (w @ np.asarray(values, dtype=float)) / tot


def hajek_mean(sample, values) -> float:
    """Hajek mean of ``values`` (given on the sampled units) with weights 1/pi."""
    pi = sample.pi if hasattr(sample, "pi") else np.asarray(sample, dtype=float)
    if np.any(pi <= 0):
        raise EstimationError("inclusion probabilities must be positive")
    return weighted_mean(1.0 / pi, values)


def pi_star_mean(chain, values, denominator: str = "hajek", phase: int = -1):
    """Double-expansion mean over the phase-``phase`` sample.

    ``denominator='hajek'`` divides by sum 1/pi*, ``'N'`` by the frame size.
    """
    if chain.n_phases < 2:
        raise ConfigurationError("pi_star_mean needs at least two phases")
    ps = chain.pi_star[phase]
    values = np.asarray(values, dtype=float)
    if ps.size == 0:
        raise EstimationError("inner sample is empty")
    if denominator == "hajek":
        return weighted_mean(1.0 / ps, values)
    if denominator == "N":
        return (1.0 / ps) @ values / chain.n_population
    raise ConfigurationError(f"unknown denominator {denominator!r}")


def ree(chain, strata, values) -> float:
    """Reweighted expansion estimator.

    ``strata`` are stratum labels for every frame unit; ``values`` are on the phase-II sample.
    Phase-I stratum totals (1/pi_I expansion) multiply pi*-weighted phase-II stratum means.
    """
    strata = np.asarray(strata)
    values = np.asarray(values, dtype=float)
    lab_I = strata[chain.units[0]]
    lab_II = strata[chain.units[1]]
    w_I = 1.0 / chain.samples[0].pi
    w_II = 1.0 / chain.pi_star[1]
    total = 0.0
    for h in np.unique(lab_I):
        in_b = lab_II == h
        if not np.any(in_b):
            raise EstimationError(f"stratum {h!r} has phase-I mass but no phase-II units")
        total += w_I[lab_I == h].sum() * (w_II[in_b] @ values[in_b]) / w_II[in_b].sum()
    return total / chain.n_population


@dataclass(frozen=True)
class RegressionFit:
    """Weighted least-squares fit with Hajek-weighted centres."""

    coefficients: np.ndarray
    center_x: np.ndarray
    center_y: np.ndarray | float
    weights_used: np.ndarray
    gram: np.ndarray = field(repr=False)

    def residuals(self, x, y):
        """y - x^T beta (no intercept; centre separately when needed)."""
        return np.asarray(y, dtype=float) - np.asarray(x, dtype=float) @ self.coefficients


def fit_regression(weights, x, y) -> RegressionFit:
    """Solve sum w (x - xbar)(x - xbar)^T b = sum w (x - xbar)(y - ybar); y may have several columns."""
    w = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if n <= p:
        raise InsufficientDataError(f"need more than {p} units for a {p}-covariate fit, got {n}")
    xbar = weighted_mean(w, x)
    ybar = weighted_mean(w, y)
    xc = x - xbar
    gram = (xc * w[:, None]).T @ xc
    cross = (xc * w[:, None]).T @ (y - ybar)
    beta = spd_solve(gram, cross, CollinearityError, "weighted regression Gram matrix")
    return RegressionFit(beta, xbar, ybar, w, gram)


def _x(chain, phase, cols):
    return chain.covariates(phase, cols)


def regression_estimate_two_phase(chain, values, x_cols=None):
    """ybar_II - (xbar_II - xbar_I)^T beta_II with pi*-weighted Hajek means."""
    values = np.asarray(values, dtype=float)
    w = 1.0 / chain.pi_star[1]
    fit = fit_regression(w, _x(chain, 1, x_cols), values)
    xbar_I = hajek_mean(chain.samples[0], _x(chain, 0, x_cols))
    est = fit.center_y - (fit.center_x - xbar_I) @ fit.coefficients
    return float(est) if np.ndim(est) == 0 else est, fit


def regression_estimate_three_phase(chain, values, x_cols=None):
    """ybar_III + (xbar_I - xbar_III, -abar_III)^T beta_yc,III."""
    if chain.n_phases < 3 or chain.a is None:
        raise ConfigurationError("three-phase regression needs a phase-III chain with the derived a block")
    values = np.asarray(values, dtype=float)
    c3 = chain.c_block(2, x_cols)
    w = 1.0 / chain.pi_star[2]
    fit = fit_regression(w, c3, values)
    x_I = hajek_mean(chain.samples[0], _x(chain, 0, x_cols))
    p1 = x_I.size
    shift = np.concatenate([x_I - fit.center_x[:p1], -fit.center_x[p1:]])
    est = fit.center_y + shift @ fit.coefficients
    return float(est) if np.ndim(est) == 0 else est, fit


def regression_weights(chain, x_cols=None):
    """Unit weights omega on the phase-II sample with sum omega = 1 and sum omega y = ybar_II,reg.

    omega_i = w_i / sum w * [1 + (xbar_I - xbar_II)^T M^{-1} (x_i - xbar_II)], where M is the
    weighted covariance of x over the phase-II sample. Returns (omega, negative_count).
    """
    w = 1.0 / chain.pi_star[1]
    x2 = _x(chain, 1, x_cols)
    xbar_II = weighted_mean(w, x2)
    xbar_I = hajek_mean(chain.samples[0], _x(chain, 0, x_cols))
    xc = x2 - xbar_II
    m = (xc * w[:, None]).T @ xc / w.sum()
    h = spd_solve(m, xbar_I - xbar_II, CollinearityError, "weighted covariance")
    omega = w / w.sum() * (1.0 + xc @ h)
    return omega, int(np.count_nonzero(omega < 0))


@dataclass
class EstimateReport:
    """Point estimate with variance, interval and diagnostics."""

    estimate: float
    variance: float
    ci_low: float
    ci_high: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def covers(self, target: float) -> bool:
        return self.ci_low <= target <= self.ci_high
