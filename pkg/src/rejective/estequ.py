"""Parameters defined by estimating equations, solved on the innermost phase-II sample.

The estimate solves the pi*-weighted Hajek score mean sbar(xi) = 0. The variance is the
sandwich G (V1s v + V2s + V3s) G^T / n with G = Gamma_s^{-1}, where the V^s blocks are the
two-phase components evaluated on the score s_i(xi_hat).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, EstimationError, NonIdentificationError, SolverError
from .estimators import fit_regression, weighted_mean
from .variance import VarianceComponents, VarianceTerm, _joints, double_sum, vxx_phase1

log = logging.getLogger(__name__)

TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 30


@dataclass(frozen=True)
class EstimatingFunction:
    """Score s(y; xi) of dimension q.

    Built-ins: 'mean', 'proportion_below_c' (params c), 'variance' (q = 2: mean and variance
    with divisor n), 'quantile_tau' (params tau). 'custom' takes ``score(y, xi) -> n x q`` and
    optionally ``jac(y, xi) -> n x q x q`` and ``start``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    score_fn: Callable | None = None
    jac_fn: Callable | None = None

    def __post_init__(self):
        kinds = ("mean", "proportion_below_c", "variance", "quantile_tau", "custom")
        if self.kind not in kinds:
            raise ConfigurationError(f"unknown estimating function {self.kind!r}")
        if self.kind == "quantile_tau":
            tau = self.params.get("tau")
            if tau is None or not 0.0 < float(tau) < 1.0:
                raise ConfigurationError("quantile needs tau in (0, 1)")
        if self.kind == "proportion_below_c" and "c" not in self.params:
            raise ConfigurationError("proportion needs a cutoff c")
        if self.kind == "custom" and self.score_fn is None:
            raise ConfigurationError("custom estimating function needs a score")

    @classmethod
    def parse(cls, text: str) -> "EstimatingFunction":
        """From 'mean', 'variance', 'proportion:c=1.5' or 'quantile:tau=0.5'."""
        name, _, rest = text.partition(":")
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            k, _, v = item.partition("=")
            params[k.strip()] = float(v)
        kind = {"mean": "mean", "variance": "variance", "proportion": "proportion_below_c",
                "quantile": "quantile_tau"}.get(name.strip())
        if kind is None:
            raise ConfigurationError(f"unknown parameter {text!r}")
        return cls(kind, params)

    @property
    def q(self) -> int:
        if self.kind == "variance":
            return 2
        if self.kind == "custom":
            return int(self.params.get("q", 1))
        return 1

    @property
    def differentiable(self) -> bool:
        return self.kind != "quantile_tau"

    def score(self, y, xi) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if self.kind == "mean":
            s = y - xi[0]
        elif self.kind == "proportion_below_c":
            s = (y < self.params["c"]).astype(float) - xi[0]
        elif self.kind == "variance":
            r = y - xi[0]
            return np.column_stack([r, r * r - xi[1]])
        elif self.kind == "quantile_tau":
            s = (y <= xi[0]).astype(float) - self.params["tau"]
        else:
            out = np.asarray(self.score_fn(y, xi), dtype=float)
            return out.reshape(y.size, -1)
        return s[:, None]

    def jacobian(self, y, xi) -> np.ndarray | None:
        """Per-unit ds/dxi (n x q x q), or None when not available analytically."""
        y = np.asarray(y, dtype=float)
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        n = y.size
        if self.kind in ("mean", "proportion_below_c"):
            return np.full((n, 1, 1), -1.0)
        if self.kind == "variance":
            j = np.zeros((n, 2, 2))
            j[:, 0, 0] = -1.0
            j[:, 1, 0] = -2.0 * (y - xi[0])
            j[:, 1, 1] = -1.0
            return j
        if self.kind == "custom" and self.jac_fn is not None:
            return np.asarray(self.jac_fn(y, xi), dtype=float).reshape(n, self.q, self.q)
        return None

    def start(self, y, w) -> np.ndarray:
        if self.kind == "mean":
            return np.array([weighted_mean(w, y)])
        if self.kind == "proportion_below_c":
            return np.array([weighted_mean(w, (y < self.params["c"]).astype(float))])
        if self.kind == "variance":
            m = weighted_mean(w, y)
            return np.array([m, weighted_mean(w, (y - m) ** 2)])
        return np.atleast_1d(np.asarray(self.params.get("start", np.zeros(self.q)), dtype=float))


@dataclass(frozen=True)
class EEFit:
    """Solution of the estimating equation with the pieces of its variance."""

    xi_hat: np.ndarray
    gamma_s_hat: np.ndarray
    b_hat: np.ndarray
    residual_block: np.ndarray
    scores: np.ndarray
    func: EstimatingFunction
    iterations: int = 0
    bandwidth: float | None = None


def _mean_score(func, y, w, xi):
    return weighted_mean(w, func.score(y, xi))


def _mean_jacobian(func, y, w, xi):
    j = func.jacobian(y, xi)
    if j is not None:
        return np.tensordot(w, j, axes=1) / w.sum()
    q = xi.size
    base = _mean_score(func, y, w, xi)
    out = np.empty((q, q))
    for k in range(q):
        h = 1e-6 * max(1.0, abs(xi[k]))
        step = xi.copy()
        step[k] += h
        out[:, k] = (_mean_score(func, y, w, step) - base) / h
    return out


def _newton(func, y, w):
    xi = func.start(y, w)
    s = _mean_score(func, y, w, xi)
    norm = float(np.linalg.norm(s))
    trace = [(xi.copy(), norm)]
    for it in range(1, MAX_ITER + 1):
        if norm <= TOL:
            return xi, it - 1
        jac = _mean_jacobian(func, y, w, xi)
        try:
            step = np.linalg.solve(jac, s)
        except np.linalg.LinAlgError:
            raise SolverError("singular Jacobian in Newton iteration", trace) from None
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = xi - t * step
            s_new = _mean_score(func, y, w, cand)
            n_new = float(np.linalg.norm(s_new))
            if n_new < norm or n_new <= TOL:
                break
            t *= 0.5
        else:
            if np.linalg.norm(step) <= TOL * (1.0 + np.linalg.norm(xi)):
                return xi, it
            raise SolverError("line search failed to decrease the score", trace)
        xi, s, norm = cand, s_new, n_new
        trace.append((xi.copy(), norm))
    if norm <= TOL:
        return xi, MAX_ITER
    raise SolverError(f"no convergence in {MAX_ITER} iterations (|sbar| = {norm:.3e})", trace)


def weighted_quantile(y, w, tau: float) -> float:
    """inf{xi : sum w 1(y <= xi) / sum w >= tau} by a scan of the weighted order statistics."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.size == 0:
        raise EstimationError("empty sample")
    order = np.argsort(y, kind="stable")
    cdf = np.cumsum(w[order]) / w.sum()
    k = int(np.searchsorted(cdf, tau - 1e-12, side="left"))
    return float(y[order][min(k, y.size - 1)])


def _weighted_ecdf(y, w, t):
    return float(w[y <= t].sum() / w.sum())


def solve_ee(chain, func: EstimatingFunction, values=None, phase: int = -1, x_cols=None) -> EEFit:
    """Solve sbar(xi) = 0 on the phase-``phase`` sample with weights 1/pi*."""
    y = chain.y(phase) if values is None else np.asarray(values, dtype=float)
    if y.size == 0:
        raise EstimationError("empty sample")
    w = 1.0 / chain.pi_star[phase]
    bandwidth = None
    if func.kind == "quantile_tau":
        xi = np.array([weighted_quantile(y, w, func.params["tau"])])
        iters = 0
        m = weighted_mean(w, y)
        sd = math.sqrt(max(weighted_mean(w, (y - m) ** 2), 0.0))
        bandwidth = 1.06 * sd * y.size ** (-0.2)
        log.debug("quantile density bandwidth h = %.6g (n = %d)", bandwidth, y.size)
        if bandwidth > 0:
            dens = (_weighted_ecdf(y, w, xi[0] + bandwidth) - _weighted_ecdf(y, w, xi[0] - bandwidth)) / (2 * bandwidth)
        else:
            dens = 0.0
        gamma = np.array([[dens]])
    else:
        xi, iters = _newton(func, y, w)
        gamma = _mean_jacobian(func, y, w, xi)
    scores = func.score(y, xi)
    x = chain.covariates(phase, x_cols)
    fit = fit_regression(w, x, scores)
    b_hat = np.asarray(fit.coefficients).reshape(x.shape[1], -1)
    resid = scores - x @ b_hat
    return EEFit(xi, gamma, b_hat, resid, scores, func, iters, bandwidth)


def ee_covariance(chain, fit: EEFit, v_pg: float | None = None, style: str = "ht", x_cols=None,
                  approx_joint: bool = False):
    """Return (V1s, V2s, V3s, G) with G = Gamma_s^{-1}; all blocks are q x q, n_II-scaled."""
    if chain.n_phases != 2:
        raise ConfigurationError("estimating-equation variance is implemented for two-phase chains")
    n = chain.samples[1].n
    N = chain.n_population
    pstar = chain.pi_star[1]
    w = 1.0 / pstar
    e = fit.residual_block - weighted_mean(w, fit.residual_block)
    s = fit.scores - weighted_mean(w, fit.scores)
    p2, pi2 = _joints(chain, 1, 1, approx_joint)
    p1, pi1 = _joints(chain, 0, 1, approx_joint)
    v2 = n / N**2 * np.atleast_2d(double_sum(p2 - np.outer(pi2, pi2), p2, e, pstar, style))
    v3 = n / N**2 * np.atleast_2d(double_sum(p1 - np.outer(pi1, pi1), p1 * p2, s, pi1, style))
    v1 = n * fit.b_hat.T @ vxx_phase1(chain, x_cols, approx_joint) @ fit.b_hat
    gamma = np.atleast_2d(fit.gamma_s_hat)
    if not np.all(np.isfinite(gamma)) or abs(np.linalg.det(gamma)) < 1e-300 or np.linalg.cond(gamma) > 1e12:
        raise NonIdentificationError("Gamma_s is singular; parameter not identified")
    g = np.linalg.inv(gamma)
    return v1, v2, v3, g


def ee_variance(chain, fit: EEFit, v_pg: float | None = None, style: str = "ht", component: int = 0,
                x_cols=None, approx_joint: bool = False) -> VarianceComponents:
    """Sandwich variance components for one coordinate of xi_hat."""
    v1, v2, v3, g = ee_covariance(chain, fit, v_pg, style, x_cols, approx_joint)
    k = component
    sand = lambda m: float((g @ m @ g.T)[k, k])  # noqa: E731
    p = fit.b_hat.shape[0]
    gamma_sq = chain.gamma_sq[0] if chain.gamma_sq else math.inf
    terms = (
        VarianceTerm("V1", sand(v1), p, gamma_sq, v=v_pg),
        VarianceTerm("V2", sand(v2)),
        VarianceTerm("V3", sand(v3)),
    )
    return VarianceComponents(terms, chain.samples[1].n, style, "mean",
                              {"gamma_s": fit.gamma_s_hat, "bandwidth": fit.bandwidth})
