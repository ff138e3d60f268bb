"""Mahalanobis balance statistics and the two-phase, tiered and three-phase rejection loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import spd_cholesky, spd_solve
from .designs import PreparedDesign, SRSDesign
from .errors import (
    AcceptanceFailure,
    CollinearityError,
    ConfigurationError,
    DesignError,
    SingularNormalizerError,
    ZeroVarianceError,
)
from .estimators import fit_regression, weighted_mean
from .ldist import chisq_cdf, chisq_quantile
from .population import FinitePopulation


def parse_gamma(value, p: int) -> float:
    """Threshold from a number, 'inf', or 'chisq_quantile:q' (the q-quantile of chi^2_p)."""
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "+inf", "infinity", "none"):
            return math.inf
        if v.startswith("chisq_quantile:"):
            return chisq_quantile(p, float(v.split(":", 1)[1]))
        value = float(v)
    g = float(value)
    if not g > 0:
        raise ConfigurationError(f"gamma_sq must be positive, got {value}")
    return g


@dataclass(frozen=True)
class BalanceCriterion:
    """Rejection rule on covariate balance.

    ``columns`` selects balance covariates from the frame's x block (None = all).
    ``tiers`` partitions those columns into ordered blocks with weights ``tier_weights``;
    a candidate passes iff Q[k] < gamma_sq / w_k for every tier.
    ``normalization`` is 'auto', 'srs' (SRS-phase form) or 'general'.
    """

    gamma_sq: float | str = math.inf
    columns: tuple | None = None
    tiers: tuple | None = None
    tier_weights: tuple | None = None
    max_draws: int | None = None
    normalization: str = "auto"
    ridge: float = 0.0

    def __post_init__(self):
        if self.normalization not in ("auto", "srs", "general"):
            raise ConfigurationError(f"unknown normalization {self.normalization!r}")
        if not isinstance(self.gamma_sq, str) and not float(self.gamma_sq) > 0:
            raise ConfigurationError("gamma_sq must be positive")
        if self.tiers is not None:
            tiers = tuple(tuple(t) for t in self.tiers)
            object.__setattr__(self, "tiers", tiers)
            w = self.tier_weights or (1.0,) * len(tiers)
            if len(w) != len(tiers) or any(not float(x) > 0 for x in w):
                raise ConfigurationError("need one positive weight per tier")
            object.__setattr__(self, "tier_weights", tuple(float(x) for x in w))
        if self.ridge < 0:
            raise ConfigurationError("ridge must be nonnegative")

    def threshold(self, p: int) -> float:
        return parse_gamma(self.gamma_sq, p)

    def tier_blocks(self, names: tuple) -> list[list[int]] | None:
        """Tier partition as positions into the balance columns."""
        if self.tiers is None:
            return None
        blocks = []
        for t in self.tiers:
            blocks.append([c if isinstance(c, (int, np.integer)) else names.index(c) for c in t])
        flat = sorted(c for b in blocks for c in b)
        if flat != list(range(len(names))):
            raise ConfigurationError("tiers must be disjoint and cover all balance columns")
        return blocks

    def default_max_draws(self, p: int, tier_sizes=None) -> int:
        g = self.threshold(p)
        if math.isinf(g):
            return 1
        if tier_sizes:
            prob = math.prod(chisq_cdf(pk, g / w) for pk, w in zip(tier_sizes, self.tier_weights))
        else:
            prob = chisq_cdf(p, g)
        if prob <= 0:
            return 10**9
        return int(max(10**6, 50 * math.ceil(1.0 / prob)))


def mahalanobis_q(diff, normalizer) -> float:
    """diff^T normalizer^{-1} diff via Cholesky; singular normalizers raise."""
    d = np.atleast_1d(np.asarray(diff, dtype=float))
    lower = spd_cholesky(normalizer, SingularNormalizerError, "balance normalizer")
    y = np.linalg.solve(lower, d)
    return float(y @ y)


def phase2_diff_covariance_srs(x_parent, n_inner: int) -> np.ndarray:
    """(1/n_II - 1/n_I) times the parent covariance (divisor n_I - 1)."""
    x = np.asarray(x_parent, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    m = x.shape[0]
    if n_inner >= m:
        raise ZeroVarianceError("phase-II census: balance criterion undefined")
    if m < 2:
        raise ZeroVarianceError("phase-I sample too small")
    return (1.0 / n_inner - 1.0 / m) * np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])


def phase2_diff_covariance_general(x_parent, outer_pi, inner_pi, pairwise, n_population: int) -> np.ndarray:
    """Conditional covariance of the inner pi*-weighted mean given the parent sample.

    N^{-2} sum_i sum_j (pi_ij - pi_i pi_j)/(pi*_i pi*_j) (x_i - xbar)(x_j - xbar)^T over the
    parent, with xbar the Hajek mean under the outer weights and pi* = outer_pi * inner_pi.
    """
    x = np.asarray(x_parent, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    outer_pi = np.asarray(outer_pi, dtype=float)
    pstar = outer_pi * np.asarray(inner_pi, dtype=float)
    if np.any(pstar <= 0):
        raise DesignError("zero combined inclusion probability in the parent sample")
    xbar = weighted_mean(1.0 / outer_pi, x)
    a = (x - xbar) / pstar[:, None]
    v = pairwise.delta_form(np.arange(x.shape[0]), a) / float(n_population) ** 2
    return 0.5 * (v + v.T)


def gram_schmidt_blocks(x, tiers, metric):
    """Block Gram-Schmidt of balance covariates under the bilinear form ``metric`` (p x p).

    Returns (g, T, perm): columns are reordered by tier (``perm``) and g = x[:, perm] @ T.T,
    where g[k] = x[k] - V_{k,prev} V_{prev,prev}^{-1} x[prev]. Each tier block of T V T^T is
    checked for positive definiteness; failure names the tier (1-based).
    """
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    perm = [c for t in tiers for c in t]
    v = np.asarray(metric, dtype=float)[np.ix_(perm, perm)]
    p = len(perm)
    t_mat = np.eye(p)
    start = 0
    for k, tier in enumerate(tiers):
        cur = slice(start, start + len(tier))
        if start > 0:
            prev = slice(0, start)
            proj = spd_solve(v[prev, prev], v[prev, cur], CollinearityError, f"tier blocks before tier {k + 1}",
                             tier=k)
            t_mat[cur, prev] = -proj.T
        row = t_mat[cur]
        spd_cholesky(row @ v @ row.T, CollinearityError, f"tier {k + 1} block",
                     scale=float(np.max(np.diag(v[cur, cur]))), tier=k + 1)
        start += len(tier)
    return x[:, perm] @ t_mat.T, t_mat, perm


@dataclass(frozen=True)
class Balancer:
    """Balance test for candidate inner samples of one fixed parent sample."""

    x_parent: np.ndarray
    inner_weight: np.ndarray  # 1/pi* for every parent unit
    center: np.ndarray  # outer Hajek mean of the balance covariates
    normalizer: np.ndarray
    factors: tuple  # (column positions, inverse lower factor, threshold) per tier
    convention: str

    def q(self, idx) -> tuple:
        """Per-tier balance statistics for an inner sample given by parent positions."""
        w = self.inner_weight[idx]
        d = w @ self.x_parent[idx] / w.sum() - self.center
        out = []
        for cols, inv_lower, _ in self.factors:
            y = inv_lower @ d[cols]
            out.append(float(y @ y))
        return tuple(out)

    def accepts(self, qs: tuple) -> bool:
        return all(q < thr for q, (_, _, thr) in zip(qs, self.factors))


def build_balancer(x_parent, outer_pi, prepared: PreparedDesign, n_population: int, gamma_sq: float,
                   convention: str, n_inner_fixed: int | None = None, tiers=None, tier_weights=None,
                   ridge: float = 0.0) -> Balancer:
    x = np.asarray(x_parent, dtype=float)
    outer_pi = np.asarray(outer_pi, dtype=float)
    if convention == "srs":
        if n_inner_fixed is None:
            raise ConfigurationError("SRS normalization needs a fixed inner sample size")
        v = phase2_diff_covariance_srs(x, n_inner_fixed)
    else:
        v = phase2_diff_covariance_general(x, outer_pi, prepared.first_order, prepared.pairwise, n_population)
    if ridge:
        v = v + ridge * np.eye(v.shape[0])
    if not np.any(v):
        raise ZeroVarianceError("balance normalizer is identically zero")
    if tiers is None:
        lower = spd_cholesky(v, SingularNormalizerError, "balance normalizer")
        factors = ((np.arange(v.shape[0]), np.linalg.inv(lower), gamma_sq),)
        t_mat, perm = None, None
    else:
        _, t_mat, perm = gram_schmidt_blocks(x[:1], tiers, v)
        vg = t_mat @ v[np.ix_(perm, perm)] @ t_mat.T
        factors = []
        start = 0
        for tier, w in zip(tiers, tier_weights):
            cols = np.arange(start, start + len(tier))
            raw = v[np.ix_(perm, perm)][np.ix_(cols, cols)]
            lower = spd_cholesky(vg[np.ix_(cols, cols)], CollinearityError, "tier block",
                                 scale=float(np.max(np.diag(raw))), tier=len(factors) + 1)
            factors.append((cols, np.linalg.inv(lower), gamma_sq / w))
            start += len(tier)
        factors = tuple(factors)
        # balance on g = T x[perm]; the diff transforms the same way
        x = x[:, perm] @ t_mat.T
    with np.errstate(divide="ignore"):
        inner_weight = 1.0 / (outer_pi * prepared.first_order)
    center = weighted_mean(1.0 / outer_pi, x)
    return Balancer(x, inner_weight, center, v, factors, convention)


def _rejective_draw(rng, prepared: PreparedDesign, balancer: Balancer | None, max_draws: int):
    """Redraw until the balancer accepts; returns (sample, q tuple, attempts)."""
    if balancer is None:
        return prepared.draw(rng), None, 1
    for attempt in range(1, max_draws + 1):
        s = prepared.draw(rng)
        if s.n == 0:
            continue
        qs = balancer.q(s.indices)
        if balancer.accepts(qs):
            return s, qs, attempt
    raise AcceptanceFailure(
        f"no balanced sample in {max_draws} draws (empirical acceptance rate 0/{max_draws})",
        attempts=max_draws, accepted_rate=0.0)


@dataclass(frozen=True)
class PhaseChain:
    """Nested accepted samples with combined inclusion probabilities and rejection diagnostics.

    ``samples[k].indices`` are positions within the phase-(k-1) sample (the frame for k = 0);
    ``units[k]`` are frame positions and ``pi_star[k]`` the product of conditional inclusion
    probabilities through phase k for the phase-k units.
    """

    pop: FinitePopulation
    samples: tuple
    units: tuple
    pi_star: tuple
    x_cols: tuple
    gamma_sq: tuple = ()
    q_stats: tuple = ()
    draws_attempted: tuple = ()
    balancers: tuple = ()
    a: np.ndarray | None = None
    beta_zx: np.ndarray | None = None
    z_cols: tuple | None = None
    design_tags: tuple = field(default=())

    @property
    def n_phases(self) -> int:
        return len(self.samples)

    @property
    def n_population(self) -> int:
        return self.pop.n_units

    @property
    def p(self) -> int:
        return len(self.x_cols)

    def sizes(self) -> tuple:
        return tuple(s.n for s in self.samples)

    def positions(self, phase: int, within: int) -> np.ndarray:
        """Positions of the phase-``phase`` units inside the phase-``within`` sample (-1 = frame)."""
        if within < -1 or within >= phase:
            raise ConfigurationError("within must name an outer phase")
        pos = np.arange(self.samples[phase].n)
        for k in range(phase, within, -1):
            pos = self.samples[k].indices[pos]
        return pos

    def cond_pi(self, design_phase: int, unit_phase: int) -> np.ndarray:
        """Conditional inclusion probabilities of the phase-``design_phase`` design for phase-``unit_phase`` units."""
        return self.samples[design_phase].first_order[self.positions(unit_phase, design_phase - 1)]

    def joint(self, design_phase: int, unit_phase: int) -> np.ndarray:
        """Matrix of joint inclusion probabilities of one phase's design over a later phase's units."""
        s = self.samples[design_phase]
        return s.pairwise.matrix(self.positions(unit_phase, design_phase - 1))

    def _resolve(self, cols) -> list[int]:
        if cols is None:
            return list(self.x_cols)
        names = self.pop.x_names
        return [c if isinstance(c, (int, np.integer)) else names.index(c) for c in
                ([cols] if isinstance(cols, (str, int)) else cols)]

    def covariates(self, phase: int, cols=None) -> np.ndarray:
        return self.pop.x[np.ix_(self.units[phase], self._resolve(cols))]

    def y(self, phase: int = -1) -> np.ndarray:
        return self.pop.require_y()[self.units[phase]]

    def c_block(self, phase: int, cols=None) -> np.ndarray:
        """(x, a) on the phase-``phase`` units (phase >= 1)."""
        if self.a is None:
            raise ConfigurationError("chain has no derived phase-II covariate")
        a = self.a[self.positions(phase, 1)] if phase > 1 else self.a
        return np.hstack([self.covariates(phase, cols), a])

    def replay_q(self, phase: int) -> tuple | None:
        """Recompute the accepted balance statistic of a phase from the stored samples."""
        b = self.balancers[phase]
        return None if b is None else b.q(self.samples[phase].indices)


def _resolve_cols(pop: FinitePopulation, columns) -> tuple:
    if columns is None:
        return tuple(range(pop.p))
    cols = [columns] if isinstance(columns, (str, int)) else list(columns)
    out = []
    for c in cols:
        if isinstance(c, (int, np.integer)):
            out.append(int(c))
        elif c in pop.x_names:
            out.append(pop.x_names.index(c))
        else:
            raise ConfigurationError(f"balance column {c!r} is not in the x block")
    return tuple(out)


def prepare_on(design, pop: FinitePopulation, parent_units: np.ndarray) -> PreparedDesign:
    """Bind a design spec to the parent sample, pulling size or stratum columns from the frame."""
    sizes = strata = None
    if getattr(design, "size_col", None) is not None and getattr(design, "probs", None) is None:
        sizes = pop.columns(design.size_col)[parent_units].sum(axis=1)
    if getattr(design, "stratum_col", None) is not None:
        strata = pop.columns(design.stratum_col)[parent_units, 0]
    return design.prepare(parent_units.size, sizes=sizes, strata=strata)


def _convention(criterion: BalanceCriterion, outer_srs: bool, inner) -> str:
    if criterion.normalization != "auto":
        return criterion.normalization
    return "srs" if outer_srs and isinstance(inner, SRSDesign) else "general"


def _balance_phase(rng, pop, parent_units, outer_pi, design, criterion, cols, outer_srs):
    prepared = prepare_on(design, pop, parent_units)
    p = len(cols)
    gamma = criterion.threshold(p)
    if math.isinf(gamma):
        s = prepared.draw(rng)
        return s, None, 1, None, prepared
    names = tuple(pop.x_names[c] for c in cols)
    tiers = criterion.tier_blocks(names)
    conv = _convention(criterion, outer_srs, design)
    balancer = build_balancer(pop.x[np.ix_(parent_units, cols)], outer_pi, prepared, pop.n_units, gamma, conv,
                              n_inner_fixed=getattr(design, "n", None), tiers=tiers,
                              tier_weights=criterion.tier_weights, ridge=criterion.ridge)
    max_draws = criterion.max_draws or criterion.default_max_draws(p, [len(t) for t in tiers] if tiers else None)
    s, qs, attempts = _rejective_draw(rng, prepared, balancer, max_draws)
    return s, qs, attempts, balancer, prepared


def draw_tprs(rng, pop: FinitePopulation, design_I, design_II, criterion: BalanceCriterion) -> PhaseChain:
    """Two-phase rejective sampling: phase I once, phase II redrawn until balanced on x."""
    cols = _resolve_cols(pop, criterion.columns)
    prep_I = prepare_on(design_I, pop, np.arange(pop.n_units))
    a_sample = prep_I.draw(rng)
    a_units = a_sample.indices
    if a_units.size == 0:
        raise DesignError("empty phase-I sample")
    b, qs, attempts, balancer, _ = _balance_phase(rng, pop, a_units, a_sample.pi, design_II, criterion, cols,
                                                  isinstance(design_I, SRSDesign))
    units_b = a_units[b.indices]
    return PhaseChain(
        pop=pop,
        samples=(a_sample, b),
        units=(a_units, units_b),
        pi_star=(a_sample.pi, a_sample.pi[b.indices] * b.pi),
        x_cols=cols,
        gamma_sq=(criterion.threshold(len(cols)),),
        q_stats=(None, qs),
        draws_attempted=(1, attempts),
        balancers=(None, balancer),
        design_tags=(a_sample.design_tag, b.design_tag),
    )


def draw_sequential_tprs(rng, pop: FinitePopulation, design_I, design_II, criterion: BalanceCriterion) -> PhaseChain:
    """Tiered TPRS: every Gram-Schmidt tier must pass its own threshold gamma^2 / w_k."""
    if criterion.tiers is None:
        raise ConfigurationError("sequential rejective sampling needs tiers")
    return draw_tprs(rng, pop, design_I, design_II, criterion)


def derive_phase2_covariate(chain: PhaseChain, z=None):
    """a = z - zbar_II - (x - xbar_II)^T beta_zx,II over the phase-II sample (pi*-weighted fit).

    ``z`` defaults to the frame's z block on the phase-II units. Returns (a, beta_zx).
    """
    if z is None:
        if chain.pop.z is None:
            raise ConfigurationError("frame has no z block")
        z = chain.pop.z[chain.units[1]]
    z = np.asarray(z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    fit = fit_regression(1.0 / chain.pi_star[1], chain.covariates(1), z)
    a = z - fit.center_y - (chain.covariates(1) - fit.center_x) @ fit.coefficients
    return a, fit.coefficients


def draw_three_phase(rng, pop: FinitePopulation, design_I, design_II, design_III,
                     criterion_1: BalanceCriterion, criterion_2: BalanceCriterion, z_cols=None) -> PhaseChain:
    """Three-phase rejective sampling.

    Phase II is balanced on x (threshold of ``criterion_1``); phase III on c = (x, a) with a the
    residual of z on x from the phase-II sample, under the general normalizer over B.
    """
    if pop.z is None:
        raise ConfigurationError("three-phase sampling needs a z block")
    chain2 = draw_tprs(rng, pop, design_I, design_II, criterion_1)
    b_units = chain2.units[1]
    if b_units.size == 0:
        raise DesignError("empty phase-II sample")
    z = pop.z[b_units] if z_cols is None else pop.columns(z_cols)[b_units]
    a, beta_zx = derive_phase2_covariate(chain2, z)
    c = np.hstack([chain2.covariates(1), a])
    prepared = prepare_on(design_III, pop, b_units)
    p_c = c.shape[1]
    gamma2 = criterion_2.threshold(p_c)
    balancer = None
    if math.isinf(gamma2):
        s3, qs, attempts = prepared.draw(rng), None, 1
    else:
        try:
            balancer = build_balancer(c, chain2.pi_star[1], prepared, pop.n_units, gamma2, "general",
                                      ridge=criterion_2.ridge)
        except (SingularNormalizerError, ZeroVarianceError) as e:
            raise CollinearityError(f"phase-II normalizer of c = (x, a) is singular: {e}") from e
        max_draws = criterion_2.max_draws or criterion_2.default_max_draws(p_c)
        s3, qs, attempts = _rejective_draw(rng, prepared, balancer, max_draws)
    units_c = b_units[s3.indices]
    return PhaseChain(
        pop=pop,
        samples=chain2.samples + (s3,),
        units=chain2.units + (units_c,),
        pi_star=chain2.pi_star + (chain2.pi_star[1][s3.indices] * s3.pi,),
        x_cols=chain2.x_cols,
        gamma_sq=chain2.gamma_sq + (gamma2,),
        q_stats=chain2.q_stats + (qs,),
        draws_attempted=chain2.draws_attempted + (attempts,),
        balancers=chain2.balancers + (balancer,),
        a=a,
        beta_zx=beta_zx,
        z_cols=tuple(range(pop.q)) if z_cols is None else tuple(z_cols),
        design_tags=chain2.design_tags + (s3.design_tag,),
    )


def truncate_chain(chain: PhaseChain, n_phases: int) -> PhaseChain:
    """The outer ``n_phases`` phases of a chain (e.g. the two-phase part of a three-phase chain)."""
    k = n_phases
    return PhaseChain(
        pop=chain.pop,
        samples=chain.samples[:k],
        units=chain.units[:k],
        pi_star=chain.pi_star[:k],
        x_cols=chain.x_cols,
        gamma_sq=chain.gamma_sq[:k - 1],
        q_stats=chain.q_stats[:k],
        draws_attempted=chain.draws_attempted[:k],
        balancers=chain.balancers[:k],
        a=chain.a if k >= 2 else None,
        beta_zx=chain.beta_zx if k >= 2 else None,
        z_cols=chain.z_cols,
        design_tags=chain.design_tags[:k],
    )
