"""Truncated-ball limiting laws.

L_{p,g} = chi_{p,g} * S * Gamma_p^{1/2}, where chi^2_{p,g} is chi^2_p truncated to
[0, g], S is a random sign and Gamma_p ~ Beta(1/2, (p-1)/2) (Gamma_1 = 1).
Its variance is v_{p,g} = P(chi^2_{p+2} <= g) / P(chi^2_p <= g).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.stats import norm

from .errors import ConfigurationError, DegenerateDistributionError

# Below this acceptance probability the truncated chi-square is drawn by inversion.
REJECTION_MIN_ACCEPT = 0.05
DEFAULT_MIXTURE_DRAWS = 1_000_000


def chisq_cdf(dof: float, x: float | np.ndarray) -> float | np.ndarray:
    """P(chi^2_dof <= x) as the regularized lower incomplete gamma P(dof/2, x/2)."""
    if dof <= 0:
        raise ConfigurationError(f"dof must be positive, got {dof}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ConfigurationError("chisq_cdf needs x >= 0")
    out = special.gammainc(0.5 * dof, 0.5 * x)
    return float(out) if out.ndim == 0 else out


def chisq_quantile(dof: float, q: float) -> float:
    """Inverse of chisq_cdf in x."""
    if not 0.0 <= q <= 1.0:
        raise ConfigurationError(f"quantile level must be in [0, 1], got {q}")
    return float(2.0 * special.gammaincinv(0.5 * dof, q))


def v_pgamma(p: int, gamma_sq: float) -> float:
    """Variance factor v_{p,g} of the truncated-ball law; 1 when g is infinite."""
    if p < 1:
        raise ConfigurationError(f"p must be >= 1, got {p}")
    if gamma_sq <= 0:
        raise ConfigurationError(f"gamma_sq must be positive, got {gamma_sq}")
    if math.isinf(gamma_sq):
        return 1.0
    num = special.gammainc(0.5 * (p + 2), 0.5 * gamma_sq)
    den = special.gammainc(0.5 * p, 0.5 * gamma_sq)
    if den == 0.0:
        # small-threshold limit of the ratio
        return gamma_sq / (p + 2)
    return float(min(num / den, 1.0))


def _truncated_chisq(rng: np.random.Generator, p: int, gamma_sq: float, size: int) -> np.ndarray:
    if math.isinf(gamma_sq):
        return rng.chisquare(p, size)
    accept = chisq_cdf(p, gamma_sq)
    if accept < REJECTION_MIN_ACCEPT:
        u = rng.random(size) * accept
        return 2.0 * special.gammaincinv(0.5 * p, u)
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        cand = rng.chisquare(p, int(need / accept * 1.1) + 16)
        cand = cand[cand <= gamma_sq][:need]
        out[filled:filled + cand.size] = cand
        filled += cand.size
    return out


def sample_L(rng: np.random.Generator, p: int, gamma_sq: float, size: int | None = None):
    """Draw from L_{p,gamma_sq}. Returns a float when size is None."""
    if p < 1:
        raise ConfigurationError(f"p must be >= 1, got {p}")
    if gamma_sq <= 0:
        raise ConfigurationError(f"gamma_sq must be positive, got {gamma_sq}")
    n = 1 if size is None else int(size)
    chi2 = _truncated_chisq(rng, p, gamma_sq, n)
    sign = 2.0 * rng.integers(0, 2, n) - 1.0
    if p == 1:
        out = np.sqrt(chi2) * sign
    else:
        out = np.sqrt(chi2 * rng.beta(0.5, 0.5 * (p - 1), n)) * sign
    return float(out[0]) if size is None else out


@dataclass(frozen=True)
class MixtureSpec:
    """Sum of independent scaled L and standard normal terms.

    ``l_terms`` holds (scale, p, gamma_sq) triples and ``normal_terms`` scales.
    """

    l_terms: tuple = field(default_factory=tuple)
    normal_terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "l_terms", tuple((float(s), int(p), float(g)) for s, p, g in self.l_terms))
        object.__setattr__(self, "normal_terms", tuple(float(s) for s in self.normal_terms))
        for s, p, g in self.l_terms:
            if s < 0 or p < 1 or g <= 0:
                raise ConfigurationError(f"bad L term {(s, p, g)}")
        if any(s < 0 for s in self.normal_terms):
            raise ConfigurationError("normal scales must be nonnegative")

    @property
    def variance(self) -> float:
        return sum(s * s * v_pgamma(p, g) for s, p, g in self.l_terms) + sum(s * s for s in self.normal_terms)

    def reduced(self):
        """Drop zero terms; infinite-threshold L terms and all normals merge into one normal scale."""
        l_terms = tuple((s, p, g) for s, p, g in self.l_terms if s > 0 and not math.isinf(g))
        normal_var = sum(s * s for s in self.normal_terms)
        normal_var += sum(s * s for s, p, g in self.l_terms if s > 0 and math.isinf(g))
        return l_terms, math.sqrt(normal_var)


@lru_cache(maxsize=32)
def _base_draws(structure: tuple, with_normal: bool, n_draws: int, seed: int) -> np.ndarray:
    """Unit-scale draws, one row per L term plus an optional final normal row."""
    rng = np.random.default_rng(seed)
    rows = [sample_L(rng, p, g, n_draws) for p, g in structure]
    if with_normal:
        rows.append(rng.standard_normal(n_draws))
    out = np.vstack(rows)
    out.setflags(write=False)
    return out


def mixture_draws(spec: MixtureSpec, n_draws: int = DEFAULT_MIXTURE_DRAWS, seed: int = 0) -> np.ndarray:
    """Monte Carlo draws of the mixture, deterministic in (spec, n_draws, seed)."""
    l_terms, normal_scale = spec.reduced()
    if not l_terms and normal_scale == 0.0:
        raise DegenerateDistributionError("all mixture scales are zero")
    structure = tuple((p, g) for _, p, g in l_terms)
    base = _base_draws(structure, normal_scale > 0, int(n_draws), int(seed))
    scales = np.array([s for s, _, _ in l_terms] + ([normal_scale] if normal_scale > 0 else []))
    return scales @ base


def mixture_quantile(spec: MixtureSpec, alpha, n_draws: int = DEFAULT_MIXTURE_DRAWS, seed: int = 0):
    """Monte Carlo alpha-quantile(s) of the mixture law."""
    a = np.asarray(alpha, dtype=float)
    if np.any((a <= 0) | (a >= 1)):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if n_draws < 100_000:
        raise ConfigurationError("mixture quantiles need at least 1e5 draws")
    q = np.quantile(mixture_draws(spec, n_draws, seed), a)
    return float(q) if q.ndim == 0 else q


def L_cdf_p1(t, gamma_sq: float):
    """Closed-form CDF of L_{1,g}: a standard normal truncated to [-g^{1/2}, g^{1/2}]."""
    g = math.sqrt(gamma_sq)
    t = np.clip(np.asarray(t, dtype=float), -g, g)
    mass = 2.0 * norm.cdf(g) - 1.0
    return (norm.cdf(t) - norm.cdf(-g)) / mass
