"""Sampling designs with closed-form first- and second-order inclusion probabilities.

Every design here has a *grouped-exchangeable* joint structure: units are split
into groups (one group for SRS, one per stratum, none for Poisson); two distinct
units of the same group g are co-included with probability c_g, units in different
groups independently. This gives closed forms for all pairwise double sums.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DesignError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pairwise:
    """Joint inclusion probabilities pi_ij over a parent of size M."""

    pi: np.ndarray
    group: np.ndarray | None = None  # group id per parent unit, None = independent units
    within: np.ndarray | None = None  # c_g per group

    def __call__(self, i: int, j: int) -> float:
        if i == j:
            return float(self.pi[i])
        if self.group is not None and self.group[i] == self.group[j]:
            return float(self.within[self.group[i]])
        return float(self.pi[i] * self.pi[j])

    def matrix(self, idx) -> np.ndarray:
        """pi_ij for all pairs in ``idx`` (n x n), diagonal pi_i."""
        idx = np.asarray(idx, dtype=np.intp)
        p = self.pi[idx]
        out = np.outer(p, p)
        if self.group is not None:
            g = self.group[idx]
            same = g[:, None] == g[None, :]
            out[same] = np.broadcast_to(self.within[g][:, None], out.shape)[same]
        np.fill_diagonal(out, p)
        return out

    def delta_matrix(self, idx) -> np.ndarray:
        """pi_ij - pi_i pi_j over ``idx``."""
        idx = np.asarray(idx, dtype=np.intp)
        p = self.pi[idx]
        return self.matrix(idx) - np.outer(p, p)

    def delta_form(self, idx, a, b=None) -> np.ndarray:
        """sum_{i,j in idx} (pi_ij - pi_i pi_j) a_i b_j^T in O(n) work.

        ``a`` and ``b`` are n x k and n x l arrays of values on ``idx``.
        """
        idx = np.asarray(idx, dtype=np.intp)
        a = np.asarray(a, dtype=float)
        a = a[:, None] if a.ndim == 1 else a
        b = a if b is None else (np.asarray(b, dtype=float)[:, None] if np.ndim(b) == 1 else np.asarray(b, float))
        p = self.pi[idx]
        if self.group is None:
            return (a * (p * (1.0 - p))[:, None]).T @ b
        g = self.group[idx]
        c = self.within[g]
        out = (a * (p - c)[:, None]).T @ b
        labels, inv = np.unique(g, return_inverse=True)
        k = labels.size
        sa = np.zeros((k, a.shape[1]))
        sb = np.zeros((k, b.shape[1]))
        pa = np.zeros((k, a.shape[1]))
        pb = np.zeros((k, b.shape[1]))
        np.add.at(sa, inv, a)
        np.add.at(sb, inv, b)
        np.add.at(pa, inv, a * p[:, None])
        np.add.at(pb, inv, b * p[:, None])
        cg = self.within[labels]
        return out + (sa * cg[:, None]).T @ sb - pa.T @ pb


@dataclass(frozen=True)
class DrawnSample:
    """Positions of sampled units within the parent, plus the parent's design probabilities."""

    indices: np.ndarray
    first_order: np.ndarray
    pairwise: Pairwise
    design_tag: str
    clamped: int = 0

    @property
    def n(self) -> int:
        return int(self.indices.size)

    @property
    def parent_size(self) -> int:
        return int(self.first_order.size)

    @property
    def pi(self) -> np.ndarray:
        return self.first_order[self.indices]


@dataclass(frozen=True)
class StratumPlan:
    """Stratum code per parent unit (0..H-1) and per-stratum take r_h."""

    stratum_of: np.ndarray
    take: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.stratum_of, dtype=np.intp)
        t = np.asarray(self.take, dtype=np.intp)
        if s.size and (s.min() < 0 or s.max() >= t.size):
            raise DesignError("stratum codes must index into take")
        object.__setattr__(self, "stratum_of", s)
        object.__setattr__(self, "take", t)

    @classmethod
    def from_labels(cls, labels, take: dict) -> "StratumPlan":
        keys = sorted(take, key=str)
        code = {_label(k): h for h, k in enumerate(keys)}
        try:
            s = np.array([code[_label(v)] for v in np.asarray(labels).tolist()], dtype=np.intp)
        except KeyError as e:
            raise DesignError(f"no take given for stratum {e.args[0]!r}") from None
        return cls(s, np.array([take[k] for k in keys]))

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.stratum_of, minlength=self.take.size)


def _check_srs(parent_size: int, n: int):
    if not 1 <= n <= parent_size:
        raise DesignError(f"SRS size n={n} outside [1, {parent_size}]")


def srs_joint(parent_size: int, n: int) -> float:
    return n * (n - 1) / (parent_size * (parent_size - 1)) if parent_size > 1 else 0.0


def _srs_positions(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    """Sorted positions of an equal-probability n-subset of range(m)."""
    return np.sort(rng.choice(m, size=n, replace=False, shuffle=False))


class PreparedDesign:
    """A design bound to a particular parent; cheap repeated draws for rejection loops."""

    def __init__(self, tag: str, first_order: np.ndarray, pairwise: Pairwise, drawer, fixed_size: bool,
                 clamped: int = 0):
        self.tag = tag
        self.first_order = first_order
        self.pairwise = pairwise
        self._drawer = drawer
        self.fixed_size = fixed_size
        self.clamped = clamped

    @property
    def parent_size(self) -> int:
        return self.first_order.size

    def draw(self, rng: np.random.Generator) -> DrawnSample:
        return DrawnSample(self._drawer(rng), self.first_order, self.pairwise, self.tag, self.clamped)


def prepare_srswor(parent_size: int, n: int) -> PreparedDesign:
    _check_srs(parent_size, n)
    pi = np.full(parent_size, n / parent_size)
    pw = Pairwise(pi, np.zeros(parent_size, dtype=np.intp), np.array([srs_joint(parent_size, n)]))
    return PreparedDesign("srswor", pi, pw, lambda rng: _srs_positions(rng, parent_size, n), True)


def prepare_poisson(probs) -> PreparedDesign:
    pi = np.array(probs, dtype=float).reshape(-1)
    if np.any(~np.isfinite(pi)) or np.any(pi < 0):
        raise DesignError("Poisson inclusion probabilities must be finite and >= 0")
    clamped = int(np.count_nonzero(pi > 1.0))
    if clamped:
        # counted on every drawn sample; the harness reports the per-run tally
        log.debug("clamped %d Poisson inclusion probabilities above 1", clamped)
        pi = np.minimum(pi, 1.0)
    pi.setflags(write=False)
    return PreparedDesign("poisson", pi, Pairwise(pi), lambda rng: np.flatnonzero(rng.random(pi.size) < pi),
                          False, clamped)


def prepare_stratified(plan: StratumPlan) -> PreparedDesign:
    sizes = plan.sizes
    take = plan.take
    if np.any((sizes == 0) & (take > 0)):
        raise DesignError("empty stratum with positive take")
    if np.any(take < 0) or np.any(take > sizes):
        bad = np.flatnonzero((take < 0) | (take > sizes))
        raise DesignError(f"stratum take outside [0, m_h] for strata {bad.tolist()}")
    members = [np.flatnonzero(plan.stratum_of == h) for h in range(take.size)]
    frac = np.where(sizes > 0, take / np.maximum(sizes, 1), 0.0)
    pi = frac[plan.stratum_of]
    within = np.array([srs_joint(m, r) if m > 1 else 0.0 for m, r in zip(sizes, take)])
    pw = Pairwise(pi, plan.stratum_of, within)

    def drawer(rng):
        parts = [mem[_srs_positions(rng, mem.size, r)] for mem, r in zip(members, take) if r > 0]
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.intp)

    return PreparedDesign("stratified", pi, pw, drawer, True)


def draw_srswor(rng: np.random.Generator, parent_size: int, n: int) -> DrawnSample:
    """Simple random sample without replacement of size n."""
    return prepare_srswor(parent_size, n).draw(rng)


def draw_poisson(rng: np.random.Generator, probs) -> DrawnSample:
    """Independent Bernoulli inclusion with the given probabilities (values > 1 clamped)."""
    return prepare_poisson(probs).draw(rng)


def draw_stratified(rng: np.random.Generator, plan: StratumPlan) -> DrawnSample:
    """Independent SRSWOR within each stratum."""
    return prepare_stratified(plan).draw(rng)


def pps_probabilities(sizes, expected_n: float) -> np.ndarray:
    """pi_i = p_i E(n) with p_i proportional to size and sum p_i = 1 (before any clamping)."""
    s = np.asarray(sizes, dtype=float).reshape(-1)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DesignError("sizes must be finite and nonnegative")
    total = s.sum()
    if total <= 0:
        raise DesignError("sizes sum to zero")
    if expected_n <= 0:
        raise DesignError("expected sample size must be positive")
    return s / total * expected_n


def inclusion_product(samples, unit: int) -> float:
    """Combined pi* of a frame unit across nested samples (outermost first)."""
    prob = 1.0
    pos = int(unit)
    for s in samples:
        hit = np.flatnonzero(s.indices == pos)
        if hit.size == 0:
            raise KeyError(f"unit {unit} not in the inner sample")
        prob *= float(s.first_order[pos])
        pos = int(hit[0])
    return prob


# -- design specifications used by the balance loops and the harness ---------------------------

@dataclass(frozen=True)
class SRSDesign:
    n: int
    tag: str = field(default="srswor", init=False)

    def prepare(self, parent_size: int, sizes=None, strata=None) -> PreparedDesign:
        return prepare_srswor(parent_size, self.n)


@dataclass(frozen=True)
class PoissonDesign:
    """Poisson sampling proportional to a size measure over the parent (or fixed probs)."""

    expected_n: float | None = None
    size_col: str | tuple | None = "x"
    probs: tuple | None = None
    tag: str = field(default="poisson", init=False)

    def prepare(self, parent_size: int, sizes=None, strata=None) -> PreparedDesign:
        if self.probs is not None:
            pi = np.asarray(self.probs, dtype=float)
            if pi.size != parent_size:
                raise DesignError("fixed Poisson probabilities must match the parent size")
        else:
            if sizes is None or self.expected_n is None:
                raise ConfigurationError("Poisson design needs expected_n and a size measure")
            pi = pps_probabilities(sizes, self.expected_n)
        return prepare_poisson(pi)


@dataclass(frozen=True)
class StratifiedDesign:
    """Stratified SRSWOR. ``take`` maps stratum label to r_h; labels come from ``stratum_col``."""

    take: dict
    stratum_col: str | None = None
    tag: str = field(default="stratified", init=False)

    def prepare(self, parent_size: int, sizes=None, strata=None) -> PreparedDesign:
        if strata is None:
            raise ConfigurationError("stratified design needs stratum labels on the parent")
        return prepare_stratified(StratumPlan.from_labels(strata, self.take))


def make_design(spec: dict):
    """Build a design spec from a config mapping such as {design = "srswor", n = 200}."""
    kind = spec.get("design", "srswor")
    if kind == "srswor":
        return SRSDesign(int(spec["n"]))
    if kind == "poisson":
        size = spec.get("size_col", "x")
        return PoissonDesign(expected_n=float(spec["expected_n"]),
                             size_col=tuple(size) if isinstance(size, list) else size)
    if kind == "stratified":
        return StratifiedDesign({_label(k): int(v) for k, v in spec["take"].items()},
                                stratum_col=spec.get("stratum_col"))
    raise ConfigurationError(f"unknown design {kind!r}")


def _label(k):
    """Stratum labels from config keys: integral strings become ints, numeric values match frame floats."""
    try:
        f = float(k)
    except (TypeError, ValueError):
        return k
    return int(f) if f.is_integer() else f
