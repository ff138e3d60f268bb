"""Exact enumeration of two-phase SRS designs on tiny frames.

Every (A, B) pair is listed with its probability, with and without rejection, so design
moments of any estimator follow by summation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import AcceptanceFailure, ConfigurationError, SizeError

BUDGET = 10**7


@dataclass(frozen=True)
class Enumeration:
    """All two-phase SRS sample pairs of a frame.

    ``a_units[i]`` lists the phase-I units of the i-th A; ``b_pos[j]`` the positions within A
    of the j-th B, so the frame units of pair (i, j) are ``a_units[i][b_pos[j]]``.
    ``accepted[i, j]`` is the balance indicator.
    """

    n_units: int
    n_I: int
    n_II: int
    gamma_sq: float
    a_units: np.ndarray
    b_pos: np.ndarray
    q: np.ndarray
    accepted: np.ndarray

    def units(self) -> np.ndarray:
        """Frame units of every pair, shape (n_A, n_B, n_II)."""
        return self.a_units[:, self.b_pos]

    def probabilities(self, rejective: bool = True) -> np.ndarray:
        """Joint probability of each (A, B); under rejection B is uniform over accepted sets given A."""
        n_a, n_b = self.accepted.shape
        if not rejective:
            return np.full((n_a, n_b), 1.0 / (n_a * n_b))
        counts = self.accepted.sum(axis=1)
        if np.any(counts == 0):
            raise AcceptanceFailure(f"{int(np.sum(counts == 0))} phase-I samples admit no balanced phase-II sample",
                                    attempts=n_b, accepted_rate=0.0)
        return self.accepted / counts[:, None] / n_a

    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    def means(self, u) -> tuple[np.ndarray, np.ndarray]:
        """(ubar_I per A, ubar_II per pair) for a frame vector or n x k block."""
        u = np.asarray(u, dtype=float)
        return u[self.a_units].mean(axis=1), u[self.units()].mean(axis=2)

    def expectation(self, values, rejective: bool = True) -> float:
        """E of a per-pair statistic (n_A x n_B array)."""
        return float(np.sum(self.probabilities(rejective) * np.asarray(values, dtype=float)))


def _check_budget(n_units: int, n_I: int, n_II: int):
    if not 1 <= n_II < n_I <= n_units:
        raise ConfigurationError("need 1 <= n_II < n_I <= N")
    size = math.comb(n_units, n_I) * math.comb(n_I, n_II)
    if size > BUDGET:
        raise SizeError(f"C({n_units},{n_I}) * C({n_I},{n_II}) = {size} pairs exceeds the budget of {BUDGET}")
    return size


def enumerate_two_phase(x, n_I: int, n_II: int, gamma_sq: float = math.inf) -> Enumeration:
    """Enumerate SRS/SRS two-phase samples of a frame with covariates ``x`` (N or N x p).

    The balance statistic is (xbar_II - xbar_I)^T [(1/n_II - 1/n_I) S_xx,I]^{-1} (xbar_II - xbar_I)
    with S_xx,I the phase-I covariance (divisor n_I - 1); accepted iff it is < gamma_sq.
    """
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    n_units = x.shape[0]
    _check_budget(n_units, n_I, n_II)
    a_units = np.array(list(combinations(range(n_units), n_I)), dtype=np.intp)
    b_pos = np.array(list(combinations(range(n_I), n_II)), dtype=np.intp)
    xa = x[a_units]  # n_A x n_I x p
    xbar_I = xa.mean(axis=1)
    xbar_II = xa[:, b_pos].mean(axis=2)  # n_A x n_B x p
    d = xbar_II - xbar_I[:, None, :]
    if math.isinf(gamma_sq):
        q = np.zeros(d.shape[:2])
        accepted = np.ones(d.shape[:2], dtype=bool)
    else:
        q = np.empty(d.shape[:2])
        c = 1.0 / n_II - 1.0 / n_I
        for i in range(a_units.shape[0]):
            s = np.atleast_2d(np.cov(xa[i], rowvar=False, ddof=1)) * c
            try:
                q[i] = np.einsum("bj,jk,bk->b", d[i], np.linalg.inv(s), d[i])
            except np.linalg.LinAlgError:
                q[i] = np.inf
        accepted = q < gamma_sq
    return Enumeration(n_units, n_I, n_II, float(gamma_sq), a_units, b_pos, q, accepted)


def identity_checks(enum: Enumeration, y, u, v) -> dict:
    """Maximal absolute errors of three exact identities under SRS/SRS without rejection.

    'tower': E(sum_B y / pi* / N) - ybar_0 with pi* = n_II / N.
    'cov': max over A of |cov(ubar_II, vbar_II | A) - (1/n_II - 1/n_I) V_uv,I|.
    'vuv': max over A of |E(V_uv,II | A) - V_uv,I| (both with divisor n - 1).
    """
    y, u, v = (np.asarray(t, dtype=float) for t in (y, u, v))
    n_I, n_II = enum.n_I, enum.n_II
    N = enum.n_units
    units = enum.units()
    pi_star = n_II / N
    est = y[units].sum(axis=2) / pi_star / N
    tower = abs(enum.expectation(est, rejective=False) - y.mean())

    ua, ub = u[enum.a_units], u[units]
    va, vb = v[enum.a_units], v[units]
    ubar_II, vbar_II = ub.mean(axis=2), vb.mean(axis=2)
    cov_b = np.mean(ubar_II * vbar_II, axis=1) - ubar_II.mean(axis=1) * vbar_II.mean(axis=1)
    v_uv_I = np.sum((ua - ua.mean(axis=1, keepdims=True)) * (va - va.mean(axis=1, keepdims=True)), axis=1) / (n_I - 1)
    cov_err = float(np.max(np.abs(cov_b - (1.0 / n_II - 1.0 / n_I) * v_uv_I)))

    v_uv_II = np.sum((ub - ubar_II[..., None]) * (vb - vbar_II[..., None]), axis=2) / (n_II - 1)
    vuv_err = float(np.max(np.abs(v_uv_II.mean(axis=1) - v_uv_I)))
    return {"tower": float(tower), "cov": cov_err, "vuv": vuv_err}
