"""Symmetric positive-definite factorization with an explicit singularity test."""

from __future__ import annotations

import numpy as np

PIVOT_RTOL = 1e-12


def spd_cholesky(m: np.ndarray, error=np.linalg.LinAlgError, what: str = "matrix", scale: float | None = None,
                 **err_kw) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix.

    Raises ``error`` when any pivot L_kk^2 falls below PIVOT_RTOL times ``scale`` (default:
    the largest diagonal entry), or the factorization breaks down. Pass the variance of the
    unprojected quantity as ``scale`` when ``m`` is a residual block. The smallest pivot is
    passed to the error as ``min_pivot`` when the error class accepts it.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    m = 0.5 * (m + m.T)
    if scale is None:
        scale = float(np.max(np.abs(np.diag(m)))) if m.size else 0.0
    try:
        lower = np.linalg.cholesky(m)
        pivot = float(np.min(np.diag(lower)) ** 2)
        ok = scale > 0 and pivot > PIVOT_RTOL * scale
    except np.linalg.LinAlgError:
        pivot = float(np.linalg.eigvalsh(m)[0])
        ok = False
    if not ok:
        msg = f"{what} is not positive definite (smallest pivot {pivot:.3e}, scale {scale:.3e})"
        raise _make_error(error, msg, pivot, err_kw)
    return lower


def _make_error(error, msg, pivot, err_kw):
    try:
        return error(msg, min_pivot=pivot, **err_kw)
    except TypeError:
        return error(msg, **err_kw)


def spd_solve(m: np.ndarray, b: np.ndarray, error=np.linalg.LinAlgError, what: str = "matrix", **err_kw):
    lower = spd_cholesky(m, error, what, **err_kw)
    y = np.linalg.solve(lower, b)
    return np.linalg.solve(lower.T, y)
