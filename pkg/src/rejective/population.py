"""Finite populations: container, synthetic generators, file loading and moments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DegeneratePopulationError,
    EstimationError,
    ParseError,
    SchemaError,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FinitePopulation:
    """Fixed frame of N units with covariate blocks x (N x p), optional z (N x q) and study values y.

    ``y`` may be None for design-only runs; estimators call :meth:`require_y`.
    """

    x: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    unit_ids: np.ndarray | None = None
    x_names: tuple = ()
    z_names: tuple = ()
    y_name: str = "y"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ConfigurationError("x must be a nonempty N x p matrix")
        n = x.shape[0]
        object.__setattr__(self, "x", _frozen(x))
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            z = z[:, None] if z.ndim == 1 else z
            if z.shape[0] != n:
                raise ConfigurationError("z must have N rows")
            object.__setattr__(self, "z", _frozen(z))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).reshape(-1)
            if y.shape[0] != n:
                raise ConfigurationError("y must have N entries")
            object.__setattr__(self, "y", _frozen(y))
        for name in ("x", "z", "y"):
            a = getattr(self, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise ConfigurationError(f"non-finite values in {name}")
        ids = np.arange(n) if self.unit_ids is None else np.asarray(self.unit_ids)
        if ids.shape[0] != n:
            raise ConfigurationError("unit_ids must have N entries")
        ids = ids.copy()
        ids.setflags(write=False)
        object.__setattr__(self, "unit_ids", ids)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{k + 1}" for k in range(x.shape[1])))
        if self.z is not None and not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{k + 1}" for k in range(self.z.shape[1])))

    @property
    def n_units(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return 0 if self.z is None else self.z.shape[1]

    @property
    def y_observed(self) -> bool:
        return self.y is not None

    def require_y(self) -> np.ndarray:
        if self.y is None:
            raise EstimationError("study variable y is unobserved in this frame")
        return self.y

    def columns(self, selector) -> np.ndarray:
        """Return an N x k block by name(s): 'x', 'z', 'y', or individual column names."""
        if isinstance(selector, str):
            selector = [selector]
        blocks = []
        for name in selector:
            if name == "x":
                blocks.append(self.x)
            elif name == "z":
                if self.z is None:
                    raise SchemaError("frame has no z block")
                blocks.append(self.z)
            elif name in ("y", self.y_name):
                blocks.append(self.require_y()[:, None])
            elif name in self.x_names:
                blocks.append(self.x[:, [self.x_names.index(name)]])
            elif name in self.z_names:
                blocks.append(self.z[:, [self.z_names.index(name)]])
            else:
                raise SchemaError(f"unknown column {name!r}")
        return np.hstack(blocks)


@dataclass(frozen=True)
class MomentPair:
    """Means of u and v and their covariance with divisor N - 1."""

    mean_u: np.ndarray
    mean_v: np.ndarray
    cov_uv: np.ndarray


def moments(u: np.ndarray, v: np.ndarray) -> MomentPair:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u = u[:, None] if u.ndim == 1 else u
    v = v[:, None] if v.ndim == 1 else v
    n = u.shape[0]
    if n < 2:
        raise DegeneratePopulationError("need at least two units for a covariance")
    mu, mv = u.mean(axis=0), v.mean(axis=0)
    cov = (u - mu).T @ (v - mv) / (n - 1)
    return MomentPair(mu, mv, cov)


def population_moments(pop: FinitePopulation, u_cols, v_cols) -> MomentPair:
    """Frame means and covariance (divisor N - 1) of two column selections."""
    if pop.n_units < 2:
        raise DegeneratePopulationError("population_moments needs N >= 2")
    return moments(pop.columns(u_cols), pop.columns(v_cols))


def generate_synthetic(seed: int, n_units: int, beta: float, noise_sd: float = 1.0) -> FinitePopulation:
    """Skewed-covariate frame: x = 0.5^{1/2}(chi^2_1 - 1), y = 1 + beta x + e, e ~ N(0, noise_sd^2)."""
    if n_units < 2:
        raise ConfigurationError("n_units must be >= 2")
    if not noise_sd > 0:
        raise ConfigurationError("noise_sd must be positive")
    rng = np.random.default_rng(seed)
    x = math.sqrt(0.5) * (rng.standard_normal(n_units) ** 2 - 1.0)
    y = 1.0 + beta * x + noise_sd * rng.standard_normal(n_units)
    return FinitePopulation(x=x[:, None], y=y, x_names=("x",))


def generate_api_like(seed: int, n_units: int = 6194) -> FinitePopulation:
    """Synthetic stand-in for a school-performance frame.

    x mimics a prior-year score; z holds three percentages (language learners,
    subsidised meals, first-year students); y is the current-year score.
    """
    if n_units < 10:
        raise ConfigurationError("n_units must be >= 10")
    rng = np.random.default_rng(seed)
    ses = rng.standard_normal(n_units)
    meals = 100.0 / (1.0 + np.exp(-(0.2 - 1.3 * ses + 0.5 * rng.standard_normal(n_units))))
    ell = np.clip(0.45 * meals + 12.0 * rng.standard_normal(n_units) + 3.0, 0.5, 95.0)
    mobility = np.clip(np.exp(2.5 - 0.15 * ses + 0.6 * rng.standard_normal(n_units)), 1.0, 90.0)
    x = 640.0 + 85.0 * ses - 0.6 * (meals - 50.0) + 22.0 * rng.standard_normal(n_units)
    x = np.clip(x, 320.0, 980.0)
    y = 18.0 + 0.97 * x - 0.05 * meals - 0.12 * ell - 0.25 * mobility + 14.0 * rng.standard_normal(n_units)
    z = np.column_stack([ell, meals, mobility])
    return FinitePopulation(x=x[:, None], y=y, z=z, x_names=("api99",),
                            z_names=("pct_ell", "pct_meals", "pct_mobility"), y_name="api00")


def _split(cols) -> list[str]:
    if cols is None:
        return []
    if isinstance(cols, str):
        return [c.strip() for c in cols.split(",") if c.strip()]
    return list(cols)


def load_population(path, x_cols: Sequence[str] | str, y_col: str | None = None,
                    z_cols: Sequence[str] | str | None = None, id_col: str | None = None,
                    delimiter: str | None = None) -> FinitePopulation:
    """Read a delimited text frame with a header row.

    The delimiter is sniffed among comma and tab unless given. Columns are taken in
    the order listed; ``y_col=None`` loads a design-only frame with y unobserved.
    """
    path = Path(path)
    x_cols, z_cols = _split(x_cols), _split(z_cols)
    if not x_cols:
        raise SchemaError("schema must name at least one x column")
    try:
        with path.open(newline="") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read frame file {path}: {e.strerror}") from e
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0] if text else "", delimiters=",\t").delimiter
        except csv.Error:
            delimiter = ","
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file") from None
    wanted = x_cols + z_cols + ([y_col] if y_col else []) + ([id_col] if id_col else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"missing columns: {missing}")
    pos = {c: header.index(c) for c in wanted}
    numeric = x_cols + z_cols + ([y_col] if y_col else [])
    rows, ids = [], []
    for r, rec in enumerate(reader, start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        vals = []
        for c in numeric:
            cell = rec[pos[c]].strip() if pos[c] < len(rec) else ""
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"row {r}: column {c!r} has non-numeric value {cell!r}", row=r) from None
            if not math.isfinite(v):
                raise ParseError(f"row {r}: column {c!r} is not finite", row=r)
            vals.append(v)
        rows.append(vals)
        if id_col:
            ids.append(rec[pos[id_col]].strip())
    if not rows:
        raise SchemaError("file has no data rows")
    data = np.array(rows, dtype=float)
    px, pz = len(x_cols), len(z_cols)
    return FinitePopulation(
        x=data[:, :px],
        z=data[:, px:px + pz] if pz else None,
        y=data[:, px + pz] if y_col else None,
        unit_ids=np.array(ids) if id_col else None,
        x_names=tuple(x_cols),
        z_names=tuple(z_cols),
        y_name=y_col or "y",
    )
