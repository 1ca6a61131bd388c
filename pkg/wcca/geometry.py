"""
Distributions on a compact interval in quantile coordinates.

A measure is stored as its quantile function sampled on the midpoint grid
u_j = (j - 1/2)/m. In these coordinates the 2-Wasserstein metric is the L2
distance of quantile functions, Log/Exp are subtraction/addition, McCann
interpolation is linear interpolation and parallel transport leaves the
coordinates untouched.
"""
import functools
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from sklearn.isotonic import isotonic_regression

from .exceptions import (
    BaseMismatch,
    DegenerateDensity,
    DomainError,
    EmptyInput,
    GridMismatch,
    InvalidDistribution,
    NotInLogImage,
    SupportViolation,
)

ArrayLike = Union[Sequence[float], np.ndarray]

# Floating-point slack when checking monotonicity and support of a candidate
# quantile vector, relative to the support width.
_RELATIVE_TOLERANCE = 1e-12


class ExpMode(Enum):
    strict = "strict"
    project = "project"


@functools.lru_cache(maxsize=64)
def _midpoint_levels(m_levels: int) -> np.ndarray:
    levels = (np.arange(1, m_levels + 1) - 0.5) / m_levels
    levels.setflags(write=False)
    return levels


@functools.lru_cache(maxsize=64)
def _time_points(t_points: int, start: float, end: float) -> np.ndarray:
    times = np.linspace(start, end, t_points)
    times.setflags(write=False)
    return times


def _frozen(values: ArrayLike) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridConfig:
    """
    Quantile-level and time grids shared by every object in an analysis.

    :param m_levels: number of quantile levels (midpoint grid).
    :param t_points: number of time samples, endpoints included.
    :param support: the compact interval [a, b] containing every measure.
    :param time_domain: the time interval, [0, 1] unless stated otherwise.
    """

    m_levels: int
    t_points: int
    support: Tuple[float, float] = (0.0, 1.0)
    time_domain: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if int(self.m_levels) != self.m_levels or self.m_levels < 2:
            raise DomainError(f"m_levels must be an integer >= 2, got {self.m_levels}")
        if int(self.t_points) != self.t_points or self.t_points < 2:
            raise DomainError(f"t_points must be an integer >= 2, got {self.t_points}")
        a, b = (float(v) for v in self.support)
        if not a < b:
            raise DomainError(f"support must satisfy a < b, got [{a}, {b}]")
        start, end = (float(v) for v in self.time_domain)
        if not start < end:
            raise DomainError(f"time domain must be increasing, got [{start}, {end}]")
        object.__setattr__(self, "m_levels", int(self.m_levels))
        object.__setattr__(self, "t_points", int(self.t_points))
        object.__setattr__(self, "support", (a, b))
        object.__setattr__(self, "time_domain", (start, end))

    @property
    def levels(self) -> np.ndarray:
        return _midpoint_levels(self.m_levels)

    @property
    def times(self) -> np.ndarray:
        return _time_points(self.t_points, *self.time_domain)

    @property
    def time_length(self) -> float:
        return self.time_domain[1] - self.time_domain[0]

    @property
    def tolerance(self) -> float:
        return _RELATIVE_TOLERANCE * max(1.0, self.support[1] - self.support[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "m_levels": self.m_levels,
            "t_points": self.t_points,
            "support": list(self.support),
            "time_domain": list(self.time_domain),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridConfig":
        return cls(
            m_levels=data["m_levels"],
            t_points=data["t_points"],
            support=tuple(data.get("support", (0.0, 1.0))),
            time_domain=tuple(data.get("time_domain", (0.0, 1.0))),
        )


def check_grids(first: GridConfig, second: GridConfig) -> None:
    if first != second:
        raise GridMismatch(f"grid mismatch: {first} vs {second}")


def monotone_quantiles(q: np.ndarray, grid: GridConfig, error=InvalidDistribution) -> np.ndarray:
    """
    Validate candidate quantile vectors (last axis) and remove ulp-level violations.

    Raises `error` when a vector decreases by more than the grid tolerance and
    SupportViolation when it leaves [a, b] by more than the tolerance.
    """
    tol = grid.tolerance
    if not np.all(np.isfinite(q)):
        raise error("quantile vector has non-finite entries")
    steps = np.diff(q, axis=-1)
    if steps.size and steps.min() < -tol:
        worst = np.unravel_index(int(np.argmin(steps)), steps.shape)
        raise error(f"quantile vector decreases at index {tuple(int(i) for i in worst)}")
    a, b = grid.support
    if q[..., 0].min() < a - tol or q[..., -1].max() > b + tol:
        raise SupportViolation(f"quantiles leave the support [{a}, {b}]")
    return np.clip(np.maximum.accumulate(q, axis=-1), a, b)


@dataclass(frozen=True, eq=False)
class Distribution:
    """
    A probability measure on grid.support, stored as q_j = F^{-1}(u_j).
    """

    q: np.ndarray
    grid: GridConfig

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.grid.m_levels,):
            raise GridMismatch(f"expected {self.grid.m_levels} quantiles, got shape {q.shape}")
        object.__setattr__(self, "q", _frozen(monotone_quantiles(q, self.grid)))

    def same_as(self, other: "Distribution") -> bool:
        return self is other or (self.grid == other.grid and np.array_equal(self.q, other.q))

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """
        Draw `size` points by inverse-transform sampling of the quantile grid.
        """
        return np.interp(rng.random(size), self.grid.levels, self.q)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "support": list(self.grid.support),
            "m": self.grid.m_levels,
            "q": [float(v) for v in self.q],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], grid: GridConfig) -> "Distribution":
        if data["m"] != grid.m_levels or tuple(data["support"]) != grid.support:
            raise GridMismatch("serialized distribution does not match the grid")
        return cls(q=data["q"], grid=grid)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """
    An element of Tan_mu in quantile coordinates: v_j = T(F_mu^{-1}(u_j)).
    """

    v: np.ndarray
    base: Distribution

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.shape != (self.base.grid.m_levels,):
            raise GridMismatch(f"expected {self.base.grid.m_levels} entries, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("tangent vector has non-finite entries")
        object.__setattr__(self, "v", _frozen(v))

    def inner(self, other: "TangentVector") -> float:
        if not self.base.same_as(other.base):
            raise BaseMismatch("tangent vectors live in different tangent spaces")
        return float(np.mean(self.v * other.v))

    def norm(self) -> float:
        return float(np.sqrt(np.mean(self.v * self.v)))


def wasserstein_distance(mu: Distribution, nu: Distribution) -> float:
    check_grids(mu.grid, nu.grid)
    return float(np.sqrt(np.mean((mu.q - nu.q) ** 2)))


def log_map(mu: Distribution, nu: Distribution) -> TangentVector:
    """
    Log_mu(nu) = F_nu^{-1} o F_mu - id, evaluated at x = F_mu^{-1}(u_j).
    """
    check_grids(mu.grid, nu.grid)
    return TangentVector(v=nu.q - mu.q, base=mu)


def exp_quantiles(candidate: np.ndarray, grid: GridConfig, mode: ExpMode = ExpMode.strict) -> np.ndarray:
    """
    Turn base + displacement quantile vectors (last axis) into valid quantiles.

    `strict` rejects any row that is not monotone within tolerance;
    `project` replaces every row by its nearest nondecreasing vector inside
    the support (pool adjacent violators).
    """
    candidate = np.asarray(candidate, dtype=float)
    if ExpMode(mode) is ExpMode.strict:
        return monotone_quantiles(candidate, grid, NotInLogImage)
    a, b = grid.support
    rows = candidate.reshape(-1, grid.m_levels)
    projected = np.stack(
        [isotonic_regression(row, y_min=a, y_max=b, increasing=True) for row in rows]
    )
    return projected.reshape(candidate.shape)


def exp_map(
    base: Distribution, v: TangentVector, mode: ExpMode = ExpMode.strict
) -> Distribution:
    """
    Exp_mu(T) = (T + id)#mu.

    :param mode: `strict` rejects tangent vectors outside the log image;
        `project` maps the candidate quantile vector to the nearest
        nondecreasing vector inside the support.
    """
    if not v.base.same_as(base):
        raise BaseMismatch("tangent vector is not attached to the given base")
    return Distribution(q=exp_quantiles(base.q + v.v, base.grid, mode), grid=base.grid)


def mccann_geodesic(mu: Distribution, nu: Distribution, t: float) -> Distribution:
    check_grids(mu.grid, nu.grid)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"geodesic time must lie in [0, 1], got {t}")
    return Distribution(q=(1.0 - t) * mu.q + t * nu.q, grid=mu.grid)


def transport_vector(
    v: TangentVector, source: Distribution, target: Distribution
) -> TangentVector:
    """
    Parallel transport P_source^target u = u o F_source^{-1} o F_target.

    In quantile coordinates the entries are unchanged and only the base is
    re-tagged, which makes the map exactly unitary.
    """
    check_grids(source.grid, target.grid)
    if not v.base.same_as(source):
        raise BaseMismatch("tangent vector is not attached to the source measure")
    return TangentVector(v=v.v, base=target)


def from_samples(samples: ArrayLike, grid: GridConfig, *, clip: bool = False) -> Distribution:
    """
    Empirical quantiles q_j = inf{x : F_n(x) >= u_j}.

    :param clip: clip samples outside the support instead of raising.
    """
    values = np.asarray(samples, dtype=float).ravel()
    if values.size == 0:
        raise EmptyInput("cannot build a distribution from zero samples")
    if not np.all(np.isfinite(values)):
        raise DomainError("samples contain non-finite values")
    a, b = grid.support
    if clip:
        values = np.clip(values, a, b)
    elif values.min() < a or values.max() > b:
        raise SupportViolation(f"samples leave the support [{a}, {b}]")
    return Distribution(q=np.quantile(values, grid.levels, method="inverted_cdf"), grid=grid)


def from_density_grid(
    density: Union[ArrayLike, Sequence[Tuple[float, float]]],
    grid: GridConfig,
    values: Optional[ArrayLike] = None,
) -> Distribution:
    """
    Quantiles of a density tabulated on a fine x-grid.

    The density is integrated by the trapezoid rule, normalized to unit mass
    and inverted by monotone linear interpolation at the quantile levels.

    :param density: either (x, f(x)) pairs, or the x-grid when `values` is given.
    :param values: optional f(x) values matching `density`.
    """
    if values is None:
        pairs = np.asarray(density, dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise DomainError("density must be a sequence of (x, f(x)) pairs")
        x, f = pairs[:, 0], pairs[:, 1]
    else:
        x = np.asarray(density, dtype=float)
        f = np.asarray(values, dtype=float)
    if x.shape != f.shape or x.size < 2:
        raise DomainError("density grid needs at least two matching (x, f(x)) points")
    if np.any(np.diff(x) <= 0):
        raise DomainError("density x-grid must be strictly increasing")
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DomainError("density values must be finite and nonnegative")
    cdf = cumulative_trapezoid(f, x, initial=0.0)
    total = cdf[-1]
    if not total > 0:
        raise DegenerateDensity("density integrates to a nonpositive mass")
    cdf = cdf / total
    # Flat CDF stretches keep their left end, i.e. inf{x : F(x) >= u}.
    cdf, first = np.unique(cdf, return_index=True)
    q = np.interp(grid.levels, cdf, x[first])
    return Distribution(q=np.clip(q, *grid.support), grid=grid)


__all__ = [
    "ExpMode",
    "GridConfig",
    "Distribution",
    "TangentVector",
    "check_grids",
    "monotone_quantiles",
    "wasserstein_distance",
    "log_map",
    "exp_map",
    "exp_quantiles",
    "mccann_geodesic",
    "transport_vector",
    "from_samples",
    "from_density_grid",
]
