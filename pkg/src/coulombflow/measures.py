"""Probability measures on the real line and exact 1-D Wasserstein distances.

Three interchangeable representations:

* :class:`GridDensity` -- nonnegative cell-averaged density on a uniform grid;
  the PDE state and the workhorse for all functionals.
* :class:`EmpiricalMeasure` -- sorted equal-weight atoms; the particle state.
* :class:`QuantileFunction` -- monotone quantile samples on the uniform
  probability grid q_j = (j + 1/2)/m.  In one dimension optimal transport
  reduces to quantile comparison, W_p(a,b)^p = int_0^1 |Q_a - Q_b|^p dq,
  which is how :func:`wasserstein` computes every distance.

All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from .errors import ConfigError

DEFAULT_QUANTILE_NODES = 4096

__all__ = [
    "GridDensity",
    "EmpiricalMeasure",
    "QuantileFunction",
    "build_grid_density",
    "quantile_function",
    "quantiles_at",
    "wasserstein",
    "grid_density_to_csv",
    "grid_density_from_csv",
    "empirical_to_csv",
    "empirical_from_csv",
    "DEFAULT_QUANTILE_NODES",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridDensity:
    """Cell-averaged probability density on the uniform grid over [left, right].

    Cell centers are x_i = left + (i + 1/2) h with h = (right - left)/n.
    Construction validates nonnegativity and renormalizes to unit mass, so
    h * sum(values) == 1 up to roundoff for every instance ever created.
    """

    left: float
    right: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if not (self.right > self.left):
            raise ConfigError("GridDensity requires right > left")
        if self.n < 1:
            raise ConfigError("GridDensity requires n >= 1")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.n,):
            raise ConfigError(f"GridDensity values must have shape ({self.n},)")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("GridDensity values must be finite")
        if np.any(vals < 0):
            raise ConfigError("GridDensity values must be nonnegative")
        mass = float(vals.sum()) * self.h
        if mass <= 0.0:
            raise ConfigError("GridDensity has zero mass on its domain")
        object.__setattr__(self, "values", _freeze(vals / mass))

    @property
    def h(self) -> float:
        return (self.right - self.left) / self.n

    def cell_centers(self) -> np.ndarray:
        return self.left + (np.arange(self.n) + 0.5) * self.h

    def cell_edges(self) -> np.ndarray:
        return self.left + np.arange(self.n + 1) * self.h

    def mass(self) -> float:
        return float(self.values.sum()) * self.h

    def moment(self, k: int) -> float:
        """k-th moment int x^k rho(x) dx by the midpoint rule."""
        return float(np.sum(self.cell_centers() ** k * self.values) * self.h)

    def shifted(self, s: float) -> "GridDensity":
        """The same density translated by s (domain moves, values unchanged)."""
        return GridDensity(self.left + s, self.right + s, self.n, self.values)

    def same_grid(self, other: "GridDensity") -> bool:
        return (
            self.left == other.left
            and self.right == other.right
            and self.n == other.n
        )


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atomic measure (1/N) sum_i delta_{atoms[i]}; atoms kept sorted."""

    atoms: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64).ravel()
        if a.size < 1:
            raise ConfigError("EmpiricalMeasure requires at least one atom")
        if not np.all(np.isfinite(a)):
            raise ConfigError("EmpiricalMeasure atoms must be finite")
        object.__setattr__(self, "atoms", _freeze(np.sort(a)))

    @property
    def n(self) -> int:
        return int(self.atoms.size)

    def moment(self, k: int) -> float:
        return float(np.mean(self.atoms ** k))


@dataclass(frozen=True)
class QuantileFunction:
    """Quantile samples Q(q_j) at the probability nodes q_j = (j + 1/2)/m."""

    m: int
    values: np.ndarray

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("QuantileFunction requires m >= 2")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.m,):
            raise ConfigError(f"QuantileFunction values must have shape ({self.m},)")
        if not np.all(np.isfinite(v)):
            raise ConfigError("QuantileFunction values must be finite")
        scale = max(1.0, float(np.abs(v).max()))
        if np.any(np.diff(v) < -1e-9 * scale):
            raise ConfigError("QuantileFunction values must be nondecreasing")
        object.__setattr__(self, "values", _freeze(np.maximum.accumulate(v)))

    def nodes(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) / self.m


Measure = Union[GridDensity, EmpiricalMeasure]


def build_grid_density(
    source: Union[Callable[[np.ndarray], np.ndarray], Iterable[float]],
    left: float,
    right: float,
    n: int,
) -> GridDensity:
    """Discretize a density function or a sample set onto the uniform grid.

    A callable source is evaluated at cell midpoints; an array source is
    histogrammed with the grid cells as bins.  Either way the result is
    renormalized to unit mass.  Samples outside [left, right] raise rather
    than being clipped, so domain-truncation mistakes surface immediately.
    """
    if not (right > left):
        raise ConfigError("build_grid_density requires right > left")
    if n < 8:
        raise ConfigError("build_grid_density requires n >= 8")
    h = (right - left) / n
    centers = left + (np.arange(n) + 0.5) * h
    if callable(source):
        vals = np.asarray(source(centers), dtype=np.float64)
        if vals.shape != (n,):
            vals = np.broadcast_to(vals, (n,)).astype(np.float64)
    else:
        samples = np.asarray(list(source) if not isinstance(source, np.ndarray) else source,
                             dtype=np.float64).ravel()
        if samples.size == 0:
            raise ConfigError("build_grid_density: empty sample set")
        if np.any(samples < left) or np.any(samples > right):
            raise ConfigError(
                "build_grid_density: sample atom outside [left, right] "
                "(out-of-domain atoms are an error, not clipped)"
            )
        counts, _ = np.histogram(samples, bins=left + np.arange(n + 1) * h)
        vals = counts / (samples.size * h)
    if not np.all(np.isfinite(vals)):
        raise ConfigError("build_grid_density: source produced non-finite values")
    if np.any(vals < 0):
        raise ConfigError("build_grid_density: source produced negative values")
    if vals.sum() <= 0:
        raise ConfigError("build_grid_density: all-zero mass on the domain")
    return GridDensity(left, right, n, vals)


def _grid_quantiles(gd: GridDensity, q: np.ndarray) -> np.ndarray:
    """Invert the piecewise-linear CDF of a grid density at probabilities q.

    The CDF is linear inside each cell (cell-averaged density); flat stretches
    from zero-mass cells are resolved to their leftmost point.
    """
    cdf = np.concatenate(([0.0], np.cumsum(gd.values) * gd.h))
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, q, side="left")
    idx = np.clip(idx, 1, gd.n)
    cell = idx - 1
    dcdf = cdf[idx] - cdf[cell]
    frac = np.where(dcdf > 0, (q - cdf[cell]) / np.where(dcdf > 0, dcdf, 1.0), 0.0)
    return gd.left + (cell + frac) * gd.h


def _empirical_quantiles(em: EmpiricalMeasure, q: np.ndarray) -> np.ndarray:
    n = em.n
    idx = np.ceil(q * n - 1e-9).astype(int) - 1
    return em.atoms[np.clip(idx, 0, n - 1)]


def quantiles_at(measure: Measure, q: np.ndarray) -> np.ndarray:
    """Evaluate the measure's quantile function at probabilities q in (0, 1)."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ConfigError("quantiles_at requires probabilities strictly inside (0, 1)")
    if isinstance(measure, GridDensity):
        return _grid_quantiles(measure, q)
    if isinstance(measure, EmpiricalMeasure):
        return _empirical_quantiles(measure, q)
    raise ConfigError(f"quantiles_at: unsupported measure type {type(measure)!r}")


def quantile_function(measure: Measure, m: int) -> QuantileFunction:
    """Quantile samples of a grid density or an empirical measure at m nodes."""
    if m < 2:
        raise ConfigError("quantile_function requires m >= 2")
    q = (np.arange(m) + 0.5) / m
    return QuantileFunction(m, quantiles_at(measure, q))


def wasserstein(p: float, a: Measure, b: Measure, m: int = DEFAULT_QUANTILE_NODES) -> float:
    """W_p distance between two measures through their quantile functions.

    Computes ((1/m) sum_j |Q_a(q_j) - Q_b(q_j)|^p)^(1/p); exact up to the
    quantile discretization, symmetric, and a true metric on quantile vectors.
    """
    if not (1.0 <= p <= 2.0):
        raise ConfigError("wasserstein requires p in [1, 2]")
    qa = quantile_function(a, m).values
    qb = quantile_function(b, m).values
    diff = np.abs(qa - qb)
    if p == 1.0:
        return float(np.mean(diff))
    if p == 2.0:
        return float(np.sqrt(np.mean(diff * diff)))
    return float(np.mean(diff ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# CSV formats (17 significant digits, LF endings)
# ---------------------------------------------------------------------------

def grid_density_to_csv(gd: GridDensity, path) -> None:
    xs = gd.cell_centers()
    with open(path, "w", newline="\n") as f:
        f.write("x,rho\n")
        for x, r in zip(xs, gd.values):
            f.write(f"{x:.17g},{r:.17g}\n")


def grid_density_from_csv(path) -> GridDensity:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs, vals = data[:, 0], data[:, 1]
    if xs.size < 2:
        raise ConfigError("grid density CSV needs at least two cells")
    h = xs[1] - xs[0]
    return GridDensity(float(xs[0] - h / 2), float(xs[-1] + h / 2), xs.size, vals)


def empirical_to_csv(em: EmpiricalMeasure, path) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("lambda\n")
        for a in em.atoms:
            f.write(f"{a:.17g}\n")


def empirical_from_csv(path) -> EmpiricalMeasure:
    atoms = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1)
    return EmpiricalMeasure(atoms)
