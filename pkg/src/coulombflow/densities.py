"""Initial-density specifications shared by the PDE and SDE front ends.

A spec is a small tagged record (``gaussian(mean, sigma)``, ``uniform(a, b)``,
``semicircle(r, center)``, ``equilibrium``, ``file(path)``) that can be
realized either as a GridDensity on a given grid or as N quantile-placed
particle positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .measures import GridDensity, build_grid_density, grid_density_from_csv, quantiles_at
from .potentials import Potential, equilibrium_closed_form, equilibrium_support

__all__ = ["DensitySpec", "parse_density_spec", "realize_density", "quantile_positions",
           "default_domain"]

_KINDS = ("gaussian", "uniform", "semicircle", "equilibrium", "file")

GAUSSIAN_TAIL_CUT = 1e-16  # relative: cells below this fraction of the peak are zeroed


@dataclass(frozen=True)
class DensitySpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown density spec kind {self.kind!r}")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


def parse_density_spec(spec) -> DensitySpec:
    """Accepts 'gaussian:mean=0,sigma=0.5' strings or {kind, params} mappings."""
    if isinstance(spec, DensitySpec):
        return spec
    if isinstance(spec, dict):
        return DensitySpec(spec["kind"], dict(spec.get("params", {})))
    kind, _, rest = str(spec).partition(":")
    kind = kind.strip().lower()
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise ConfigError(f"bad density spec item {item!r}")
            if kind == "file" and key.strip() == "path":
                params["path"] = val
                continue
            try:
                params[key.strip()] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad numeric value in density spec: {item!r}") from exc
    return DensitySpec(kind, params)


def realize_density(spec: DensitySpec, left: float, right: float, n: int,
                    potential: Potential | None = None) -> GridDensity:
    """Build the spec's density on the grid, renormalized on the truncated domain."""
    spec = parse_density_spec(spec)
    if spec.kind == "gaussian":
        mean = float(spec.params.get("mean", 0.0))
        sigma = float(spec.params.get("sigma", 1.0))
        if sigma <= 0:
            raise ConfigError("gaussian density requires sigma > 0")

        def f(x):
            vals = np.exp(-0.5 * ((x - mean) / sigma) ** 2)
            return np.where(vals < GAUSSIAN_TAIL_CUT * vals.max(), 0.0, vals)

        return build_grid_density(f, left, right, n)
    if spec.kind == "uniform":
        a = float(spec.params.get("a", -1.0))
        b = float(spec.params.get("b", 1.0))
        if not (b > a):
            raise ConfigError("uniform density requires b > a")
        return build_grid_density(lambda x: np.where((x >= a) & (x <= b), 1.0, 0.0),
                                  left, right, n)
    if spec.kind == "semicircle":
        r = float(spec.params.get("r", 2.0))
        center = float(spec.params.get("center", 0.0))
        if r <= 0:
            raise ConfigError("semicircle density requires r > 0")
        return build_grid_density(
            lambda x: np.sqrt(np.maximum(r * r - (x - center) ** 2, 0.0)) * 2 / (np.pi * r * r),
            left, right, n)
    if spec.kind == "equilibrium":
        if potential is None:
            raise ConfigError("equilibrium density spec needs a potential")
        return equilibrium_closed_form(potential, left, right, n)
    if spec.kind == "file":
        gd = grid_density_from_csv(spec.params["path"])
        if (gd.left, gd.right, gd.n) != (left, right, n):
            raise ConfigError(
                f"density file grid ({gd.left}, {gd.right}, {gd.n}) does not match "
                f"the requested grid ({left}, {right}, {n})"
            )
        return gd
    raise ConfigError(f"unknown density spec kind {spec.kind!r}")


def quantile_positions(spec: DensitySpec, n_particles: int, left: float, right: float,
                       potential: Potential | None = None, n_grid: int = 4096) -> np.ndarray:
    """Particle positions at the (i + 1/2)/N quantiles of the spec's density."""
    if n_particles < 1:
        raise ConfigError("quantile_positions requires at least one particle")
    gd = realize_density(spec, left, right, n_grid, potential)
    q = (np.arange(n_particles) + 0.5) / n_particles
    return quantiles_at(gd, q)


def default_domain(potential: Potential, spec: DensitySpec | None = None,
                   pad: float = 2.0) -> tuple[float, float]:
    """Symmetric truncation domain [-L, L].

    L is 1.5x the closed-form support radius when the family has one, enlarged
    if needed so the initial density keeps its 1e-8 mass radius well inside;
    without a closed form, L is the initial 1e-8 mass radius plus ``pad``.
    """
    support = equilibrium_support(potential)
    radius = 0.0
    if support is not None:
        radius = 1.5 * max(abs(support[0][0]), abs(support[-1][1]))
    init_radius = 0.0
    if spec is not None:
        spec = parse_density_spec(spec)
        if spec.kind == "gaussian":
            mean = float(spec.params.get("mean", 0.0))
            sigma = float(spec.params.get("sigma", 1.0))
            init_radius = abs(mean) + sigma * np.sqrt(2.0 * np.log(1e8))
        elif spec.kind == "uniform":
            init_radius = max(abs(float(spec.params.get("a", -1.0))),
                              abs(float(spec.params.get("b", 1.0))))
        elif spec.kind == "semicircle":
            init_radius = abs(float(spec.params.get("center", 0.0))) + \
                float(spec.params.get("r", 2.0))
    if support is None:
        if init_radius == 0.0:
            raise ConfigError("default_domain needs a closed-form support or an init spec")
        L = init_radius + pad
    else:
        L = max(radius, init_radius + 0.5) if init_radius else radius
    return (-L, L)
