"""External potential families, their derivatives, and closed-form equilibria.

Supported families:

* ``quadratic``             V(x) = theta x^2            (theta > 0)
* ``quartic-double-well``   V(x) = x^4/4 + c x^2/2      (c real)
* ``kontsevich-penner``     V(x) = a x^4/12 - b x^2/2 - c log|x|   (a > 0, c >= 0)
* ``polynomial``            even degree, positive leading coefficient

The quadratic and quartic families carry closed-form equilibrium densities;
``euler_lagrange_residual`` measures how well any density satisfies the
stationarity condition H rho = V'/2 on the interior of its support.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .measures import GridDensity

__all__ = [
    "Potential",
    "make_potential",
    "parse_potential_spec",
    "potential_spec_dict",
    "equilibrium_closed_form",
    "equilibrium_support",
    "euler_lagrange_residual",
]

_PROBE = None  # 10^4 midpoint probe on [-20, 20]; never hits x = 0


def _probe_grid() -> np.ndarray:
    global _PROBE
    if _PROBE is None:
        n = 10_000
        hp = 40.0 / n
        _PROBE = -20.0 + (np.arange(n) + 0.5) * hp
    return _PROBE


@dataclass(frozen=True)
class Potential:
    """A confining potential with analytic derivatives and convexity metadata.

    ``convexity_bound`` is a global lower bound K <= inf V''; ``growth_ok``
    records that the family confines faster than logarithmically (checked
    symbolically per family, up to an additive normalization constant).
    """

    family: str
    params: dict
    v: Callable[[np.ndarray], np.ndarray]
    dv: Callable[[np.ndarray], np.ndarray]
    ddv: Callable[[np.ndarray], np.ndarray]
    convexity_bound: Optional[float] = None
    growth_ok: bool = True

    def __post_init__(self):
        probe = _probe_grid()
        vals = self.ddv(probe)
        if not np.all(np.isfinite(vals)):
            raise ConfigError(f"{self.family}: V'' not finite on the probe grid")
        if self.convexity_bound is not None:
            if float(np.min(vals)) < self.convexity_bound - 1e-9:
                raise ConfigError(
                    f"{self.family}: convexity_bound {self.convexity_bound} exceeds "
                    f"probe-grid minimum of V''"
                )

    def check_grid(self, xs: np.ndarray) -> None:
        """Raise if the potential is singular at any of the points xs."""
        for f, name in ((self.v, "V"), (self.dv, "V'"), (self.ddv, "V''")):
            if not np.all(np.isfinite(f(np.asarray(xs, dtype=float)))):
                raise ConfigError(
                    f"{self.family}: {name} is not finite on the supplied grid "
                    "(kontsevich-penner grids must avoid x = 0)"
                )


def make_potential(family: str, **params) -> Potential:
    """Construct a Potential from a family tag and its parameters."""
    family = family.strip().lower()
    if family in ("quadratic",):
        theta = float(params.pop("theta"))
        if params:
            raise ConfigError(f"quadratic: unexpected params {sorted(params)}")
        if theta <= 0:
            raise ConfigError("quadratic requires theta > 0")
        return Potential(
            family="quadratic",
            params={"theta": theta},
            v=lambda x, t=theta: t * x ** 2,
            dv=lambda x, t=theta: 2.0 * t * x,
            ddv=lambda x, t=theta: 2.0 * t * np.ones_like(np.asarray(x, dtype=float)),
            convexity_bound=2.0 * theta,
        )
    if family in ("quartic-double-well", "quartic"):
        c = float(params.pop("c"))
        if params:
            raise ConfigError(f"quartic: unexpected params {sorted(params)}")
        return Potential(
            family="quartic-double-well",
            params={"c": c},
            v=lambda x, c=c: 0.25 * x ** 4 + 0.5 * c * x ** 2,
            dv=lambda x, c=c: x ** 3 + c * x,
            ddv=lambda x, c=c: 3.0 * x ** 2 + c,
            convexity_bound=c,
        )
    if family in ("kontsevich-penner", "kp"):
        a = float(params.pop("a"))
        b = float(params.pop("b", 0.0))
        if "cc" in params:
            c = float(params.pop("cc"))
        else:
            c = float(params.pop("c", 0.0))
        if params:
            raise ConfigError(f"kontsevich-penner: unexpected params {sorted(params)}")
        if a <= 0:
            raise ConfigError("kontsevich-penner requires a > 0")
        if c < 0:
            raise ConfigError("kontsevich-penner requires c >= 0")
        # inf of V'' = a x^2 - b + c/x^2 is 2 sqrt(ac) - b when c > 0, else -b
        bound = 2.0 * np.sqrt(a * c) - b if c > 0 else -b

        def v(x, a=a, b=b, c=c):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore"):
                logterm = -c * np.log(np.abs(x)) if c > 0 else 0.0
            return a * x ** 4 / 12.0 - 0.5 * b * x ** 2 + logterm

        def dv(x, a=a, b=b, c=c):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore"):
                logterm = -c / x if c > 0 else 0.0
            return a * x ** 3 / 3.0 - b * x + logterm

        def ddv(x, a=a, b=b, c=c):
            x = np.asarray(x, dtype=float)
            with np.errstate(divide="ignore"):
                logterm = c / x ** 2 if c > 0 else 0.0
            return a * x ** 2 - b + logterm

        return Potential(
            family="kontsevich-penner",
            params={"a": a, "b": b, "cc": c},
            v=v, dv=dv, ddv=ddv,
            convexity_bound=float(bound),
        )
    if family in ("polynomial", "free", "zero"):
        if family in ("free", "zero"):
            coeffs = np.zeros(1)
        else:
            coeffs = np.asarray(params.pop("coeffs"), dtype=float)
        if params:
            raise ConfigError(f"polynomial: unexpected params {sorted(params)}")
        while coeffs.size > 1 and coeffs[-1] == 0.0:
            coeffs = coeffs[:-1]
        deg = coeffs.size - 1
        if deg == 0:
            # degenerate constant: the free (V' = 0) dynamics
            poly = np.polynomial.Polynomial(coeffs)
            return Potential(
                family="polynomial",
                params={"c0": float(coeffs[0])},
                v=poly, dv=poly.deriv(), ddv=poly.deriv().deriv(),
                convexity_bound=0.0,
                growth_ok=False,
            )
        if deg < 2 or deg % 2 != 0:
            raise ConfigError("polynomial requires even leading degree >= 2")
        if coeffs[-1] <= 0:
            raise ConfigError("polynomial requires a positive leading coefficient")
        poly = np.polynomial.Polynomial(coeffs)
        d1 = poly.deriv()
        d2 = d1.deriv()
        # global min of V'': attained at a real critical point of V''' (or constant)
        if deg == 2:
            bound = float(coeffs[2] * 2.0)
        else:
            crit = d2.deriv().roots()
            crit = crit[np.abs(crit.imag) < 1e-9].real
            candidates = d2(crit) if crit.size else np.array([])
            bound = float(min(np.min(candidates), np.min(d2(_probe_grid())))) if candidates.size \
                else float(np.min(d2(_probe_grid())))
        return Potential(
            family="polynomial",
            params={f"c{k}": float(ck) for k, ck in enumerate(coeffs)},
            v=poly, dv=d1, ddv=d2,
            convexity_bound=bound,
        )
    raise ConfigError(f"unknown potential family {family!r}")


def parse_potential_spec(spec: str) -> Potential:
    """Parse the flag mini-grammar ``family:key=val,key=val``.

    Examples: ``quadratic:theta=0.5``, ``quartic:c=-2``,
    ``kontsevich-penner:a=12,b=0,cc=1``, ``polynomial:c2=0.5,c4=0.25``.
    """
    family, _, rest = spec.partition(":")
    family = family.strip().lower()
    kv = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise ConfigError(f"bad potential spec item {item!r}")
            try:
                kv[key.strip()] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad numeric value in potential spec: {item!r}") from exc
    if family == "polynomial":
        degs = sorted(int(k[1:]) for k in kv)
        coeffs = np.zeros(max(degs) + 1) if degs else np.zeros(1)
        for k, val in kv.items():
            coeffs[int(k[1:])] = val
        return make_potential("polynomial", coeffs=coeffs)
    return make_potential(family, **kv)


def potential_spec_dict(p: Potential) -> dict:
    """Canonical {family, params} mapping for run configs."""
    return {"family": p.family, "params": dict(p.params)}


# ---------------------------------------------------------------------------
# closed-form equilibrium densities
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def equilibrium_support(p: Potential):
    """Closed-form support of the equilibrium measure, as a list of intervals."""
    if p.family == "quadratic":
        r = np.sqrt(2.0 / p.params["theta"])
        return [(-r, r)]
    if p.family == "quartic-double-well":
        c = p.params["c"]
        if c == -2.0:
            return [(-2.0, 2.0)]
        if c < -2.0:
            a = np.sqrt(-2.0 - c)
            b = np.sqrt(2.0 - c)
            return [(-b, -a), (a, b)]
        a = np.sqrt((np.sqrt(4.0 * c ** 2 + 48.0) - 2.0 * c) / 3.0)
        return [(-a, a)]
    return None


def _closed_form_density(p: Potential) -> Callable[[np.ndarray], np.ndarray]:
    if p.family == "quadratic":
        r2 = 2.0 / p.params["theta"]

        def rho(x, r2=r2):
            return (2.0 / (np.pi * r2)) * np.sqrt(np.maximum(r2 - x ** 2, 0.0))

        return rho
    c = p.params["c"]
    if c == -2.0:
        def rho(x):
            return (1.0 / (2.0 * np.pi)) * x ** 2 * np.sqrt(np.maximum(4.0 - x ** 2, 0.0))

        return rho
    if c < -2.0:
        a2, b2 = -2.0 - c, 2.0 - c

        def rho(x, a2=a2, b2=b2):
            u = x ** 2
            inside = (u >= a2) & (u <= b2)
            out = np.zeros_like(np.asarray(x, dtype=float))
            val = np.abs(x) * np.sqrt(np.maximum((u - a2) * (b2 - u), 0.0)) / (2.0 * np.pi)
            return np.where(inside, val, out)

        return rho
    a2 = (np.sqrt(4.0 * c ** 2 + 48.0) - 2.0 * c) / 3.0
    b0 = (c + np.sqrt(c ** 2 / 4.0 + 3.0)) / 3.0

    def rho(x, a2=a2, b0=b0):
        return (0.5 * x ** 2 + b0) * np.sqrt(np.maximum(a2 - x ** 2, 0.0)) / np.pi

    return rho


def equilibrium_closed_form(p: Potential, left: float, right: float, n: int) -> GridDensity:
    """Discretize the closed-form equilibrium density onto a grid.

    Interior cells take the midpoint value; cells straddling a support edge
    take the exact cell average by 16-point Gauss-Legendre quadrature on the
    intersection with the support (midpoint evaluation is O(sqrt(h))-wrong at
    the square-root edge).  Errors if the raw mass is off by >= 1e-6 at
    n >= 1024.
    """
    if p.family not in ("quadratic", "quartic-double-well"):
        raise ConfigError(f"no closed-form equilibrium for family {p.family!r}")
    support = equilibrium_support(p)
    lo = support[0][0]
    hi = support[-1][1]
    if left > lo or right < hi:
        raise ConfigError(
            f"grid [{left}, {right}] does not cover the equilibrium support "
            f"[{lo:.6g}, {hi:.6g}]"
        )
    if not (right > left) or n < 8:
        raise ConfigError("equilibrium_closed_form requires right > left and n >= 8")
    rho = _closed_form_density(p)
    h = (right - left) / n
    cell_lo = left + np.arange(n) * h
    cell_hi = cell_lo + h
    # Exact cell averages by 16-point Gauss-Legendre on the intersection of
    # each cell with the support; the square-root edges make plain midpoint
    # evaluation O(sqrt(h))-wrong at boundary cells and O(h^{3/2})-wrong in
    # the adjacent layer, which would break the 1e-6 mass contract.
    vals = np.zeros(n)
    for (s_lo, s_hi) in support:
        a = np.maximum(cell_lo, s_lo)
        b = np.minimum(cell_hi, s_hi)
        w = b - a
        live = w > 0
        if not np.any(live):
            continue
        nodes = 0.5 * w[live, None] * _GL_NODES[None, :] + 0.5 * (a + b)[live, None]
        vals[live] += 0.5 * w[live] * (rho(nodes) @ _GL_WEIGHTS)
    vals /= h

    if left == -right:
        # every closed form here is even; mirroring the upper half makes the
        # grid values symmetric under cell reflection exactly
        upper = vals[(n + 1) // 2:]
        vals[: n // 2] = upper[::-1]

    raw_mass = float(vals.sum()) * h
    if n >= 1024 and abs(raw_mass - 1.0) >= 1e-6:
        raise ConfigError(
            f"closed-form equilibrium mass {raw_mass} deviates from 1 by >= 1e-6 "
            f"at n = {n}; check grid coverage"
        )
    return GridDensity(left, right, n, vals)


def euler_lagrange_residual(density: GridDensity, p: Potential) -> float:
    """Sup of |H rho - V'/2| over the interior of the density's support.

    Support is the set of cells carrying more than 1% of the peak density;
    its interior excludes the boundary cell of each connected run, where the
    stationarity identity does not hold pointwise (the cell straddles the
    square-root edge).
    """
    from .freecalc import hilbert_transform

    mask = density.values > 0.01 * float(density.values.max())
    interior = mask.copy()
    interior[1:] &= mask[:-1]
    interior[:-1] &= mask[1:]
    interior[0] = interior[-1] = False
    if not np.any(interior):
        raise ConfigError("euler_lagrange_residual: no cells above the density threshold")
    xs = density.cell_centers()
    p.check_grid(xs[interior])
    hfield = hilbert_transform(density).values
    resid = np.abs(hfield[interior] - 0.5 * p.dv(xs[interior]))
    return float(resid.max())
