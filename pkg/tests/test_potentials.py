import numpy as np
import pytest
from scipy import integrate

from coulombflow.errors import ConfigError
from coulombflow.measures import build_grid_density
from coulombflow.potentials import (
    equilibrium_closed_form,
    equilibrium_support,
    euler_lagrange_residual,
    make_potential,
    parse_potential_spec,
    potential_spec_dict,
)


# ---------------------------------------------------------------------------
# make_potential
# ---------------------------------------------------------------------------

def test_quadratic_values():
    p = make_potential("quadratic", theta=0.5)
    assert p.v(1.0) == 0.5
    assert p.dv(1.0) == 1.0
    assert p.ddv(1.0) == 1.0
    assert p.convexity_bound == 1.0
    assert p.growth_ok


def test_quartic_double_well_critical_point():
    p = make_potential("quartic", c=-2.0)
    assert p.family == "quartic-double-well"
    assert abs(p.dv(np.sqrt(2.0))) < 1e-14
    assert p.convexity_bound == -2.0


def test_kontsevich_penner_values():
    p = make_potential("kontsevich-penner", a=12.0, b=0.0, cc=1.0)
    assert abs(p.v(1.0) - 1.0) < 1e-14
    assert abs(p.dv(1.0) - 3.0) < 1e-14
    assert p.convexity_bound == pytest.approx(2.0 * np.sqrt(12.0))


def test_polynomial_and_free():
    p = make_potential("polynomial", coeffs=[0.0, 0.0, 0.5, 0.0, 0.25])
    assert p.v(1.0) == pytest.approx(0.75)
    # V'' = 1 + 3 x^2 has global minimum 1
    assert p.convexity_bound == pytest.approx(1.0, abs=1e-9)
    free = make_potential("free")
    assert free.v(3.0) == 0.0 and free.dv(3.0) == 0.0
    assert free.convexity_bound == 0.0
    assert not free.growth_ok


def test_make_potential_errors():
    with pytest.raises(ConfigError):
        make_potential("quadratic", theta=-1.0)
    with pytest.raises(ConfigError):
        make_potential("kontsevich-penner", a=-1.0, cc=1.0)
    with pytest.raises(ConfigError):
        make_potential("polynomial", coeffs=[0.0, 0.0, 0.0, 1.0])  # odd degree
    with pytest.raises(ConfigError):
        make_potential("polynomial", coeffs=[0.0, 0.0, -1.0])  # nonpositive leading
    with pytest.raises(ConfigError):
        make_potential("mystery", x=1.0)


def test_convexity_bound_never_above_probe_minimum():
    probe = np.linspace(-20, 20, 10_001)
    for p in (
        make_potential("quadratic", theta=2.0),
        make_potential("quartic", c=-3.0),
        make_potential("polynomial", coeffs=[1.0, 0.0, -1.0, 0.0, 0.125]),
    ):
        assert p.convexity_bound <= np.min(p.ddv(probe)) + 1e-9


def test_spec_grammar_roundtrip():
    p = parse_potential_spec("quartic:c=-2")
    assert p.family == "quartic-double-well" and p.params["c"] == -2.0
    p = parse_potential_spec("kontsevich-penner:a=12,b=0,cc=1")
    assert potential_spec_dict(p) == {
        "family": "kontsevich-penner",
        "params": {"a": 12.0, "b": 0.0, "cc": 1.0},
    }
    p = parse_potential_spec("quadratic:theta=0.5")
    assert p.params == {"theta": 0.5}
    with pytest.raises(ConfigError):
        parse_potential_spec("quadratic:theta")


def test_kp_singularity_check():
    p = make_potential("kontsevich-penner", a=12.0, b=0.0, cc=1.0)
    with pytest.raises(ConfigError):
        p.check_grid(np.array([-1.0, 0.0, 1.0]))
    p.check_grid(np.array([-1.0, 0.5, 1.0]))  # fine


# ---------------------------------------------------------------------------
# closed-form equilibria (quadrature oracles)
# ---------------------------------------------------------------------------

def test_semicircle_closed_form():
    p = make_potential("quadratic", theta=0.5)
    gd = equilibrium_closed_form(p, -2.5, 2.5, 1024)
    xs = gd.cell_centers()
    # rho(0) = 1/pi for the radius-2 semicircle
    assert abs(gd.values[np.argmin(np.abs(xs))] - 1.0 / np.pi) < 1e-4
    assert equilibrium_support(p) == [(-2.0, 2.0)]


def test_quartic_equal_case_value():
    p = make_potential("quartic", c=-2.0)
    gd = equilibrium_closed_form(p, -2.5, 2.5, 1024)
    xs = gd.cell_centers()
    j = np.argmin(np.abs(xs - np.sqrt(2.0)))
    assert abs(gd.values[j] - np.sqrt(2.0) / np.pi) < 1e-3


def test_quartic_two_cut_component_mass():
    p = make_potential("quartic", c=-3.0)
    gd = equilibrium_closed_form(p, -2.8, 2.8, 2048)
    xs = gd.cell_centers()
    pos_mass = float(gd.values[xs > 0].sum()) * gd.h
    # quadrature oracle: each component of the two-cut density carries 1/2
    oracle, _ = integrate.quad(
        lambda x: x * np.sqrt((x ** 2 - 1.0) * (5.0 - x ** 2)) / (2 * np.pi), 1.0, np.sqrt(5.0)
    )
    assert abs(oracle - 0.5) < 1e-9
    assert abs(pos_mass - 0.5) < 1e-6


def test_quartic_one_cut_normalization_oracle():
    # c = 1 printed coefficients: a^2 = (sqrt(52)-2)/3, b0 = (1+sqrt(3.25))/3
    a2 = (np.sqrt(52.0) - 2.0) / 3.0
    b0 = (1.0 + np.sqrt(3.25)) / 3.0
    assert a2 == pytest.approx(1.73703, abs=1e-5)
    assert b0 == pytest.approx(0.93426, abs=1e-5)
    oracle, _ = integrate.quad(
        lambda x: (0.5 * x ** 2 + b0) * np.sqrt(a2 - x ** 2) / np.pi,
        -np.sqrt(a2), np.sqrt(a2),
    )
    assert abs(oracle - 1.0) < 1e-4


def test_closed_form_mass_before_renormalization():
    # the raw discretized mass must sit within 1e-6 of 1 at high resolution:
    # the constructor errors otherwise, so construction succeeding is the check
    for fam, kw, dom in (
        ("quadratic", {"theta": 0.5}, 2.5),
        ("quartic", {"c": -3.0}, 2.8),
        ("quartic", {"c": -2.0}, 2.5),
        ("quartic", {"c": 1.0}, 2.0),
    ):
        p = make_potential(fam, **kw)
        gd = equilibrium_closed_form(p, -dom, dom, 2048)
        assert abs(gd.mass() - 1.0) < 1e-12


def test_quartic_density_even_symmetry():
    p = make_potential("quartic", c=-3.0)
    gd = equilibrium_closed_form(p, -2.8, 2.8, 1024)
    assert np.array_equal(gd.values, gd.values[::-1])


def test_closed_form_errors():
    kp = make_potential("kontsevich-penner", a=12.0, b=0.0, cc=1.0)
    with pytest.raises(ConfigError):
        equilibrium_closed_form(kp, -3.0, 3.0, 512)
    quad = make_potential("quadratic", theta=0.5)
    with pytest.raises(ConfigError):
        equilibrium_closed_form(quad, -1.0, 1.0, 512)  # grid misses support


# ---------------------------------------------------------------------------
# Euler-Lagrange residual
# ---------------------------------------------------------------------------

def test_el_residual_semicircle():
    p = make_potential("quadratic", theta=0.5)
    gd = equilibrium_closed_form(p, -2.5, 2.5, 1024)
    assert euler_lagrange_residual(gd, p) <= 5e-3


def test_el_residual_quartic_one_cut():
    p = make_potential("quartic", c=1.0)
    gd = equilibrium_closed_form(p, -2.0, 2.0, 1024)
    assert euler_lagrange_residual(gd, p) <= 1e-2


def test_el_residual_uniform_is_far():
    # independent oracle: H(uniform[-2,2])(x) = (1/4) log|(x+2)/(x-2)|,
    # nowhere near x/2 in the bulk
    p = make_potential("quadratic", theta=0.5)
    u = build_grid_density(lambda x: np.where(np.abs(x) <= 2, 1.0, 0.0), -2.5, 2.5, 1024)
    assert euler_lagrange_residual(u, p) > 0.1
