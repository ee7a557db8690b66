"""The acceptance gate: every criterion at its pinned tolerance.

Each test drives the corresponding battery in coulombflow.acceptance (shared
with `coulombflow verify`) and prints its one-line verdict; the suite passes
only when every criterion passes.
"""

import pytest

from coulombflow import acceptance


def _run(key):
    result = acceptance.run_criterion(key)
    status = "PASS" if result.passed else "FAIL"
    print(f"\n{status}  {key}  [{result.seconds:.1f}s]  {result.details}")
    assert result.passed, f"{key}: {result.details}"


def test_criterion_01_equilibrium_fixed_point():
    _run("1-equilibrium-fixed-point")


def test_criterion_02_hilbert_accuracy():
    _run("2-hilbert-accuracy")


def test_criterion_03_euler_lagrange():
    _run("3-euler-lagrange")


def test_criterion_04_moment_ode():
    _run("4-moment-ode")


def test_criterion_05_dissipation():
    _run("5-dissipation")


def test_criterion_06_contraction():
    _run("6-contraction")


def test_criterion_07_convergence():
    _run("7-convergence")


def test_criterion_08_hwi():
    _run("8-hwi")


def test_criterion_09_sde_moment_law():
    _run("9-sde-moment-law")


def test_criterion_10_lln():
    _run("10-lln")


def test_criterion_11_chaos():
    _run("11-chaos")


def test_criterion_12_matrix_oracle():
    _run("12-matrix-oracle")


def test_criterion_13_burgers():
    _run("13-burgers")


def test_criterion_14_determinism():
    _run("14-determinism")
