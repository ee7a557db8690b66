import numpy as np
import pytest

from coulombflow.densities import DensitySpec
from coulombflow.errors import ConfigError
from coulombflow.matrix_oracle import (
    HermitianState,
    hermitian_eigenvalues,
    oracle_compare,
    simulate_matrix_ensemble,
    step_matrix,
)
from coulombflow.potentials import make_potential
from coulombflow.sde import SdeConfig, path_rng, simulate_ensemble

QUAD = make_potential("quadratic", theta=0.5)


class _ZeroRng:
    def standard_normal(self, size=None):
        return np.zeros(size) if size is not None else 0.0


# ---------------------------------------------------------------------------
# eigensolver
# ---------------------------------------------------------------------------

def test_eigenvalues_diagonal():
    s = HermitianState(0.0, np.diag([1.0, 2.0, 3.0]).astype(complex))
    assert np.allclose(hermitian_eigenvalues(s), [1.0, 2.0, 3.0])


def test_eigenvalues_flip():
    s = HermitianState(0.0, np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex))
    assert np.allclose(hermitian_eigenvalues(s), [-1.0, 1.0])


def test_eigenvalues_random_vs_lapack_oracle():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    h = 0.5 * (a + a.conj().T)
    s = HermitianState(0.0, h)
    w = hermitian_eigenvalues(s, check_reconstruction=True)
    assert np.abs(w - np.linalg.eigvalsh(h)).max() < 1e-10
    assert abs(w.sum() - np.trace(h).real) < 1e-10


def test_hermitian_state_validation():
    with pytest.raises(ConfigError):
        HermitianState(0.0, np.array([[0.0, 1.0], [2.0, 0.0]], dtype=complex))


# ---------------------------------------------------------------------------
# matrix stepping
# ---------------------------------------------------------------------------

def test_step_matrix_linear_drift_quadratic():
    # V'(X) = 2 theta X: no eigendecomposition, plain matrix OU update
    x0 = np.array([[1.0, 0.5], [0.5, -1.0]], dtype=complex)
    s = HermitianState(0.0, x0)
    out = step_matrix(s, QUAD, 0.01, _ZeroRng())
    assert np.allclose(out.entries, x0 - 0.005 * x0)


def test_step_matrix_spectral_drift_diagonal():
    quart = make_potential("quartic", c=1.0)
    s = HermitianState(0.0, np.diag([0.5, 1.5]).astype(complex))
    out = step_matrix(s, quart, 0.01, _ZeroRng())
    lam = np.sort(np.diag(out.entries).real)
    expect = np.sort(np.array([0.5, 1.5]) - 0.005 * quart.dv(np.array([0.5, 1.5])))
    assert np.allclose(lam, expect)


def test_step_matrix_hermitian_preserved():
    rng = path_rng(5, 0, namespace=1)
    s = HermitianState(0.0, np.zeros((8, 8), dtype=complex))
    for _ in range(50):
        s = step_matrix(s, QUAD, 1e-2, rng)
    x = s.entries
    assert np.abs(x - x.conj().T).max() < 1e-12


def test_step_matrix_rejects_log_potential():
    kp = make_potential("kontsevich-penner", a=12.0, b=0.0, cc=1.0)
    s = HermitianState(0.0, np.zeros((4, 4), dtype=complex))
    with pytest.raises(ConfigError):
        step_matrix(s, kp, 1e-2, _ZeroRng())


def test_trace_mean_centered():
    # E[trace X_t] stays 0 for V = K x^2 / 2 from X_0 = 0 (symmetry of the law)
    res = simulate_matrix_ensemble(8, QUAD, 1e-2, 0.5, 60, seed=6, snapshot_times=(0.5,))
    means = np.array([pp[0].atoms.mean() for pp in res.per_path])
    stderr = means.std(ddof=1) / np.sqrt(means.size)
    assert abs(means.mean()) <= 3 * stderr + 1e-3


def test_matrix_moment_matches_particle_ode():
    # second moment of eigenvalues obeys m2' = 1 - m2 at beta = 2, N finite
    res = simulate_matrix_ensemble(32, QUAD, 1e-3, 1.0, 50, seed=8, snapshot_times=(1.0,))
    m2 = np.array([float(np.mean(pp[0].atoms ** 2)) for pp in res.per_path])
    exact = 1.0 - np.exp(-1.0)  # X0 = 0
    stderr = m2.std(ddof=1) / np.sqrt(m2.size)
    assert abs(m2.mean() - exact) <= 3 * stderr + 2e-3


# ---------------------------------------------------------------------------
# oracle comparison
# ---------------------------------------------------------------------------

def test_oracle_compare_split_halves_control():
    res = simulate_matrix_ensemble(16, QUAD, 1e-3, 0.5, 80, seed=12, snapshot_times=(0.5,))
    half_a = np.concatenate([pp[0].atoms for pp in res.per_path[:40]])
    half_b = np.concatenate([pp[0].atoms for pp in res.per_path[40:]])
    from coulombflow.measures import EmpiricalMeasure

    report = oracle_compare(EmpiricalMeasure(half_a), EmpiricalMeasure(half_b),
                            n_permutations=200)
    assert report["p_value"] >= 0.01


def test_oracle_compare_detects_scale_mismatch():
    # both sides start from the theta=1/2 equilibrium quantiles; the particle
    # run confines at theta=1 and contracts to the smaller support by t=1
    from coulombflow.densities import quantile_positions

    pos = quantile_positions(DensitySpec("equilibrium"), 16, -3.0, 3.0, QUAD)
    res = simulate_matrix_ensemble(16, QUAD, 1e-3, 1.0, 60, seed=13,
                                   snapshot_times=(1.0,), init_positions=pos)
    steep = make_potential("quadratic", theta=1.0)
    cfg = SdeConfig(n_particles=16, beta=2.0, potential=steep, t_end=1.0,
                    init=DensitySpec("semicircle", {"r": 2.0}), snapshot_times=(1.0,),
                    seed=14, dt=1e-3, domain=(-3.0, 3.0))
    ens = simulate_ensemble(cfg, 60, threads=1)
    report = oracle_compare(res.pooled[0], ens.mean_measures[0], n_permutations=200)
    assert report["p_value"] <= 0.005


def test_oracle_match_same_law():
    # beta = 2 realization: matrix eigenvalues and particles from the same
    # initial quantiles sample the same law at t = 1
    from coulombflow.densities import quantile_positions

    pos = quantile_positions(DensitySpec("equilibrium"), 16, -3.0, 3.0, QUAD)
    res = simulate_matrix_ensemble(16, QUAD, 1e-3, 1.0, 60, seed=15,
                                   snapshot_times=(1.0,), init_positions=pos)
    cfg = SdeConfig(n_particles=16, beta=2.0, potential=QUAD, t_end=1.0,
                    init=DensitySpec("equilibrium"), snapshot_times=(1.0,),
                    seed=16, dt=1e-3)
    ens = simulate_ensemble(cfg, 60, threads=1)
    report = oracle_compare(res.pooled[0], ens.mean_measures[0], n_permutations=200)
    assert report["p_value"] >= 0.01
