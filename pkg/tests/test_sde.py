import numpy as np
import pytest

from coulombflow.densities import DensitySpec, quantile_positions
from coulombflow.errors import ConfigError, NumericalError
from coulombflow.potentials import make_potential
from coulombflow.sde import (
    SdeConfig,
    StepStats,
    init_state,
    path_rng,
    simulate_ensemble,
    simulate_path,
    step,
)

QUAD = make_potential("quadratic", theta=0.5)
FREE = make_potential("free")


# ---------------------------------------------------------------------------
# init_state / step
# ---------------------------------------------------------------------------

def test_init_state_basics():
    s = init_state([-1.0, 0.0, 1.0], 2.0)
    assert s.n == 3 and s.t == 0.0
    with pytest.raises(ConfigError):
        init_state([0.0, 0.0], 2.0)
    with pytest.raises(ConfigError):
        init_state([0.0, 1.0], 0.5)


def test_init_state_from_quantiles():
    pos = quantile_positions(DensitySpec("equilibrium"), 64, -3.0, 3.0, QUAD)
    s = init_state(pos, 2.0)
    assert s.min_gap() > 0


def test_step_single_particle_is_plain_drift():
    s = init_state([0.7], 2.0)
    out = step(s, QUAD, 0.01, np.zeros(1), truncation_radius=1e6)
    assert out.lambdas[0] == pytest.approx(0.7 * (1 - 1.0 * 0.01 / 2), abs=1e-15)


def test_step_two_particle_coulomb_drift():
    s = init_state([-1.0, 1.0], 2.0)
    out = step(s, FREE, 0.01, np.zeros(2), truncation_radius=1e6)
    assert np.allclose(out.lambdas, [-1.0025, 1.0025])
    assert out.t == pytest.approx(0.01)


def test_step_truncated_branch():
    eps = 1e-4
    stats = StepStats()
    s = init_state([-eps, eps], 2.0)
    out = step(s, FREE, 1e-6, np.zeros(2), truncation_radius=1000.0, stats=stats)
    # |gap| = 2e-4 < 1/R = 1e-3, so the linear branch R^2 x fires
    drift = (out.lambdas[1] - eps) / 1e-6
    assert drift == pytest.approx(0.5 * 1000.0 ** 2 * 2 * eps, rel=1e-12)
    assert stats.truncations == 2


def test_step_ordering_always_strict():
    rng = path_rng(5, 0)
    pos = quantile_positions(DensitySpec("gaussian", {"mean": 0, "sigma": 0.5}),
                             32, -3.0, 3.0, QUAD)
    s = init_state(pos, 2.0)
    for _ in range(200):
        dw = rng.standard_normal(32) * np.sqrt(1e-3)
        s = step(s, QUAD, 1e-3, dw, truncation_radius=20 * 32 ** 2 / 6.0, rng=rng)
        assert np.all(np.diff(s.lambdas) > 0)


def test_step_requires_rng_for_collision_retry():
    # opposing increments large enough to cross with no rng to re-sample from
    s = init_state([-1.0, 1.0], 2.0)
    with pytest.raises(ConfigError):
        step(s, FREE, 0.01, np.array([3.0, -3.0]), truncation_radius=1e6)


# ---------------------------------------------------------------------------
# simulate_path / determinism
# ---------------------------------------------------------------------------

def test_path_determinism_bitwise():
    cfg = SdeConfig(n_particles=16, beta=2.0, potential=QUAD, t_end=0.2,
                    init=DensitySpec("equilibrium"), snapshot_times=(0.0, 0.1, 0.2),
                    seed=42)
    p1 = simulate_path(cfg, 3)
    p2 = simulate_path(cfg, 3)
    for a, b in zip(p1.snapshots, p2.snapshots):
        assert np.array_equal(a.atoms, b.atoms)
    assert np.array_equal(p1.m2, p2.m2)


def test_paths_differ_across_indices():
    cfg = SdeConfig(n_particles=8, beta=2.0, potential=QUAD, t_end=0.1,
                    init=DensitySpec("equilibrium"), snapshot_times=(0.1,), seed=42)
    a = simulate_path(cfg, 0)
    b = simulate_path(cfg, 1)
    assert not np.array_equal(a.snapshots[0].atoms, b.snapshots[0].atoms)


def test_ensemble_thread_count_invariance():
    cfg = SdeConfig(n_particles=8, beta=2.0, potential=QUAD, t_end=0.1,
                    init=DensitySpec("equilibrium"), snapshot_times=(0.1,), seed=9)
    e1 = simulate_ensemble(cfg, 6, threads=1)
    e2 = simulate_ensemble(cfg, 6, threads=3)
    assert np.array_equal(e1.mean_measures[0].atoms, e2.mean_measures[0].atoms)
    assert np.array_equal(e1.m2_mean, e2.m2_mean)


def test_ensemble_single_path_equals_path():
    cfg = SdeConfig(n_particles=8, beta=2.0, potential=QUAD, t_end=0.1,
                    init=DensitySpec("equilibrium"), snapshot_times=(0.1,), seed=4)
    ens = simulate_ensemble(cfg, 1, threads=1)
    path = simulate_path(cfg, 0)
    assert np.array_equal(ens.mean_measures[0].atoms, path.snapshots[0].atoms)


def test_pooling_is_sorted_and_permutation_invariant():
    cfg = SdeConfig(n_particles=8, beta=2.0, potential=QUAD, t_end=0.05,
                    init=DensitySpec("equilibrium"), snapshot_times=(0.05,), seed=4)
    ens = simulate_ensemble(cfg, 3, threads=1)
    pooled = ens.mean_measures[0].atoms
    manual = np.sort(np.concatenate([p.snapshots[0].atoms for p in ens.paths][::-1]))
    assert np.array_equal(pooled, manual)


# ---------------------------------------------------------------------------
# statistical laws (fast, reduced-size shadows of the acceptance runs)
# ---------------------------------------------------------------------------

def test_ou_stationary_variance():
    # N=1: dlam = -lam/2 dt + dW, so Var(lam(t)) -> 2/(beta K) = 1 at beta=2
    cfg = SdeConfig(n_particles=1, beta=2.0, potential=QUAD, t_end=5.0,
                    init=DensitySpec("gaussian", {"mean": 0.0, "sigma": 1.0}),
                    snapshot_times=(5.0,), seed=11, dt=2e-3)
    ens = simulate_ensemble(cfg, 600, threads=1)
    lam5 = np.array([p.snapshots[0].atoms[0] for p in ens.paths])
    var = lam5.var(ddof=1)
    stderr = var * np.sqrt(2.0 / (lam5.size - 1))
    assert abs(var - 1.0) < 3 * stderr + 0.02


def test_moment_ode_beta2():
    # at beta = 2 the 1/N correction vanishes: E m2' = 1 - E m2 exactly
    cfg = SdeConfig(n_particles=32, beta=2.0, potential=QUAD, t_end=1.0,
                    init=DensitySpec("gaussian", {"mean": 0.0, "sigma": 0.5}),
                    snapshot_times=(0.5, 1.0), seed=21, dt=1e-3)
    ens = simulate_ensemble(cfg, 120, threads=1)
    pos = quantile_positions(cfg.init, 32, *cfg.domain, QUAD)
    m2_0 = float(np.mean(pos ** 2))
    for tt in (0.5, 1.0):
        k = int(np.argmin(np.abs(ens.times - tt)))
        exact = m2_0 * np.exp(-tt) + (1.0 - np.exp(-tt))
        assert abs(ens.m2_mean[k] - exact) < 3 * ens.m2_stderr[k] + 1e-3


def test_truncation_never_fires_at_default_radius():
    cfg = SdeConfig(n_particles=64, beta=2.0, potential=QUAD, t_end=0.5,
                    init=DensitySpec("equilibrium"), snapshot_times=(0.5,),
                    seed=3, dt=1e-4)
    path = simulate_path(cfg, 0)
    assert path.truncations == 0


def test_supermartingale_moment_bound():
    # ensemble-mean R_t = m2/2 below the comparison ODE with gamma = 1
    cfg = SdeConfig(n_particles=16, beta=2.0, potential=QUAD, t_end=1.0,
                    init=DensitySpec("equilibrium"), seed=13, dt=1e-3)
    ens = simulate_ensemble(cfg, 80, threads=1)
    n, beta, gamma = 16, 2.0, 1.0
    r0 = ens.m2_mean[0] / 2.0
    drift_const = 1.0 / (beta * n) + (n - 1) / (2.0 * n) + gamma / 2.0
    bound = (r0 + drift_const / gamma) * np.exp(gamma * ens.times) - drift_const / gamma
    r_mean = ens.m2_mean / 2.0
    assert np.all(r_mean <= bound + 3 * ens.m2_stderr / 2.0 + 1e-9)


def test_martingale_residual_centered():
    # <L_N(t), x^2> - <L_N(0), x^2> - int drift ds has mean ~ 0 across paths
    n = 32
    cfg = SdeConfig(n_particles=n, beta=2.0, potential=QUAD, t_end=1.0,
                    init=DensitySpec("gaussian", {"mean": 0.0, "sigma": 0.5}),
                    seed=17, dt=1e-3)
    ens = simulate_ensemble(cfg, 100, threads=1)
    pos = quantile_positions(cfg.init, n, *cfg.domain, QUAD)
    m2_0 = float(np.mean(pos ** 2))
    dts = np.diff(np.concatenate([[0.0], ens.times]))
    resid = []
    for p in ens.paths:
        drift = 1.0 + (2.0 / 2.0 - 1.0) / n - p.xvp
        integral = np.cumsum(drift * dts)
        resid.append(p.m2[-1] - m2_0 - integral[-1])
    resid = np.array(resid)
    stderr = resid.std(ddof=1) / np.sqrt(resid.size)
    assert abs(resid.mean()) < 3 * stderr + 2e-3


def test_variance_decay_in_n():
    variances = []
    for n in (8, 32):
        cfg = SdeConfig(n_particles=n, beta=2.0, potential=QUAD, t_end=0.5,
                        init=DensitySpec("equilibrium"), snapshot_times=(0.5,),
                        seed=23, dt=1e-3)
        ens = simulate_ensemble(cfg, 100, threads=1)
        stats = np.array([float(np.mean(p.snapshots[0].atoms ** 2)) for p in ens.paths])
        variances.append(stats.var(ddof=1))
    assert variances[1] < variances[0]


def test_config_validation():
    with pytest.raises(ConfigError):
        SdeConfig(n_particles=0, beta=2.0, potential=QUAD, t_end=1.0,
                  init=DensitySpec("equilibrium"))
    with pytest.raises(ConfigError):
        SdeConfig(n_particles=4, beta=0.5, potential=QUAD, t_end=1.0,
                  init=DensitySpec("equilibrium"))
    with pytest.raises(ConfigError):
        SdeConfig(n_particles=4, beta=2.0, potential=QUAD, t_end=1.0,
                  init=DensitySpec("equilibrium"), snapshot_times=(2.0,))


def test_default_dt_and_radius():
    cfg = SdeConfig(n_particles=10, beta=2.0, potential=QUAD, t_end=1.0,
                    init=DensitySpec("equilibrium"))
    assert cfg.dt == pytest.approx(1e-3)  # K+ = max(1, 1) = 1
    left, right = cfg.domain
    assert cfg.truncation_radius == pytest.approx(20 * 100 / (right - left))
