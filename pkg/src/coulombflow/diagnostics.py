"""Quantitative verification of the theory's claims on computed trajectories:
entropy dissipation, transport-distance contraction, the HWI inequality,
long-time convergence, the law of large numbers, and chaos statistics.

Rate conventions: the implemented transport equation dissipates free entropy
at the measured rate d Sigma/dt = -c* int (V' - 2 H rho)^2 rho with c* = 1/2,
and contracts W2 between two solutions at rate K/2 when V'' >= K (fixed by
the exact translate solution of the quadratic family).  Reports carry both
the measured normalization and the nominal one so the discrepancy stays
visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .freecalc import grad_norm_sq, relative_free_entropy
from .measures import EmpiricalMeasure, GridDensity, wasserstein
from .pde import Trajectory
from .potentials import Potential, euler_lagrange_residual
from .sde import EnsembleResult

__all__ = [
    "DissipationReport",
    "ContractionReport",
    "dissipation_check",
    "contraction_check",
    "hwi_check",
    "convergence_report",
    "lln_report",
    "chaos_statistics",
    "bootstrap_interval",
]

BOOTSTRAP_RESAMPLES = 200
BOOTSTRAP_SEED = 20_240_601


@dataclass(frozen=True)
class DissipationReport:
    times: np.ndarray
    lhs: np.ndarray                  # centered-difference d Sigma_V / dt
    rhs: np.ndarray                  # -c* grad_sq at the same snapshots
    fitted_constant: Optional[float]
    max_rel_err: Optional[float]

    def verdict(self, target: float = 0.5, tol: float = 0.02,
                rel_tol: float = 0.05) -> bool:
        if self.fitted_constant is None:
            return bool(np.all(np.abs(self.lhs) < 1e-4))
        return (abs(self.fitted_constant - target) <= tol
                and self.max_rel_err is not None and self.max_rel_err <= rel_tol)

    def as_dict(self) -> dict:
        return {
            "fitted_constant": self.fitted_constant,
            "max_rel_err": self.max_rel_err,
            "entropy_nonincreasing": bool(np.all(self.lhs <= 1e-6)),
        }


@dataclass(frozen=True)
class ContractionReport:
    times: np.ndarray
    w2: np.ndarray
    fitted_rate: Optional[float]
    bound_rate: float
    verdict: bool

    def as_dict(self) -> dict:
        return {
            "fitted_rate": self.fitted_rate,
            "bound_rate": self.bound_rate,
            "verdict": bool(self.verdict),
        }


def dissipation_check(trajectory: Trajectory) -> DissipationReport:
    """Fit d Sigma_V/dt = -c* grad_sq over uniformly spaced snapshots.

    The entropy derivative uses centered differences, so at least five
    snapshots with uniform spacing are required; snapshots whose gradient
    norm is below 1e-6 are excluded from the fit and the error sup.  A run
    that is degenerate everywhere reports the constant as undefined (None).
    """
    ts = np.asarray(trajectory.times, dtype=float)
    if ts.size < 5:
        raise ConfigError("dissipation_check needs at least 5 snapshots")
    spacing = np.diff(ts)
    if np.max(np.abs(spacing - spacing[0])) > 1e-9 * max(1.0, spacing[0]):
        raise ConfigError("dissipation_check needs uniform snapshot spacing")
    if spacing[0] > 0.05 + 1e-12:
        raise ConfigError("dissipation_check needs snapshot spacing <= 0.05")
    sigma = np.array([d.sigma_v for d in trajectory.diagnostics])
    grad = np.array([d.grad_sq for d in trajectory.diagnostics])
    lhs = (sigma[2:] - sigma[:-2]) / (ts[2:] - ts[:-2])
    gmid = grad[1:-1]
    tmid = ts[1:-1]
    live = gmid > 1e-6
    if not np.any(live):
        return DissipationReport(tmid, lhs, np.zeros_like(lhs), None, None)
    cstar = -float(np.sum(lhs[live] * gmid[live]) / np.sum(gmid[live] ** 2))
    rel = np.abs(lhs[live] + cstar * gmid[live]) / (abs(cstar) * gmid[live])
    return DissipationReport(tmid, lhs, -cstar * gmid, cstar, float(rel.max()))


def contraction_check(traj_a: Trajectory, traj_b: Trajectory, K: float,
                      tol: float = 0.05) -> ContractionReport:
    """W2 between two trajectories against the bound w2(0) exp(-K t / 2).

    The K/2 rate is the measured normalization of the implemented flow (the
    nominal statement carries rate K; the exact translate solution fixes the
    factor, and both are recorded by the caller's report).
    """
    if traj_a.grid != traj_b.grid:
        raise ConfigError("contraction_check requires matching grids")
    if traj_a.times != traj_b.times:
        raise ConfigError("contraction_check requires matching snapshot times")
    ts = np.asarray(traj_a.times)
    w2 = np.array([
        wasserstein(2.0, da, db)
        for da, db in zip(traj_a.densities, traj_b.densities)
    ])
    bound_rate = K / 2.0
    verdict = bool(np.all(w2 <= w2[0] * np.exp(-bound_rate * ts) * (1.0 + tol) + 1e-15))
    positive = w2 > 1e-12
    if np.count_nonzero(positive) >= 2:
        coef = np.polyfit(ts[positive], np.log(w2[positive]), 1)
        fitted = -float(coef[0])
    else:
        fitted = None
    return ContractionReport(ts, w2, fitted, bound_rate, verdict)


def hwi_check(density: GridDensity, potential: Potential,
              equilibrium: GridDensity, K: float) -> float:
    """Slack of the entropy / transport / gradient-norm inequality.

    slack = W2 * sqrt(grad_norm_sq) - (K/2) W2^2 - relative entropy, which is
    nonnegative up to discretization error; the translate of the equilibrium
    is the equality case.
    """
    if euler_lagrange_residual(equilibrium, potential) > 1e-2:
        raise ConfigError("hwi_check: reference density fails the stationarity test")
    w2 = wasserstein(2.0, density, equilibrium)
    grad = np.sqrt(max(grad_norm_sq(density, potential), 0.0))
    rel = relative_free_entropy(density, potential, equilibrium)
    return w2 * grad - 0.5 * K * w2 ** 2 - rel


def convergence_report(trajectory: Trajectory, equilibrium: GridDensity,
                       K: Optional[float] = None) -> dict:
    """Decay of W2-to-equilibrium and relative entropy along a trajectory.

    Both series must be monotone nonincreasing within 1e-6; fitted
    exponential rates are reported next to the expected K/2 (distance) and
    K (entropy) when a convexity bound is supplied.
    """
    ts = np.asarray(trajectory.times)
    w2 = np.array([wasserstein(2.0, d, equilibrium) for d in trajectory.densities])
    rel_values = [row.rel_sigma for row in trajectory.diagnostics]
    if any(r is None for r in rel_values):
        raise ConfigError("convergence_report needs a trajectory evolved with a reference")
    rel = np.asarray(rel_values, dtype=float)
    out = {
        "t": ts,
        "w2": w2,
        "rel_sigma": rel,
        "w2_monotone": bool(np.all(np.diff(w2) <= 1e-6)),
        "rel_sigma_monotone": bool(np.all(np.diff(rel) <= 1e-6)),
    }

    def fit_rate(series):
        live = series > 1e-8
        if np.count_nonzero(live) < 2:
            return None
        coef = np.polyfit(ts[live], np.log(series[live]), 1)
        return -float(coef[0])

    out["w2_rate"] = fit_rate(w2)
    out["rel_sigma_rate"] = fit_rate(np.maximum(rel, 0.0))
    if K is not None:
        out["expected_w2_rate"] = K / 2.0
        out["expected_rel_sigma_rate"] = float(K)
        out["nominal_w2_rate"] = float(K)
    return out


def lln_report(ensembles: dict, pde_traj: Trajectory, p: float = 1.0) -> list:
    """W_p between pooled particle measures and the transport solution.

    ``ensembles`` maps N -> EnsembleResult; snapshot times must appear in
    the trajectory's times.  Rows come back sorted by N.
    """
    if not (1.0 <= p < 2.0):
        raise ConfigError("lln_report requires p in [1, 2)")
    rows = []
    traj_times = list(pde_traj.times)
    for n in sorted(ensembles):
        ens = ensembles[n]
        for t_idx, t in enumerate(ens.snapshot_times):
            if not any(abs(t - tt) < 1e-9 for tt in traj_times):
                raise ConfigError(f"lln_report: ensemble snapshot t={t} missing in trajectory")
            j = min(range(len(traj_times)), key=lambda k: abs(traj_times[k] - t))
            dist = wasserstein(p, ens.mean_measures[t_idx], pde_traj.densities[j])
            rows.append({"N": int(n), "t": float(t), "w": float(dist)})
    return rows


def bootstrap_interval(samples: np.ndarray, stat=np.var,
                       n_resamples: int = BOOTSTRAP_RESAMPLES,
                       seed: int = BOOTSTRAP_SEED) -> tuple[float, float, float]:
    """(point, lo, hi): percentile bootstrap CI with a fixed resample seed."""
    samples = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    stats = np.array([
        stat(samples[rng.integers(0, samples.size, samples.size)])
        for _ in range(n_resamples)
    ])
    return float(stat(samples)), float(np.percentile(stats, 2.5)), float(np.percentile(stats, 97.5))


_TEST_FUNCTIONS = {
    "x2": lambda x: x ** 2,
    "x4": lambda x: x ** 4,
    "bump": lambda x: np.exp(-x ** 2),
}


def chaos_statistics(ensembles: dict, f: str = "x2", at_time: Optional[float] = None) -> list:
    """Variance of the linear statistic <L_N, f> across paths, per N.

    Vanishing variance in N is the factorization property of the moment
    measures; each row carries a bootstrap confidence interval.
    """
    if f not in _TEST_FUNCTIONS:
        raise ConfigError(f"chaos_statistics: unknown test function {f!r}")
    func = _TEST_FUNCTIONS[f]
    rows = []
    for n in sorted(ensembles):
        ens = ensembles[n]
        if ens.n_paths < 100:
            raise ConfigError("chaos_statistics needs at least 100 paths per N")
        t = at_time if at_time is not None else ens.snapshot_times[-1]
        t_idx = min(range(len(ens.snapshot_times)),
                    key=lambda k: abs(ens.snapshot_times[k] - t))
        vals = np.array([
            float(np.mean(func(path.snapshots[t_idx].atoms)))
            for path in ens.paths
        ])
        if np.ptp(vals) == 0.0:
            rows.append({"N": int(n), "t": float(ens.snapshot_times[t_idx]),
                         "var": 0.0, "ci_lo": 0.0, "ci_hi": 0.0})
            continue
        var, lo, hi = bootstrap_interval(vals, stat=lambda s: np.var(s, ddof=1))
        rows.append({"N": int(n), "t": float(ens.snapshot_times[t_idx]),
                     "var": var, "ci_lo": lo, "ci_hi": hi})
    return rows
