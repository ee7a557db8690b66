"""Collision-safe Euler-Maruyama integrator for the interacting particle system

    d lam_i = sqrt(2/(beta N)) dW_i
              + [ (1/N) sum_{j != i} phi_R(lam_i - lam_j) - V'(lam_i)/2 ] dt,

where phi_R(x) = 1/x for |x| >= 1/R and R^2 x below (the Lipschitz truncation
of the Coulomb kernel).  The truncation threshold sits an order below the
typical equilibrium spacing, so its activation counter stays at zero in
healthy runs; a proposed step that breaks strict ordering is retried as two
half steps whose increments are the Brownian-bridge split of the original,
keeping the path law and the reproducibility intact.

Paths own counter-based RNG streams derived from (seed, path index), so
ensembles are bitwise reproducible regardless of thread count or batching.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .densities import DensitySpec, default_domain, parse_density_spec, quantile_positions
from .errors import ConfigError, NumericalError
from .measures import EmpiricalMeasure
from .potentials import Potential

__all__ = ["ParticleState", "SdeConfig", "StepStats", "PathResult", "EnsembleResult",
           "init_state", "step", "simulate_path", "simulate_ensemble", "default_threads"]

RNG_NAMESPACE_SDE = 0
RNG_NAMESPACE_MATRIX = 1

def _depth_cap(n: int) -> int:
    """Finest dyadic refinement of one step: 2^cap sub-steps, sized so the
    bridge buffer 2^cap x N stays near 2^22 doubles regardless of N."""
    return int(min(18, max(12, 22 - int(np.ceil(np.log2(max(n, 2)))))))

try:
    import numba

    @numba.njit(cache=True, nogil=True, fastmath=True)
    def _coulomb_sum(lam, inv_r):  # pragma: no cover - jitted
        # phi_R is odd, so each unordered pair is evaluated once and applied
        # antisymmetrically; phi_R(d) = d / max(d^2, 1/R^2) keeps the inner
        # loop branchless (the truncated branch is d R^2, the plain one 1/d)
        n = lam.size
        out = np.zeros(n)
        trunc = 0
        r2 = inv_r * inv_r
        for i in range(n):
            li = lam[i]
            acc = 0.0
            for j in range(i + 1, n):
                d = li - lam[j]
                dd = d * d
                v = d / (dd if dd > r2 else r2)
                if dd <= r2:
                    trunc += 2
                acc += v
                out[j] -= v
            out[i] += acc
        for i in range(n):
            out[i] /= n
        return out, trunc

    @numba.njit(cache=True, nogil=True)
    def _bridge_trial(lam0, s0, dv0, ddv0, pieces, dt_k, noise, inv_r,
                      floor):  # pragma: no cover - jitted
        # Collision-resolution sub-cycle: every particle follows its bridge
        # sub-increments with its nearest-neighbor Coulomb terms re-evaluated
        # live (an ordering can only break at an adjacent pair, and the live
        # 1/gap wall of that pair is what prevents it), the rest of the
        # Coulomb field frozen at the step start, and the confinement force
        # linearized there.  The bias relative to full re-evaluation is far
        # below the integrator's own O(dt) and only active during collision
        # resolution.
        n = lam0.size
        r2 = inv_r * inv_r
        lam = lam0.copy()
        drift = np.empty(n)
        frozen = np.empty(n)
        for i in range(n):
            acc = s0[i]
            if i > 0:
                d = lam0[i] - lam0[i - 1]
                dd = d * d
                acc -= d / (dd if dd > r2 else r2)
            if i < n - 1:
                d = lam0[i] - lam0[i + 1]
                dd = d * d
                acc -= d / (dd if dd > r2 else r2)
            frozen[i] = acc
        for p in range(pieces.shape[0]):
            for i in range(n):
                acc = frozen[i]
                if i > 0:
                    d = lam[i] - lam[i - 1]
                    dd = d * d
                    acc += d / (dd if dd > r2 else r2)
                if i < n - 1:
                    d = lam[i] - lam[i + 1]
                    dd = d * d
                    acc += d / (dd if dd > r2 else r2)
                drift[i] = acc / n - 0.5 * (dv0[i] + ddv0[i] * (lam[i] - lam0[i]))
            for i in range(n):
                lam[i] = lam[i] + noise * pieces[p, i] + dt_k * drift[i]
            for i in range(n - 1):
                if lam[i + 1] - lam[i] < floor:
                    return 1, lam, i
        return 0, lam, -1

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def _coulomb_sum(lam, inv_r):
        n = lam.size
        diff = lam[:, None] - lam[None, :]
        np.fill_diagonal(diff, np.inf)
        truncated = np.abs(diff) < inv_r
        with np.errstate(divide="ignore"):
            contrib = np.where(truncated, diff / (inv_r * inv_r), 1.0 / diff)
        np.fill_diagonal(contrib, 0.0)
        return contrib.sum(axis=1) / n, int(truncated.sum())

    def _bridge_trial(lam0, s0, dv0, ddv0, pieces, dt_k, noise, inv_r, floor):
        n = lam0.size
        r2 = inv_r * inv_r

        def phi(d):
            dd = d * d
            return d / np.where(dd > r2, dd, r2)

        def neighbor_terms(x):
            left = np.zeros(n)
            right = np.zeros(n)
            left[1:] = phi(x[1:] - x[:-1])
            right[:-1] = phi(x[:-1] - x[1:])
            return left + right

        lam = lam0.copy()
        frozen = s0 - neighbor_terms(lam0)
        for p in range(pieces.shape[0]):
            live = frozen + neighbor_terms(lam)
            drift = live / n - 0.5 * (dv0 + ddv0 * (lam - lam0))
            lam = lam + noise * pieces[p] + dt_k * drift
            gaps = np.diff(lam)
            if gaps.size and np.min(gaps) < floor:
                return 1, lam, int(np.argmin(gaps))
        return 0, lam, -1


def path_rng(seed: int, path_index: int, namespace: int = RNG_NAMESPACE_SDE) -> np.random.Generator:
    """Counter-based per-path stream: independent of scheduling and batching."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2 ** 64 - 1),
                                spawn_key=(namespace, int(path_index)))
    return np.random.Generator(np.random.Philox(ss))


def default_threads() -> int:
    env = os.environ.get("COULOMBFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"COULOMBFLOW_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ParticleState:
    """Ordered particle configuration in the open chamber lam_1 < ... < lam_N."""

    t: float
    beta: float
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.ascontiguousarray(self.lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size < 1:
            raise ConfigError("ParticleState needs a 1-D vector of positions")
        if not np.all(np.isfinite(lam)):
            raise ConfigError("ParticleState positions must be finite")
        if lam.size > 1 and not np.all(np.diff(lam) > 0):
            raise ConfigError("ParticleState positions must be strictly increasing")
        if self.beta < 1:
            raise ConfigError("ParticleState requires beta >= 1")
        if self.t < 0:
            raise ConfigError("ParticleState requires t >= 0")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def n(self) -> int:
        return int(self.lambdas.size)

    def min_gap(self) -> float:
        if self.n < 2:
            return np.inf
        return float(np.min(np.diff(self.lambdas)))

    def empirical(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.lambdas)


def init_state(positions: Sequence[float], beta: float) -> ParticleState:
    """State at t = 0; duplicate positions are a collision and an error."""
    lam = np.sort(np.asarray(positions, dtype=np.float64).ravel())
    if lam.size > 1 and np.any(np.diff(lam) <= 0):
        raise ConfigError("init_state: duplicate positions (collision at initialization)")
    return ParticleState(t=0.0, beta=float(beta), lambdas=lam)


@dataclass(frozen=True)
class SdeConfig:
    n_particles: int
    beta: float
    potential: Potential
    t_end: float
    init: DensitySpec
    dt: Optional[float] = None
    truncation_radius: Optional[float] = None   # None = auto
    min_gap: float = 1e-12
    max_halvings: int = 30
    snapshot_times: tuple = ()
    seed: int = 0
    domain: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigError("SdeConfig requires n_particles >= 1")
        if self.beta < 1:
            raise ConfigError("SdeConfig requires beta >= 1")
        if self.t_end <= 0:
            raise ConfigError("SdeConfig requires t_end > 0")
        if self.min_gap <= 0:
            raise ConfigError("SdeConfig requires min_gap > 0")
        if self.max_halvings < 1:
            raise ConfigError("SdeConfig requires max_halvings >= 1")
        object.__setattr__(self, "init", parse_density_spec(self.init))
        if self.domain is None:
            object.__setattr__(self, "domain", default_domain(self.potential, self.init))
        left, right = self.domain
        if not (right > left):
            raise ConfigError("SdeConfig domain requires right > left")
        if self.dt is None:
            kplus = max(self.potential.convexity_bound or 1.0, 1.0)
            object.__setattr__(self, "dt", 1e-3 * min(1.0, 1.0 / kplus))
        if not (0 < self.dt <= self.t_end):
            raise ConfigError("SdeConfig requires 0 < dt <= t_end")
        if self.truncation_radius is None:
            object.__setattr__(
                self, "truncation_radius",
                20.0 * self.n_particles ** 2 / (right - left),
            )
        if self.truncation_radius <= 0:
            raise ConfigError("SdeConfig requires truncation_radius > 0")
        snaps = tuple(sorted(float(t) for t in self.snapshot_times))
        if snaps and (snaps[0] < 0 or snaps[-1] > self.t_end + 1e-12):
            raise ConfigError("snapshot_times must lie inside [0, t_end]")
        object.__setattr__(self, "snapshot_times", snaps)

    def as_dict(self) -> dict:
        from .potentials import potential_spec_dict

        return {
            "n_particles": self.n_particles,
            "beta": self.beta,
            "potential": potential_spec_dict(self.potential),
            "t_end": self.t_end,
            "init": self.init.as_dict(),
            "dt": self.dt,
            "truncation_radius": self.truncation_radius,
            "min_gap": self.min_gap,
            "max_halvings": self.max_halvings,
            "snapshot_times": list(self.snapshot_times),
            "seed": self.seed,
            "domain": list(self.domain),
        }


@dataclass
class StepStats:
    truncations: int = 0
    halvings: int = 0


def _drift(lam: np.ndarray, potential: Potential, inv_r: float):
    coulomb, trunc = _coulomb_sum(lam, inv_r)
    return coulomb - 0.5 * potential.dv(lam), int(trunc)


def step(
    state: ParticleState,
    potential: Potential,
    dt: float,
    increments: np.ndarray,
    truncation_radius: float,
    min_gap: float = 1e-12,
    max_halvings: int = 30,
    rng: Optional[np.random.Generator] = None,
    stats: Optional[StepStats] = None,
) -> ParticleState:
    """One Euler-Maruyama step with Brownian-bridge retry on near-collisions.

    ``increments`` is the vector of N(0, dt) Brownian increments for this
    step.  A proposal that breaks strict ordering (or the min_gap floor) is
    replayed as two half steps whose increments are the bridge split
    dW/2 +/- (sqrt(dt)/2) Z with fresh Z from the path's stream; recursion
    exhausts at max_halvings with a hard error (dt is far too large).
    """
    increments = np.asarray(increments, dtype=np.float64)
    if increments.shape != (state.n,):
        raise ConfigError(f"step needs increments of shape ({state.n},)")
    if dt <= 0:
        raise ConfigError("step requires dt > 0")
    inv_r = 1.0 / truncation_radius
    noise = np.sqrt(2.0 / (state.beta * state.n))
    stats = stats if stats is not None else StepStats()
    xs = state.lambdas
    n = state.n

    # Proximity below the finest resolvable gap scale counts as numerical
    # collision: at the deepest allowed refinement the drift-noise balance
    # sits at g* = sqrt(beta dt 2^-cap / N), and a state accepted with a gap
    # far below g* would make every subsequent proposal either cross (noise
    # dwarfs the gap) or explode (the 1/gap drift overshoots at sub-steps no
    # finer than the cap).  At floor = g*/4 the pair drift dominates the
    # sub-step noise at every depth, so rejection there re-rolls safely
    # instead of livelocking.
    depth_cap = _depth_cap(n)
    g_star = np.sqrt(2.0 * dt * 2.0 ** (-depth_cap) / (state.beta * n))
    floor = max(min_gap, 0.25 * g_star)

    mu0, trunc0 = _drift(xs, potential, inv_r)
    stats.truncations += trunc0
    prop = xs + noise * increments + dt * mu0
    if n < 2 or np.all(np.diff(prop) >= floor):
        return ParticleState(t=state.t + dt, beta=state.beta, lambdas=prop)

    # Collision: retry the whole step at a dyadic Brownian-bridge refinement.
    # The starting resolution is what the current spacing demands (sub-step
    # noise a factor ~3 below the tightest gap; any dyadic resolution is an
    # exact bridge sample, so choosing it from the state is bias-free); each
    # failed trial burns one unit of the halving budget, re-rolls a fresh
    # bridge, and deepens the refinement up to the cap.
    if rng is None:
        raise ConfigError("step: collision retry requires the path's rng")
    dv0 = potential.dv(xs)
    ddv0 = potential.ddv(xs)
    s0 = (mu0 + 0.5 * dv0) * n

    sigma_pair = noise * np.sqrt(2.0 * dt)
    g = max(float(np.min(np.diff(xs))), 1e-300)
    depth = 1
    if 3.0 * sigma_pair > g:
        depth = int(np.ceil(2.0 * np.log2(3.0 * sigma_pair / g)))
    depth = min(max(depth, 1), _JUMP_CAP)

    attempts = 0
    while True:
        attempts += 1
        stats.halvings += 1
        if attempts > max_halvings:
            raise NumericalError(
                f"collision persists after {max_halvings} halvings "
                f"(dt = {dt:.3e} is far too large for this N and potential)"
            )
        pieces = increments[None, :]
        dt_k = dt
        for _ in range(depth):
            z = rng.standard_normal(pieces.shape)
            first = 0.5 * pieces + 0.5 * np.sqrt(dt_k) * z
            finer = np.empty((2 * pieces.shape[0], n))
            finer[0::2] = first
            finer[1::2] = pieces - first
            pieces = finer
            dt_k *= 0.5
        status, lam_end, pair = _bridge_trial(
            xs, s0, dv0, ddv0, pieces, dt_k, noise, inv_r, floor,
        )
        if status == 0:
            return ParticleState(t=state.t + dt, beta=state.beta, lambdas=lam_end)
        depth = min(depth + 1, _DEPTH_CAP)


@dataclass(frozen=True)
class PathResult:
    path_index: int
    snapshots: tuple            # EmpiricalMeasure per snapshot time
    snapshot_times: tuple
    times: np.ndarray           # per-step time grid (right endpoints)
    m2: np.ndarray              # (1/N) sum lam^2 per step
    xvp: np.ndarray             # (1/N) sum lam V'(lam) per step
    min_gap: np.ndarray
    truncation_series: np.ndarray
    halving_series: np.ndarray

    @property
    def truncations(self) -> int:
        return int(self.truncation_series.sum())

    @property
    def halvings(self) -> int:
        return int(self.halving_series.sum())


def _time_grid(config: SdeConfig) -> np.ndarray:
    k = int(np.ceil(config.t_end / config.dt - 1e-9))
    grid = np.arange(1, k + 1) * config.dt
    grid[-1] = config.t_end
    pts = np.unique(np.concatenate([grid, np.asarray(config.snapshot_times),
                                    [config.t_end]]))
    return pts[pts > 0.0]


def simulate_path(config: SdeConfig, path_index: int) -> PathResult:
    """One path as a deterministic function of (config, path_index)."""
    rng = path_rng(config.seed, path_index)
    left, right = config.domain
    positions = quantile_positions(config.init, config.n_particles, left, right,
                                   config.potential)
    state = init_state(positions, config.beta)
    stats = StepStats()

    want = list(config.snapshot_times)
    snaps = []
    snap_ts = []
    if want and want[0] == 0.0:
        snaps.append(state.empirical())
        snap_ts.append(0.0)
        want = want[1:]

    grid = _time_grid(config)
    m2 = np.empty(grid.size)
    xvp = np.empty(grid.size)
    gaps = np.empty(grid.size)
    truncs = np.empty(grid.size, dtype=np.int64)
    halvs = np.empty(grid.size, dtype=np.int64)
    t_prev = 0.0
    for k, t_next in enumerate(grid):
        dt_k = t_next - t_prev
        dw = rng.standard_normal(state.n) * np.sqrt(dt_k)
        trunc0, halv0 = stats.truncations, stats.halvings
        state = step(state, config.potential, dt_k, dw,
                     truncation_radius=config.truncation_radius,
                     min_gap=config.min_gap, max_halvings=config.max_halvings,
                     rng=rng, stats=stats)
        state = ParticleState(t=t_next, beta=state.beta, lambdas=state.lambdas)
        lam = state.lambdas
        m2[k] = float(np.mean(lam * lam))
        xvp[k] = float(np.mean(lam * config.potential.dv(lam)))
        gaps[k] = state.min_gap()
        truncs[k] = stats.truncations - trunc0
        halvs[k] = stats.halvings - halv0
        while want and t_next >= want[0] - 1e-12:
            snaps.append(state.empirical())
            snap_ts.append(want.pop(0))
        t_prev = t_next

    return PathResult(
        path_index=path_index,
        snapshots=tuple(snaps),
        snapshot_times=tuple(snap_ts),
        times=grid,
        m2=m2,
        xvp=xvp,
        min_gap=gaps,
        truncation_series=truncs,
        halving_series=halvs,
    )


@dataclass(frozen=True)
class EnsembleResult:
    config: SdeConfig
    n_paths: int
    paths: tuple                  # PathResult in path-index order
    snapshot_times: tuple
    mean_measures: tuple          # pooled EmpiricalMeasure per snapshot time
    times: np.ndarray
    m2_mean: np.ndarray
    m2_var: np.ndarray
    m2_stderr: np.ndarray

    def moments_table(self) -> dict:
        return {
            "t": self.times,
            "m2_mean": self.m2_mean,
            "m2_stderr": self.m2_stderr,
            "min_gap_min": np.min(np.stack([p.min_gap for p in self.paths]), axis=0),
            "truncation_count": np.sum(np.stack([p.truncation_series for p in self.paths]), axis=0),
            "halving_count": np.sum(np.stack([p.halving_series for p in self.paths]), axis=0),
        }


def simulate_ensemble(config: SdeConfig, n_paths: int,
                      threads: Optional[int] = None) -> EnsembleResult:
    """Independent paths pooled into E[L_N(t)] estimates.

    The pooled measure at each snapshot carries every path's atoms with equal
    weight; the reduction is ordered by path index, so the output is bitwise
    independent of the thread count.
    """
    if n_paths < 1:
        raise ConfigError("simulate_ensemble requires n_paths >= 1")
    threads = threads or default_threads()
    results: list = [None] * n_paths
    if threads > 1 and n_paths > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            for idx, res in zip(range(n_paths),
                                ex.map(lambda i: simulate_path(config, i), range(n_paths))):
                results[idx] = res
    else:
        for i in range(n_paths):
            results[i] = simulate_path(config, i)

    snap_ts = results[0].snapshot_times
    pooled = []
    for s in range(len(snap_ts)):
        atoms = np.concatenate([r.snapshots[s].atoms for r in results])
        pooled.append(EmpiricalMeasure(atoms))

    m2_stack = np.stack([r.m2 for r in results])
    m2_mean = m2_stack.mean(axis=0)
    m2_var = m2_stack.var(axis=0, ddof=1) if n_paths > 1 else np.zeros_like(m2_mean)
    stderr = np.sqrt(m2_var / n_paths)
    return EnsembleResult(
        config=config,
        n_paths=n_paths,
        paths=tuple(results),
        snapshot_times=snap_ts,
        mean_measures=tuple(pooled),
        times=results[0].times,
        m2_mean=m2_mean,
        m2_var=m2_var,
        m2_stderr=stderr,
    )
