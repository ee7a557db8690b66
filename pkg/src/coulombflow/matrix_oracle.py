"""Independent cross-validation of the particle dynamics at beta = 2.

The Hermitian matrix diffusion dX = N^{-1/2} dB - (1/2) V'(X) dt has the
interacting particle system as its eigenvalue process, so the pooled
eigenvalue distribution of many matrix paths and the pooled particle
distribution of many SDE paths must agree.  The eigenvalue route shares no
code with the particle integrator: eigenvalues come from an in-repo cyclic
Jacobi sweep over complex rotations, and the two samplers draw from disjoint
RNG stream namespaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .measures import EmpiricalMeasure, wasserstein
from .potentials import Potential
from .sde import RNG_NAMESPACE_MATRIX, EnsembleResult, path_rng

__all__ = ["HermitianState", "hermitian_eigenvalues", "step_matrix",
           "MatrixRunResult", "simulate_matrix_ensemble", "oracle_compare"]

MAX_JACOBI_SWEEPS = 50


@dataclass(frozen=True)
class HermitianState:
    t: float
    entries: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.entries, dtype=np.complex128)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ConfigError("HermitianState needs a square matrix")
        scale = max(1.0, float(np.abs(x).max()))
        if float(np.abs(x - x.conj().T).max()) > 1e-12 * scale:
            raise ConfigError("HermitianState entries must be Hermitian within 1e-12")
        x = 0.5 * (x + x.conj().T)
        x.setflags(write=False)
        object.__setattr__(self, "entries", x)

    @property
    def n(self) -> int:
        return int(self.entries.shape[0])


def _jacobi(a: np.ndarray, tol: float):
    """Cyclic complex Jacobi sweeps; returns (eigenvalues, eigenvectors).

    Each (p, r) rotation J = [[c, s], [-conj(s), c]] with s = t c e^{i phi},
    phi the phase of a_pr and t the small root of t^2 + 2 tau t - 1 = 0
    (tau = (a_rr - a_pp)/(2 |a_pr|)), annihilates a_pr while keeping the
    rotation angle below pi/4, which is what makes the cyclic sweep converge.
    """
    n = a.shape[0]
    a = a.astype(np.complex128).copy()
    q = np.eye(n, dtype=np.complex128)
    for _ in range(MAX_JACOBI_SWEEPS):
        abs2 = np.abs(a) ** 2
        np.fill_diagonal(abs2, 0.0)
        off = float(np.sqrt(abs2.sum()))
        if off <= tol:
            w = np.diag(a).real
            order = np.argsort(w, kind="stable")
            return w[order], q[:, order]
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                mag = abs(apr)
                if mag <= tol / (4.0 * n):
                    continue
                phase = apr / mag
                tau = (a[r, r].real - a[p, p].real) / (2.0 * mag)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c * phase
                row_p = a[p, :].copy()
                row_r = a[r, :].copy()
                a[p, :] = c * row_p - s * row_r
                a[r, :] = np.conj(s) * row_p + c * row_r
                col_p = a[:, p].copy()
                col_r = a[:, r].copy()
                a[:, p] = c * col_p - np.conj(s) * col_r
                a[:, r] = s * col_p + c * col_r
                qp = q[:, p].copy()
                qr = q[:, r].copy()
                q[:, p] = c * qp - np.conj(s) * qr
                q[:, r] = s * qp + c * qr
    raise NumericalError(
        f"Jacobi eigensolver failed to converge in {MAX_JACOBI_SWEEPS} sweeps"
    )


def hermitian_eigenvalues(state: HermitianState, check_reconstruction: bool = False):
    """Sorted eigenvalues by cyclic Jacobi rotations.

    With ``check_reconstruction`` the factorization Q diag(w) Q* is verified
    against the input to 1e-9 relative.
    """
    x = state.entries
    scale = max(1.0, float(np.linalg.norm(x)))
    w, q = _jacobi(x, tol=1e-12 * scale)
    if check_reconstruction:
        rebuilt = (q * w[None, :]) @ q.conj().T
        err = float(np.linalg.norm(rebuilt - x))
        if err > 1e-9 * scale:
            raise NumericalError(
                f"eigendecomposition reconstruction error {err:.3e} exceeds 1e-9 |X|"
            )
    return w


def _eigh_jacobi(x: np.ndarray):
    scale = max(1.0, float(np.linalg.norm(x)))
    return _jacobi(x, tol=1e-12 * scale)


def _hermitian_increment(rng: np.random.Generator, n: int, dt: float) -> np.ndarray:
    """Hermitian Brownian increment: N(0, dt) on the diagonal, complex
    N(0, dt/2) + i N(0, dt/2) above it."""
    diag = rng.standard_normal(n) * np.sqrt(dt)
    re = rng.standard_normal((n, n))
    im = rng.standard_normal((n, n))
    upper = (re + 1j * im) * np.sqrt(dt / 2.0)
    b = np.zeros((n, n), dtype=np.complex128)
    iu = np.triu_indices(n, k=1)
    b[iu] = upper[iu]
    b = b + b.conj().T
    b[np.diag_indices(n)] = diag
    return b


def step_matrix(state: HermitianState, potential: Potential, dt: float,
                rng: np.random.Generator) -> HermitianState:
    """X <- X + N^{-1/2} dB - (dt/2) V'(X), re-hermitized.

    V' acts spectrally (eigendecompose, map eigenvalues through V',
    reassemble); the quadratic family short-circuits to the linear drift
    V'(X) = 2 theta X without an eigendecomposition.
    """
    if dt <= 0:
        raise ConfigError("step_matrix requires dt > 0")
    if potential.family == "kontsevich-penner":
        raise ConfigError("step_matrix supports polynomial-type potentials only")
    x = state.entries
    n = state.n
    if potential.family == "quadratic":
        drift = 2.0 * potential.params["theta"] * x
    else:
        w, q = _eigh_jacobi(x)
        drift = (q * potential.dv(w)[None, :]) @ q.conj().T
    db = _hermitian_increment(rng, n, dt)
    new = x + db / np.sqrt(n) - 0.5 * dt * drift
    new = 0.5 * (new + new.conj().T)
    return HermitianState(t=state.t + dt, entries=new)


@dataclass(frozen=True)
class MatrixRunResult:
    n: int
    n_paths: int
    snapshot_times: tuple
    pooled: tuple                 # pooled EmpiricalMeasure per snapshot
    per_path: tuple               # tuple over paths of tuples of EmpiricalMeasure


def simulate_matrix_ensemble(n: int, potential: Potential, dt: float, t_end: float,
                             n_paths: int, seed: int, snapshot_times=(),
                             init_positions=None) -> MatrixRunResult:
    """Independent matrix diffusions, eigenvalues pooled at snapshot times.

    ``init_positions`` seeds X(0) = diag(positions) so the eigenvalue law at
    t = 0 matches a particle configuration; default is X(0) = 0.
    """
    if n < 1 or n_paths < 1:
        raise ConfigError("simulate_matrix_ensemble requires n >= 1 and n_paths >= 1")
    if init_positions is None:
        x0 = np.zeros((n, n), dtype=np.complex128)
    else:
        init_positions = np.asarray(init_positions, dtype=float)
        if init_positions.shape != (n,):
            raise ConfigError("init_positions must have length n")
        x0 = np.diag(init_positions.astype(np.complex128))
    snaps = tuple(sorted(float(t) for t in snapshot_times)) or (t_end,)
    if snaps[-1] > t_end + 1e-12:
        raise ConfigError("snapshot_times must lie inside [0, t_end]")
    k = int(np.ceil(t_end / dt - 1e-9))
    grid = np.arange(1, k + 1) * dt
    grid[-1] = t_end
    grid = np.unique(np.concatenate([grid, np.asarray(snaps)]))
    grid = grid[grid > 0]

    per_path = []
    for path in range(n_paths):
        rng = path_rng(seed, path, namespace=RNG_NAMESPACE_MATRIX)
        state = HermitianState(t=0.0, entries=x0)
        want = list(snaps)
        mine = []
        if want and want[0] == 0.0:
            mine.append(EmpiricalMeasure(hermitian_eigenvalues(state)))
            want = want[1:]
        t_prev = 0.0
        for t_next in grid:
            state = step_matrix(state, potential, t_next - t_prev, rng)
            while want and t_next >= want[0] - 1e-12:
                mine.append(EmpiricalMeasure(hermitian_eigenvalues(state)))
                want.pop(0)
            t_prev = t_next
        per_path.append(tuple(mine))

    pooled = []
    for s in range(len(snaps)):
        atoms = np.concatenate([pp[s].atoms for pp in per_path])
        pooled.append(EmpiricalMeasure(atoms))
    return MatrixRunResult(n=n, n_paths=n_paths, snapshot_times=snaps,
                           pooled=tuple(pooled), per_path=tuple(per_path))


def oracle_compare(matrix_pooled: EmpiricalMeasure, gdbm_pooled: EmpiricalMeasure,
                   n_permutations: int = 500, seed: int = 7_777) -> dict:
    """W1 distance plus a pooled-permutation test for equality of laws.

    The p-value is the plain fraction of label permutations whose W1 meets or
    exceeds the observed one (no +1 smoothing, so strong mismatches can reach
    p below 1/n_permutations).
    """
    a = matrix_pooled.atoms
    b = gdbm_pooled.atoms
    observed = wasserstein(1.0, matrix_pooled, gdbm_pooled)
    pool = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_permutations):
        perm = rng.permutation(pool.size)
        pa = EmpiricalMeasure(pool[perm[: a.size]])
        pb = EmpiricalMeasure(pool[perm[a.size:]])
        if wasserstein(1.0, pa, pb) >= observed:
            hits += 1
    return {
        "w1": float(observed),
        "p_value": hits / n_permutations,
        "n_permutations": n_permutations,
    }
