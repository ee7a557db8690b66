"""Command-line front end.

Subcommands: ``equilibrium``, ``pde``, ``sde``, ``matrix``, ``compare``,
``verify``.  All runs write their config echo, a RunRecord with content
digests, and data CSVs into a fresh timestamped directory under
``--output-dir``; nothing ever mutates an existing run directory.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .densities import parse_density_spec
from .errors import ConfigError, NumericalError
from .matrix_oracle import simulate_matrix_ensemble
from .measures import (
    empirical_from_csv,
    empirical_to_csv,
    grid_density_from_csv,
    grid_density_to_csv,
    wasserstein,
)
from .pde import PdeConfig, evolve
from .potentials import (
    equilibrium_closed_form,
    euler_lagrange_residual,
    parse_potential_spec,
    potential_spec_dict,
)
from .runio import RunRecord, create_run_dir, read_json, verify_integrity, write_json, write_record
from .sde import SdeConfig, default_threads, simulate_ensemble

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERICS = 3


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.17g}"


def _write_series_csv(path, header: str, columns) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        n_rows = len(columns[0])
        for i in range(n_rows):
            f.write(",".join(_fmt(col[i]) for col in columns) + "\n")


def _snapshot_name(t: float) -> str:
    return f"t_{t:.6f}.csv"


def _parse_grid(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError("grid must be given as L,R,n")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _parse_times(text: str):
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_equilibrium(args) -> int:
    potential = parse_potential_spec(args.potential)
    left, right, n = _parse_grid(args.grid)
    run_dir = create_run_dir(args.output_dir, "equilibrium", args.name)
    record = RunRecord("equilibrium", {
        "potential": potential_spec_dict(potential),
        "grid": [left, right, n],
    })
    density = equilibrium_closed_form(potential, left, right, n)
    residual = euler_lagrange_residual(density, potential)
    grid_density_to_csv(density, run_dir / "density.csv")
    write_json(run_dir / "equilibrium.json", {"el_residual": residual})
    write_record(run_dir, record)
    print(f"{run_dir}: el_residual = {residual:.3e}")
    return EXIT_OK


def _pde_config_from_args(args) -> tuple[PdeConfig, object]:
    if args.config:
        raw = read_json(args.config)
        potential = parse_potential_spec(raw["potential"]) if isinstance(raw["potential"], str) \
            else parse_potential_spec(
                f"{raw['potential']['family']}:" + ",".join(
                    f"{k}={v}" for k, v in raw["potential"]["params"].items())
            )
        cfg = PdeConfig(
            grid=tuple(raw["grid"]),
            t_end=raw["t_end"],
            init=parse_density_spec(raw["init"]),
            dt=raw.get("dt"),
            cfl=raw.get("cfl", 0.4),
            snapshot_times=tuple(raw.get("snapshot_times", ())),
        )
        return cfg, potential
    if not (args.potential and args.grid and args.t_end is not None and args.init):
        raise ConfigError("pde needs --config or all of --potential --grid --t-end --init")
    potential = parse_potential_spec(args.potential)
    cfg = PdeConfig(
        grid=_parse_grid(args.grid),
        t_end=args.t_end,
        init=parse_density_spec(args.init),
        dt=args.dt,
        cfl=args.cfl,
        snapshot_times=_parse_times(args.snapshots) if args.snapshots else (),
    )
    return cfg, potential


def cmd_pde(args) -> int:
    cfg, potential = _pde_config_from_args(args)
    reference = None
    if args.reference == "equilibrium":
        left, right, n = cfg.grid
        reference = equilibrium_closed_form(potential, left, right, n)
    run_dir = create_run_dir(args.output_dir, "pde", args.name)
    record = RunRecord("pde", {
        "potential": potential_spec_dict(potential),
        **cfg.as_dict(),
    })
    traj = evolve(cfg, potential, reference=reference)
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir()
    for t, dens in zip(traj.times, traj.densities):
        grid_density_to_csv(dens, snap_dir / _snapshot_name(t))
    rows = traj.diagnostics
    _write_series_csv(
        run_dir / "diagnostics.csv",
        "t,sigma_v,rel_sigma,fisher,grad_sq,m1,m2,w2_to_ref",
        [
            [r.t for r in rows],
            [r.sigma_v for r in rows],
            [r.rel_sigma for r in rows],
            [r.fisher for r in rows],
            [r.grad_sq for r in rows],
            [r.m1 for r in rows],
            [r.m2 for r in rows],
            [r.w2_to_ref for r in rows],
        ],
    )
    write_record(run_dir, record)
    print(f"{run_dir}: {len(traj.times)} snapshots")
    return EXIT_OK


def _sde_config_from_args(args) -> SdeConfig:
    if args.config:
        raw = read_json(args.config)
        potential = parse_potential_spec(
            raw["potential"] if isinstance(raw["potential"], str)
            else f"{raw['potential']['family']}:" + ",".join(
                f"{k}={v}" for k, v in raw["potential"]["params"].items())
        )
        return SdeConfig(
            n_particles=raw["n_particles"],
            beta=raw["beta"],
            potential=potential,
            t_end=raw["t_end"],
            init=parse_density_spec(raw["init"]),
            dt=raw.get("dt"),
            truncation_radius=raw.get("truncation_radius"),
            min_gap=raw.get("min_gap", 1e-12),
            max_halvings=raw.get("max_halvings", 30),
            snapshot_times=tuple(raw.get("snapshot_times", ())),
            seed=raw.get("seed", 0),
            domain=tuple(raw["domain"]) if raw.get("domain") else None,
        )
    if not (args.potential and args.n and args.t_end is not None):
        raise ConfigError("sde needs --config or all of --potential --n --t-end")
    return SdeConfig(
        n_particles=args.n,
        beta=args.beta,
        potential=parse_potential_spec(args.potential),
        t_end=args.t_end,
        init=parse_density_spec(args.init),
        dt=args.dt,
        snapshot_times=_parse_times(args.snapshots) if args.snapshots else (args.t_end,),
        seed=args.seed,
    )


def cmd_sde(args) -> int:
    cfg = _sde_config_from_args(args)
    run_dir = create_run_dir(args.output_dir, "sde", args.name)
    record = RunRecord("sde", cfg.as_dict())
    ens = simulate_ensemble(cfg, args.paths, threads=args.threads)
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir()
    for t, measure in zip(ens.snapshot_times, ens.mean_measures):
        empirical_to_csv(measure, snap_dir / _snapshot_name(t))
    if args.per_path:
        for p in ens.paths:
            pdir = run_dir / f"path_{p.path_index:04d}"
            pdir.mkdir()
            for t, m in zip(p.snapshot_times, p.snapshots):
                empirical_to_csv(m, pdir / _snapshot_name(t))
    table = ens.moments_table()
    _write_series_csv(
        run_dir / "moments.csv",
        "t,m2_mean,m2_stderr,min_gap_min,truncation_count,halving_count",
        [table["t"], table["m2_mean"], table["m2_stderr"], table["min_gap_min"],
         table["truncation_count"], table["halving_count"]],
    )
    write_record(run_dir, record)
    print(f"{run_dir}: {args.paths} paths, {len(ens.snapshot_times)} snapshots")
    return EXIT_OK


def cmd_matrix(args) -> int:
    potential = parse_potential_spec(args.potential)
    snaps = _parse_times(args.snapshots) if args.snapshots else (args.t_end,)
    run_dir = create_run_dir(args.output_dir, "matrix", args.name)
    record = RunRecord("matrix", {
        "n": args.n, "paths": args.paths, "t_end": args.t_end, "dt": args.dt,
        "seed": args.seed, "potential": potential_spec_dict(potential),
        "snapshot_times": list(snaps),
    })
    res = simulate_matrix_ensemble(args.n, potential, args.dt, args.t_end,
                                   args.paths, args.seed, snapshot_times=snaps)
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir()
    for t, measure in zip(res.snapshot_times, res.pooled):
        empirical_to_csv(measure, snap_dir / _snapshot_name(t))
    write_record(run_dir, record)
    print(f"{run_dir}: {args.paths} matrix paths at N={args.n}")
    return EXIT_OK


def _load_snapshot(run_dir: Path, t: float):
    path = Path(run_dir) / "snapshots" / _snapshot_name(t)
    if not path.exists():
        raise ConfigError(f"no snapshot at t={t} in {run_dir}")
    with open(path) as f:
        header = f.readline().strip()
    if header == "x,rho":
        return grid_density_from_csv(path)
    return empirical_from_csv(path)


def cmd_compare(args) -> int:
    a = _load_snapshot(args.run_a, args.at)
    b = _load_snapshot(args.run_b, args.at)
    p = 1.0 if args.metric == "w1" else 2.0
    dist = wasserstein(p, a, b)
    out = {"metric": args.metric, "t": args.at, "distance": dist,
           "run_a": str(args.run_a), "run_b": str(args.run_b)}
    print(f"{args.metric}(t={args.at}) = {dist:.17g}")
    if args.output:
        write_json(args.output, out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.integrity:
        problems = verify_integrity(args.integrity)
        for p in problems:
            print(f"INTEGRITY FAIL: {p}")
        if not problems:
            print(f"integrity ok: {args.integrity}")
        return EXIT_OK if not problems else EXIT_VERIFY
    if not args.suite:
        raise ConfigError("verify needs --suite or --integrity")
    from .acceptance import run_suite

    results = run_suite(args.suite, threads=args.threads)
    failed = [r for r in results if not r.passed]
    if args.output_dir:
        run_dir = create_run_dir(args.output_dir, f"verify-{args.suite}")
        write_json(run_dir / "report.json", {
            "suite": args.suite,
            "results": [r.as_dict() for r in results],
            "all_passed": not failed,
        })
    return EXIT_OK if not failed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="coulombflow",
        description="Interacting-particle dynamics, mean-field Coulomb transport, "
                    "and free-entropy gradient-flow verification.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output-dir", default="runs")
        p.add_argument("--name", default=None)

    p = sub.add_parser("equilibrium", help="closed-form equilibrium density")
    p.add_argument("--potential", required=True)
    p.add_argument("--grid", required=True, help="L,R,n")
    common(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("pde", help="evolve the mean-field transport equation")
    p.add_argument("--config")
    p.add_argument("--potential")
    p.add_argument("--init")
    p.add_argument("--grid")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--cfl", type=float, default=0.4)
    p.add_argument("--snapshots")
    p.add_argument("--reference", choices=["equilibrium"], default=None)
    common(p)
    p.set_defaults(func=cmd_pde)

    p = sub.add_parser("sde", help="simulate the interacting particle system")
    p.add_argument("--config")
    p.add_argument("--potential")
    p.add_argument("--init", default="equilibrium")
    p.add_argument("--n", type=int)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshots")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--per-path", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sde)

    p = sub.add_parser("matrix", help="Hermitian-diffusion eigenvalue sampler")
    p.add_argument("--potential", default="quadratic:theta=0.5")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--t-end", type=float, dest="t_end", required=True)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshots")
    common(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("compare", help="distance between two runs' snapshots")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--metric", choices=["w1", "w2"], default="w2")
    p.add_argument("--at", type=float, required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="acceptance batteries / run integrity")
    p.add_argument("--suite", choices=["core", "gradientflow", "lln", "oracle", "all"])
    p.add_argument("--integrity", default=None, metavar="RUN_DIR")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_verify)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
