import json
from pathlib import Path

import numpy as np
import pytest

from coulombflow.cli import main
from coulombflow.runio import canonical_json, read_json, verify_integrity


def run(args):
    return main([str(a) for a in args])


def data_files(run_dir: Path):
    return sorted(p for p in run_dir.rglob("*.csv"))


def test_equilibrium_run(tmp_path):
    code = run(["equilibrium", "--potential", "quartic:c=-2",
                "--grid=-2.5,2.5,1024", "--output-dir", tmp_path, "--name", "eq"])
    assert code == 0
    run_dir = tmp_path / "eq"
    assert (run_dir / "density.csv").exists()
    meta = read_json(run_dir / "equilibrium.json")
    assert meta["el_residual"] <= 1e-2
    assert verify_integrity(run_dir) == []


def test_run_dir_collision_is_config_error(tmp_path):
    args = ["equilibrium", "--potential", "quadratic:theta=0.5",
            "--grid=-3,3,256", "--output-dir", tmp_path, "--name", "dup"]
    assert run(args) == 0
    assert run(args) == 2


def test_bad_potential_spec_exit_2(tmp_path):
    code = run(["equilibrium", "--potential", "quadratic:theta=-1",
                "--grid=-3,3,256", "--output-dir", tmp_path])
    assert code == 2


def test_numerical_failure_exit_3(tmp_path):
    # fixed dt far above the CFL bound
    code = run(["pde", "--potential", "quadratic:theta=0.5",
                "--init", "gaussian:mean=0,sigma=0.5", "--grid=-3,3,128",
                "--t-end", "1.0", "--dt", "0.5", "--output-dir", tmp_path])
    assert code == 3


def test_pde_run_and_outputs(tmp_path):
    code = run(["pde", "--potential", "quadratic:theta=0.5",
                "--init", "gaussian:mean=0,sigma=0.5", "--grid=-3,3,128",
                "--t-end", "0.2", "--snapshots", "0,0.1,0.2",
                "--reference", "equilibrium",
                "--output-dir", tmp_path, "--name", "pde-run"])
    assert code == 0
    run_dir = tmp_path / "pde-run"
    diag = (run_dir / "diagnostics.csv").read_text().splitlines()
    assert diag[0] == "t,sigma_v,rel_sigma,fisher,grad_sq,m1,m2,w2_to_ref"
    assert (run_dir / "snapshots" / "t_0.100000.csv").exists()
    assert verify_integrity(run_dir) == []


def test_sde_run_determinism_byte_identical(tmp_path):
    base = ["sde", "--potential", "quadratic:theta=0.5", "--n", "8",
            "--beta", "2", "--paths", "3", "--t-end", "0.05",
            "--seed", "7", "--snapshots", "0.05", "--output-dir", tmp_path]
    assert run(base + ["--name", "a", "--threads", "1"]) == 0
    assert run(base + ["--name", "b", "--threads", "2"]) == 0
    for rel in ("moments.csv", "snapshots/t_0.050000.csv"):
        a = (tmp_path / "a" / rel).read_bytes()
        b = (tmp_path / "b" / rel).read_bytes()
        assert a == b
    header = (tmp_path / "a" / "moments.csv").read_text().splitlines()[0]
    assert header == "t,m2_mean,m2_stderr,min_gap_min,truncation_count,halving_count"


def test_matrix_run_and_compare(tmp_path):
    assert run(["matrix", "--potential", "quadratic:theta=0.5", "--n", "8",
                "--paths", "4", "--t-end", "0.1", "--dt", "1e-2", "--seed", "3",
                "--snapshots", "0.1", "--output-dir", tmp_path, "--name", "m"]) == 0
    assert run(["sde", "--potential", "quadratic:theta=0.5", "--n", "8",
                "--beta", "2", "--paths", "4", "--t-end", "0.1",
                "--seed", "3", "--snapshots", "0.1",
                "--output-dir", tmp_path, "--name", "s"]) == 0
    code = run(["compare", "--run-a", tmp_path / "m", "--run-b", tmp_path / "s",
                "--metric", "w1", "--at", "0.1",
                "--output", tmp_path / "cmp.json"])
    assert code == 0
    out = read_json(tmp_path / "cmp.json")
    # symmetry under swapping run-a and run-b
    code = run(["compare", "--run-a", tmp_path / "s", "--run-b", tmp_path / "m",
                "--metric", "w1", "--at", "0.1",
                "--output", tmp_path / "cmp2.json"])
    assert code == 0
    out2 = read_json(tmp_path / "cmp2.json")
    assert out["distance"] == out2["distance"]


def test_verify_integrity_detects_tampering(tmp_path):
    assert run(["equilibrium", "--potential", "quadratic:theta=0.5",
                "--grid=-3,3,256", "--output-dir", tmp_path, "--name", "t"]) == 0
    assert run(["verify", "--integrity", tmp_path / "t"]) == 0
    with open(tmp_path / "t" / "density.csv", "a") as f:
        f.write("tampered\n")
    assert run(["verify", "--integrity", tmp_path / "t"]) == 1


def test_canonical_json_round_trip():
    obj = {"b": 1.5, "a": [1, 2.25, "x"], "nested": {"z": -0.1, "y": None}}
    text = canonical_json(obj)
    assert canonical_json(json.loads(text)) == text


def test_sde_config_file_replay(tmp_path):
    assert run(["sde", "--potential", "quadratic:theta=0.5", "--n", "8",
                "--beta", "2", "--paths", "2", "--t-end", "0.05",
                "--seed", "5", "--snapshots", "0.05",
                "--output-dir", tmp_path, "--name", "orig"]) == 0
    meta = read_json(tmp_path / "orig" / "meta.json")
    cfg_path = tmp_path / "replay-config.json"
    with open(cfg_path, "w") as f:
        json.dump(meta["config"], f)
    assert run(["sde", "--config", cfg_path, "--paths", "2",
                "--output-dir", tmp_path, "--name", "replay"]) == 0
    a = (tmp_path / "orig" / "snapshots" / "t_0.050000.csv").read_bytes()
    b = (tmp_path / "replay" / "snapshots" / "t_0.050000.csv").read_bytes()
    assert a == b
