"""
The command line: runs, sweeps, reports
=======================================

Everything the library does is reachable from the `spformer` command
(or `python3 -m spformer.cli`). A run takes an INI config and/or
--set overrides, trains, and leaves a self-contained directory:
report.json, trace.csv, checkpoint.npz, heatmap.csv, and for the
convection problem a per-band error table. Identical config + seed
means bit-identical artifacts, wall-clock fields aside.

This demo shells out with a deliberately tiny model so it finishes in
about a minute; drop the overrides for a real run.
"""

import json
import pathlib
import subprocess
import sys

CLI = [sys.executable, "-m", "spformer.cli"]
TINY = ["--set", "model.d_hidden=8", "--set", "model.d_emb=4",
        "--set", "model.d_ff=8", "--set", "model.d_mapping=4",
        "--set", "collocation.n_x=6", "--set", "collocation.n_t=6",
        "--set", "collocation.n_ic=6", "--set", "collocation.n_bc=6",
        "--set", "run.k=2", "--set", "ntk.cap=16"]


def run(*args):
    print("$ spformer", " ".join(args))
    proc = subprocess.run([*CLI, *args], capture_output=True, text=True)
    if proc.stdout:
        print(proc.stdout.rstrip()[:800])
    if proc.returncode != 0:
        print(proc.stderr.rstrip()[-400:])
    print()
    return proc


# ---------------------------------------------------------------------
# Parameter accounting without training anything.

run("count-params", "--arch", "all")

# ---------------------------------------------------------------------
# One tiny convection run. Exit code 0 on success, 1 on usage errors,
# 2 when training aborts, 3 on I/O problems.

run("run", "--problem", "convection", "--arch", "s_pformer",
    "--iterations", "10", "--seed", "0", "--output", "demo_run", *TINY)

report = json.loads(pathlib.Path("demo_run/report.json").read_text())
print("report keys:", sorted(report)[:8], "...")
print("rMAE:", report["metrics"]["rmae"])

# ---------------------------------------------------------------------
# Per-band error table for the finished run.

run("band-report", "--run-dir", "demo_run")

# ---------------------------------------------------------------------
# A 2-point seed sweep; sweep.json points at the best run by rMAE.

run("sweep", "--problem", "convection", "--arch", "s_pformer",
    "--iterations", "5", "--grid", "run.seed=0,1",
    "--sweep-dir", "demo_sweep", *TINY)

# ---------------------------------------------------------------------
# Merge any number of reports into one comparison table.

sweep = json.loads(pathlib.Path("demo_sweep/sweep.json").read_text())
run("compare", "demo_run/report.json", sweep["best"]["report"])
