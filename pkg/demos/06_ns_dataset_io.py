"""
Navier-Stokes wake data: formats, grids, and pressure offset
============================================================

The cylinder-wake regression consumes a dataset of N spatial points
by T snapshots with velocities (u, v) and pressure p. Two on-disk
formats hold the same arrays bit-for-bit: a readable CSV (with a
sidecar listing the snapshot times) and a compact magic-tagged binary.
Loading sniffs the format. Since pressure enters the equations only
through its gradient, models recover it up to an additive constant;
the analysis module computes the aligning offset.
"""

import numpy as np

from spformer.analysis import pressure_offset
from spformer.data import (NsDataset, build_st_grid, domain_bounds,
                           load_ns_dataset, sample_training_points,
                           save_ns_dataset, test_slice)

# ---------------------------------------------------------------------
# A toy wake: a coarse grid behind a "cylinder", periodic shedding.

nx, ny, T = 12, 6, 8
xs = np.linspace(1.0, 8.0, nx)
ys = np.linspace(-2.0, 2.0, ny)
X_star = np.column_stack([np.repeat(xs, ny), np.tile(ys, nx)])
t = np.linspace(0.0, 7.0, T)

N = X_star.shape[0]
U_star = np.empty((N, 2, T))
p_star = np.empty((N, T))
for j, tj in enumerate(t):
    u = 1.0 - 0.5 * np.exp(-X_star[:, 0]) * np.cos(2 * X_star[:, 1] + tj)
    v = 0.3 * np.exp(-0.2 * X_star[:, 0]) * np.sin(2 * X_star[:, 1] - tj)
    U_star[:, 0, j] = u
    U_star[:, 1, j] = v
    p_star[:, j] = -0.5 * (u**2 + v**2)

ds = NsDataset(X_star=X_star, t=t, U_star=U_star, p_star=p_star)
print("dataset: N =", len(ds.X_star), " T =", len(ds.t))
print("domain bounds:", domain_bounds(ds))

# ---------------------------------------------------------------------
# Round-trip both formats. CSV keeps full float64 precision by writing
# shortest-repr decimals; binary stores raw little-endian doubles.

save_ns_dataset("wake_demo.csv", ds, "csv")      # + wake_demo.csv.times
save_ns_dataset("wake_demo.bin", ds, "binary")
for path in ("wake_demo.csv", "wake_demo.bin"):
    back = load_ns_dataset(path)
    exact = all(np.array_equal(a, b) for a, b in
                [(ds.X_star, back.X_star), (ds.t, back.t),
                 (ds.U_star, back.U_star), (ds.p_star, back.p_star)])
    print(f"{path}: lossless round-trip = {exact}")

# ---------------------------------------------------------------------
# Flatten to a space-time grid, then draw the training subset without
# replacement. Rows keep their provenance indices.

grid = build_st_grid(ds)
subset = sample_training_points(grid, 50, seed=0)
print("grid rows:", len(grid), " sampled:", len(subset))
print("first sampled input (x, y, t):", subset.inputs[0])

# ---------------------------------------------------------------------
# Evaluation slices one snapshot. Pretend the model predicted pressure
# shifted by an arbitrary constant; the offset estimate recovers it.

X_slice, u_true, v_true, p_true = test_slice(ds, t[3])
p_model = p_true - 11.7  # gauge freedom
corrected, c = pressure_offset(p_model, p_true)
print(f"recovered offset C = {c:.6f} (true 11.7)")
print("max |corrected - truth|:", float(np.abs(corrected - p_true).max()))
