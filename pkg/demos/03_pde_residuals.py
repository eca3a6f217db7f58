"""
PDE benchmarks, pseudo-sequences, and residual operators
========================================================

Each benchmark problem bundles its domain, boundary data, a residual
operator built on the autodiff tape, and (where one exists) the
closed-form solution. Collocation points become short pseudo-sequences
marching dt into the future, which is what the sequence models consume.
"""

import numpy as np

from spformer.pde import (PROBLEM_NAMES, analytic_model, analytical_solution,
                          get_problem, make_sequences, residual,
                          sample_collocation)

print("registered problems:", PROBLEM_NAMES)

# ---------------------------------------------------------------------
# Convection: u_t + 50 u_x = 0 with periodic boundaries; the solution
# sin(x - 50 t) just advects. Build sequences at a few interior points
# and push the exact solution through the residual operator.

problem = get_problem("convection")
(x_lo, x_hi), (t_lo, t_hi) = problem.bounds
rng = np.random.default_rng(0)
pts = np.column_stack([rng.uniform(x_lo, x_hi, 64),
                       rng.uniform(t_lo, t_hi - 1e-3, 64)])
seqs = make_sequences(pts, k=5, dt=1e-4)
print("sequence batch:", seqs.shape)  # (64, 5, 2), times t, t+dt, ...

r = residual(problem, analytic_model(problem), seqs)
print("max |residual| at the exact solution:", float(np.abs(r.data).max()))

# ---------------------------------------------------------------------
# The same check for the stiff reaction problem u_t = 5 u (1 - u); its
# logistic-in-time solution is available on a grid for scoring models.

reaction = get_problem("reaction1d")
xs = np.linspace(*reaction.bounds[0], 7)
ts = np.full_like(xs, 0.5)
print("reaction truth at t=0.5:", np.round(
    analytical_solution(reaction, xs, ts), 4))

# ---------------------------------------------------------------------
# sample_collocation draws the interior/initial/boundary point sets a
# training run uses; everything is seeded.

colloc = sample_collocation(reaction, n_x=6, n_t=6, n_ic=4, n_bc=4, seed=0)
print("residual grid:  ", colloc.residual_points.shape)
print("initial points: ", colloc.ic_points.shape)
print("boundary pairs: ", colloc.bc_left.shape, colloc.bc_right.shape)

# ---------------------------------------------------------------------
# Wave equation with two initial conditions (value and velocity): the
# residual needs second derivatives in both x and t, which the nested
# tape provides.

wave = get_problem("wave1d")
pts = np.column_stack([rng.uniform(0.2, 0.8, 16), rng.uniform(0.1, 0.9, 16)])
r = residual(wave, analytic_model(wave), make_sequences(pts, 5, 1e-4))
print("wave residual at exact solution:", float(np.abs(r.data).max()))
