"""Composite loss, NTK-trace balancing, L-BFGS with strong Wolfe, training.

The loss is a weighted sum of mean-squared component losses:

    L = w_F * mean|F|^2 + w_I * mean|I|^2 + w_B * mean|B|^2

For the dataset-driven problem (ns2d) there is no initial or boundary
component; the "initial" weight slot carries the data-misfit weight instead
and "boundary" is unused. Loss-trace rows always contain all three columns,
with absent components written as zero.

Weights are refreshed every ``ntk_period`` iterations, starting at iteration
0, from the empirical NTK traces K_i = sum_r |grad_theta o_r|^2 of each
component: w_i = (sum_j K_j) / K_i. Traces over large collocation sets are
estimated from a seeded row subsample and rescaled, which keeps the
estimator unbiased.
"""

from __future__ import annotations

import csv
import gc
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import pde as pde_mod
from .nn import get_flat_params, save_checkpoint, set_flat_params

NTK_EPS = 1e-12


@dataclass
class LossWeights:
    """Per-component weights. NTK updates always produce positive values;
    zeros are allowed here so callers can mask components by hand."""

    residual: float = 1.0
    initial: float = 1.0
    boundary: float = 1.0

    def __post_init__(self):
        vals = (self.residual, self.initial, self.boundary)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"loss weights must be finite and >= 0: {vals}")

    def as_tuple(self):
        return (self.residual, self.initial, self.boundary)


@dataclass
class TrainingData:
    """Pseudo-sequenced collocation batches for one problem."""

    residual_seqs: np.ndarray
    ic_seqs: np.ndarray | None = None
    bc_left: np.ndarray | None = None
    bc_right: np.ndarray | None = None
    data_seqs: np.ndarray | None = None   # ns2d: sequences of sampled points
    data_targets: np.ndarray | None = None  # ns2d: (u, v) at position 0

    def component_names(self):
        names = ["residual"]
        if self.ic_seqs is not None:
            names.append("initial")
        if self.bc_left is not None:
            names.append("boundary")
        if self.data_seqs is not None:
            names.append("data")
        return names


def prepare_batches(problem, colloc, k=5, dt=1e-4):
    """Expand a CollocationSet into pseudo-sequence batches."""
    return TrainingData(
        residual_seqs=pde_mod.make_sequences(colloc.residual_points, k, dt),
        ic_seqs=pde_mod.make_sequences(colloc.ic_points, k, dt),
        bc_left=pde_mod.make_sequences(colloc.bc_left, k, dt),
        bc_right=pde_mod.make_sequences(colloc.bc_right, k, dt),
    )


def prepare_ns_batches(points, targets, k=5, dt=1e-4):
    """Dataset-driven batches: residuals and data misfit share the sampled
    points; targets are (u, v) at the base time of each sequence."""
    points = np.asarray(points, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(points) != len(targets) or targets.shape[1] != 2:
        raise ValueError("need matching (x,y,t) points and (u,v) targets")
    seqs = pde_mod.make_sequences(points, k, dt)
    return TrainingData(residual_seqs=seqs, data_seqs=seqs,
                        data_targets=targets)


# -- loss ---------------------------------------------------------------------


def _mean_sq(t):
    return ad.square(t).mean()


def total_loss(model, problem, data, weights):
    """Weighted total plus per-component scalars (still graph-attached)."""
    comps = {}
    comps["residual"] = _mean_sq(
        pde_mod.residual(problem, model, data.residual_seqs))
    if data.data_seqs is not None:
        u, v, _ = problem.velocity_pressure(model, data.data_seqs)
        du = u[:, 0, :] - ad.Tensor(data.data_targets[:, 0:1])
        dv = v[:, 0, :] - ad.Tensor(data.data_targets[:, 1:2])
        comps["data"] = _mean_sq(ad.concat([du, dv], axis=-1))
    else:
        if data.ic_seqs is None:
            if weights.initial != 0:
                raise ValueError("initial weight is nonzero but the batch "
                                 "has no initial-condition points")
        else:
            comps["initial"] = _mean_sq(
                pde_mod.ic_residual(problem, model, data.ic_seqs))
        if data.bc_left is None:
            if weights.boundary != 0:
                raise ValueError("boundary weight is nonzero but the batch "
                                 "has no boundary points")
        else:
            comps["boundary"] = _mean_sq(pde_mod.bc_residual(
                problem, model, data.bc_left, data.bc_right))

    w = {"residual": weights.residual, "initial": weights.initial,
         "boundary": weights.boundary, "data": weights.initial}
    total = None
    for name, value in comps.items():
        term = w[name] * value
        total = term if total is None else total + term
    return total, comps


# -- NTK traces ---------------------------------------------------------------


@dataclass
class NtkState:
    traces: dict = field(default_factory=dict)
    last_refresh: int = -1
    period: int = 50
    cap: int = 256


def _trace_rows(problem, model, seqs, kind, rows, params):
    """Sum of squared parameter-gradient norms over selected output rows.

    ``rows`` holds flat row indices into this component's output block;
    sequences are evaluated one at a time so each backward pass runs over a
    small single-sequence graph.
    """
    if not params:
        return 0.0
    by_seq = {}
    if kind == "residual":
        k = seqs.shape[1]
        width = k * problem.d_out
    elif kind == "data":
        width = 2  # (u, v) per point
    else:
        width = problem.d_out  # prediction at the base point
    for r in rows:
        by_seq.setdefault(r // width, []).append(r % width)

    acc = 0.0
    for b in sorted(by_seq):
        one = seqs[b:b + 1]
        if kind == "residual":
            out = pde_mod.residual(problem, model, one)
            flat = ad.reshape(out, (out.size,))
        elif kind == "data":
            u, v, _ = problem.velocity_pressure(model, one)
            flat = ad.reshape(ad.concat([u[:, 0, :], v[:, 0, :]], axis=-1),
                              (2,))
        else:
            out = pde_mod.boundary_predictions(problem, model, one)
            flat = ad.reshape(out[:, 0, :], (out.shape[-1],))
        for j in by_seq[b]:
            g = ad.grad(flat[j], params)
            acc += float(sum(np.sum(np.square(g[p].data)) for p in params))
    return acc


def ntk_traces(model, problem, data, cap=256, seed=0):
    """K_i per loss component, optionally from a seeded row subsample."""
    params = model.parameters()
    rng = np.random.default_rng(seed)
    k = data.residual_seqs.shape[1]

    blocks = {"residual": (data.residual_seqs,
                           len(data.residual_seqs) * k * problem.d_out)}
    if data.ic_seqs is not None:
        blocks["initial"] = (data.ic_seqs, len(data.ic_seqs) * problem.d_out)
    if data.bc_left is not None:
        both = np.concatenate([data.bc_left, data.bc_right], axis=0)
        blocks["boundary"] = (both, len(both) * problem.d_out)
    if data.data_seqs is not None:
        blocks["data"] = (data.data_seqs, 2 * len(data.data_seqs))

    out = {}
    for name, (seqs, n_rows) in blocks.items():
        kind = name if name in ("residual", "data") else "prediction"
        if cap is not None and n_rows > cap:
            rows = np.sort(rng.choice(n_rows, size=cap, replace=False))
            scale = n_rows / cap
        else:
            rows = np.arange(n_rows)
            scale = 1.0
        out[name] = scale * _trace_rows(problem, model, seqs, kind, rows,
                                        params)
    return out


def update_weights(traces, eps=NTK_EPS):
    """w_i = (sum K) / K_i with clamping of degenerate traces."""
    clamped = {}
    for name, k in traces.items():
        if k < eps:
            warnings.warn(f"NTK trace for {name!r} is {k:.3g} < {eps}; "
                          "clamped (component may be degenerate)")
            k = eps
        clamped[name] = k
    total = sum(clamped.values())
    lam = {name: total / k for name, k in clamped.items()}
    return LossWeights(
        residual=lam.get("residual", 1.0),
        initial=lam.get("initial", lam.get("data", 1.0)),
        boundary=lam.get("boundary", 0.0 if "data" in lam else 1.0),
    )


# -- L-BFGS with strong Wolfe line search ------------------------------------


@dataclass
class StepRecord:
    iteration: int
    f_before: float
    f_after: float
    g_dot_d: float
    step: float
    armijo: bool
    curvature: bool
    evals: int
    mode: str  # "wolfe" | "steepest" | "noop" | "fail"


@dataclass
class LbfgsState:
    m: int = 50
    c1: float = 1e-4
    c2: float = 0.9
    # deep enough that backtracking from 1.0 can reach ~1e-18 steps: NTK
    # weights of order 1e5 shrink the Armijo-feasible window below the
    # ~6e-8 floor a 25-evaluation budget would allow
    max_evals: int = 60
    iteration: int = 0
    pairs: list = field(default_factory=list)  # (s, y, rho)
    records: list = field(default_factory=list)

    def push_pair(self, s, y):
        sy = float(s @ y)
        if sy > 1e-10:
            self.pairs.append((s, y, 1.0 / sy))
            if len(self.pairs) > self.m:
                self.pairs.pop(0)


def _two_loop(state, g):
    """Search direction from the stored curvature pairs; plain negative
    gradient when the history is empty."""
    if not state.pairs:
        return -g
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(state.pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = state.pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(state.pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _wolfe_search(fg, x, f0, g0, d, c1, c2, max_evals):
    """Bracket/zoom strong-Wolfe search (returns None on failure).

    Interpolation is plain bisection of the bracket: deterministic and free
    of the degenerate cubic steps that plague near-flat PINN landscapes.
    """
    d0 = float(g0 @ d)
    if d0 >= 0:
        return None
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = fg(x + a * d)
        return f, g, float(g @ d)

    a_prev, f_prev, da_prev = 0.0, f0, d0
    a = 1.0
    bracket = None
    while evals < max_evals:
        f_a, g_a, da = phi(a)
        if not np.isfinite(f_a):
            a = 0.5 * (a_prev + a)
            continue
        if f_a > f0 + c1 * a * d0 or (evals > 1 and f_a >= f_prev):
            bracket = (a_prev, f_prev, da_prev, a, f_a, da)
            break
        if abs(da) <= -c2 * d0:
            return a, f_a, g_a, evals
        if da >= 0:
            bracket = (a, f_a, da, a_prev, f_prev, da_prev)
            break
        a_prev, f_prev, da_prev = a, f_a, da
        a *= 2.0
    if bracket is None:
        return None

    lo, f_lo, dlo, hi, f_hi, dhi = bracket
    while evals < max_evals:
        a = 0.5 * (lo + hi)
        f_a, g_a, da = phi(a)
        if f_a > f0 + c1 * a * d0 or f_a >= f_lo:
            hi, f_hi, dhi = a, f_a, da
        else:
            if abs(da) <= -c2 * d0:
                return a, f_a, g_a, evals
            if da * (hi - lo) >= 0:
                hi, f_hi, dhi = lo, f_lo, dlo
            lo, f_lo, dlo = a, f_a, da
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    return None


def _backtrack(fg, x, f0, g0, d, c1, max_evals):
    """Armijo backtracking used as the fallback after a Wolfe failure."""
    d0 = float(g0 @ d)
    a = 1.0
    for evals in range(1, max_evals + 1):
        f, g = fg(x + a * d)
        if np.isfinite(f) and f <= f0 + c1 * a * d0:
            return a, f, g, evals
        a *= 0.5
    return None


def lbfgs_step(state, fg, x, f, g):
    """One quasi-Newton step; returns (x, f, g, accepted).

    Line-search order: strong Wolfe on the two-loop direction, then Armijo
    backtracking on steepest descent. All accepted steps append a
    StepRecord; total failure records mode "fail" and leaves x unchanged.
    """
    gnorm = float(np.max(np.abs(g)))
    if gnorm == 0.0:
        state.records.append(StepRecord(state.iteration, f, f, 0.0, 0.0,
                                        True, True, 0, "noop"))
        state.iteration += 1
        return x, f, g, True

    d = _two_loop(state, g)
    res = _wolfe_search(fg, x, f, g, d, state.c1, state.c2, state.max_evals)
    mode = "wolfe"
    if res is None:
        d = -g
        res = _backtrack(fg, x, f, g, d, state.c1, state.max_evals)
        mode = "steepest"
    if res is None:
        state.records.append(StepRecord(state.iteration, f, f, 0.0,
                                        0.0, False, False, state.max_evals,
                                        "fail"))
        state.iteration += 1
        return x, f, g, False

    a, f_new, g_new, evals = res
    d0 = float(g @ d)
    armijo = f_new <= f + state.c1 * a * d0
    curvature = abs(float(g_new @ d)) <= -state.c2 * d0
    s = a * d
    y = g_new - g
    state.push_pair(s, y)
    state.records.append(StepRecord(state.iteration, f, f_new, d0, a,
                                    bool(armijo), bool(curvature), evals,
                                    mode))
    state.iteration += 1
    return x + s, f_new, g_new, True


def lbfgs_minimize(fg, x0, iterations, state=None, g_tol=0.0):
    """Run lbfgs_step until the budget, a hard failure, or g_tol is met."""
    x = np.asarray(x0, dtype=np.float64).copy()
    state = state or LbfgsState()
    f, g = fg(x)
    for _ in range(iterations):
        if g_tol and float(np.linalg.norm(g)) <= g_tol:
            break
        x, f, g, ok = lbfgs_step(state, fg, x, f, g)
        if not ok:
            break
    return x, f, g, state


# -- training loop ------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 1000
    ntk_period: int = 50
    ntk_cap: int = 256
    k: int = 5
    dt: float = 1e-4
    n_x: int = 51
    n_t: int = 51
    n_ic: int = 51
    n_bc: int = 51
    seed: int = 0  # collocation sampling and NTK subsampling
    trace_path: str | None = None
    checkpoint_path: str | None = None


@dataclass
class TrainState:
    model: object
    weights: LossWeights
    ntk: NtkState
    lbfgs: LbfgsState
    trace: list
    status: str
    diagnostics: dict = field(default_factory=dict)


TRACE_COLUMNS = ("iteration", "total", "residual", "initial", "boundary",
                 "lambda1", "lambda2", "lambda3")


def _trace_row(it, total, comps, weights):
    return {
        "iteration": it,
        "total": total,
        "residual": comps.get("residual", 0.0),
        "initial": comps.get("initial", comps.get("data", 0.0)),
        "boundary": comps.get("boundary", 0.0),
        "lambda1": weights.residual,
        "lambda2": weights.initial,
        "lambda3": weights.boundary,
    }


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        writer.writerows(trace)


def read_trace(path):
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "iteration" else float(v))
                         for k, v in row.items()})
        return rows


def train(model, problem, cfg, data=None, progress=None):
    """Full-batch L-BFGS training with periodic NTK weight refreshes.

    ``data`` overrides the internally sampled collocation batches (the
    dataset-driven path builds its batches from measured samples). Fully
    deterministic given config and model seed. ``progress``, if given,
    is called as ``progress(iteration, loss)`` after every step.
    """
    if data is None:
        colloc = pde_mod.sample_collocation(
            problem, cfg.n_x, cfg.n_t, cfg.n_ic, cfg.n_bc, seed=cfg.seed)
        data = prepare_batches(problem, colloc, cfg.k, cfg.dt)

    weights = LossWeights()
    if data.data_seqs is not None:
        weights = LossWeights(boundary=0.0)
    params = model.parameters()
    ntk = NtkState(period=cfg.ntk_period, cap=cfg.ntk_cap)
    lbfgs = LbfgsState()
    trace = []
    last_comps = {}

    ntk_seeds = np.random.SeedSequence((cfg.seed, 0xA17))

    def fg(x):
        nonlocal last_comps
        set_flat_params(model, x)
        # line-search probes may legitimately overflow; non-finite trial
        # losses are rejected by the search itself
        with np.errstate(over="ignore", invalid="ignore"):
            total, comps = total_loss(model, problem, data, weights)
            gmap = ad.grad(total, params)
            g = np.concatenate([gmap[p].data.ravel() for p in params])
        last_comps = {name: c.item() for name, c in comps.items()}
        return total.item(), g

    x = get_flat_params(model)
    f, g = fg(x)
    if not np.isfinite(f):
        return TrainState(model, weights, ntk, lbfgs, trace,
                          "aborted_nonfinite",
                          {"iteration": 0, "loss": f})
    status = "completed"

    refresh_children = ntk_seeds.spawn(cfg.iterations // max(cfg.ntk_period, 1) + 1)
    for it in range(cfg.iterations):
        if it % ntk.period == 0:
            set_flat_params(model, x)
            ntk.traces = ntk_traces(model, problem, data, cap=ntk.cap,
                                    seed=refresh_children[it // ntk.period])
            ntk.last_refresh = it
            weights = update_weights(ntk.traces)
            f, g = fg(x)  # objective changed with the weights

        x_new, f_new, g_new, ok = lbfgs_step(lbfgs, fg, x, f, g)
        if not np.isfinite(f_new) or not np.all(np.isfinite(x_new)):
            status = "aborted_nonfinite"
            trace.append(_trace_row(it, f_new, last_comps, weights))
            set_flat_params(model, x)  # keep the last finite parameters
            break
        x, f, g = x_new, f_new, g_new
        trace.append(_trace_row(it, f, last_comps, weights))
        if progress is not None:
            progress(it, f)
        if not ok:
            status = "terminated_line_search"
            break
        gc.collect()  # closure graphs are cyclic via the sin/cos memo links

    set_flat_params(model, x)
    state = TrainState(model, weights, ntk, lbfgs, trace, status,
                       {"final_loss": f, "iterations_run": len(trace)})
    if cfg.trace_path:
        write_trace(cfg.trace_path, trace)
    if cfg.checkpoint_path:
        save_checkpoint(model, cfg.checkpoint_path)
    return state
