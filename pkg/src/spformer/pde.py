"""Benchmark problems: residual operators, analytic oracles, collocation.

Four problems are registered by name:

- ``convection``  u_t + beta u_x = 0, beta = 50, periodic BC, IC sin(x)
- ``reaction1d``  u_t - rho u(1 - u) = 0, rho = 5, periodic BC, Gaussian IC
- ``wave1d``      u_tt - 4 u_xx = 0, Dirichlet-zero BC, two-harmonic IC with
                  u_t(x, 0) = 0 (the factor 4 is the squared speed of the
                  reference solution; its spatial spectrum contains the first
                  and third harmonics)
- ``ns2d``        incompressible Navier-Stokes momentum residuals on a
                  cylinder-wake domain; the model head outputs (psi, p) and
                  velocities are u = psi_y, v = -psi_x, so continuity holds
                  by construction

Coordinates are always ordered (x[, y], t) with time last. Residuals are
taken with respect to the raw physical coordinates: the affine normalization
that feeds the model embedding is part of the differentiated graph, so the
chain-rule factors appear automatically.

Derivative convention: a summed-adjoint pass, d(sum u)/d(coordinate leaf),
which for sequence models includes the cross-position terms introduced by
attention. This matches how coordinate derivatives are normally extracted
from sequence PINNs and costs one backward pass per derivative order instead
of k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROBLEM_NAMES = ("convection", "reaction1d", "wave1d", "ns2d")


# -- pseudo-sequences ---------------------------------------------------------


@dataclass
class PseudoSequence:
    base: np.ndarray
    k: int
    dt: float
    points: np.ndarray  # (k, d_in); row 0 equals the base point


def generate_pseudo_sequence(point, k, dt):
    """Replicate a point k times, stepping only the time coordinate."""
    point = np.asarray(point, dtype=np.float64)
    if k < 1:
        raise ValueError(f"sequence length k must be >= 1, got {k}")
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    pts = np.repeat(point[None, :], k, axis=0)
    pts[:, -1] = point[-1] + np.arange(k) * dt
    return PseudoSequence(point, int(k), float(dt), pts)


def make_sequences(points, k, dt):
    """Vectorized generator: (N, d_in) points -> (N, k, d_in) sequences."""
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError(f"sequence length k must be >= 1, got {k}")
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    seqs = np.repeat(points[:, None, :], k, axis=1)
    seqs[:, :, -1] += np.arange(k) * dt
    return seqs


# -- problems -----------------------------------------------------------------


class PdeProblem:
    """Domain geometry plus residual/IC/BC operators for one benchmark."""

    name: str
    bounds: tuple  # ((lo, hi), ...) per input coordinate, time last
    d_out = 1
    bc = "periodic"  # "periodic" | "dirichlet0" | "none"
    coefficients: dict = {}

    @property
    def d_in(self):
        return len(self.bounds)

    @property
    def spatial_dim(self):
        return self.d_in - 1

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"

    # subclasses implement: residual(model, seqs), ic_residual(model, seqs),
    # and analytic(*coords) where available


class Convection(PdeProblem):
    name = "convection"
    bounds = ((0.0, 2.0 * np.pi), (0.0, 1.0))
    coefficients = {"beta": 50.0}

    def residual(self, model, seqs):
        coords, u = _forward_parts(self, model, seqs)
        x, t = coords
        g = ad.grad(u.sum(), [x, t], create_graph=True)
        return g[t] + self.coefficients["beta"] * g[x]

    def ic_residual(self, model, seqs):
        _, u = _forward_parts(self, model, seqs)
        return u[:, 0:1, :] - Tensor(np.sin(seqs[:, 0:1, 0:1]))

    def analytic(self, x, t):
        return ad.sin(x - self.coefficients["beta"] * t)


class Reaction1d(PdeProblem):
    name = "reaction1d"
    bounds = ((0.0, 2.0 * np.pi), (0.0, 1.0))
    coefficients = {"rho": 5.0}

    def residual(self, model, seqs):
        coords, u = _forward_parts(self, model, seqs)
        _, t = coords
        g = ad.grad(u.sum(), [t], create_graph=True)
        return g[t] - self.coefficients["rho"] * u * (1.0 - u)

    def ic_profile(self, x):
        """Gaussian bump h(x) centered on the domain midpoint."""
        return np.exp(-np.square(x - np.pi) / (2.0 * (np.pi / 4.0) ** 2))

    def ic_residual(self, model, seqs):
        _, u = _forward_parts(self, model, seqs)
        return u[:, 0:1, :] - Tensor(self.ic_profile(seqs[:, 0:1, 0:1]))

    def analytic(self, x, t):
        rho = self.coefficients["rho"]
        h = ad.exp(ad.square(x - np.pi) * (-1.0 / (2.0 * (np.pi / 4.0) ** 2)))
        grown = h * ad.exp(rho * t)
        return grown / (grown + 1.0 - h)


class Wave1d(PdeProblem):
    name = "wave1d"
    bounds = ((0.0, 1.0), (0.0, 1.0))
    bc = "dirichlet0"
    # speed2 is fixed by the reference solution (temporal frequency twice the
    # spatial one); harmonic = 3 selects the second IC term sin(3 pi x)
    coefficients = {"speed2": 4.0, "harmonic": 3.0}

    def residual(self, model, seqs):
        coords, u = _forward_parts(self, model, seqs)
        x, t = coords
        g1 = ad.grad(u.sum(), [x, t], create_graph=True)
        u_xx = ad.grad(g1[x].sum(), [x], create_graph=True)[x]
        u_tt = ad.grad(g1[t].sum(), [t], create_graph=True)[t]
        return u_tt - self.coefficients["speed2"] * u_xx

    def ic_residual(self, model, seqs):
        coords, u = _forward_parts(self, model, seqs)
        _, t = coords
        x0 = seqs[:, 0:1, 0:1]
        target = np.sin(np.pi * x0) + 0.5 * np.sin(3.0 * np.pi * x0)
        value = u[:, 0:1, :] - Tensor(target)
        u_t0 = ad.grad(u.sum(), [t], create_graph=True)[t][:, 0:1, :]
        # both constraints (value and zero initial velocity) share the
        # initial-condition loss component
        return ad.concat([value, u_t0], axis=-1)

    def analytic(self, x, t):
        return (ad.sin(np.pi * x) * ad.cos(2.0 * np.pi * t)
                + 0.5 * ad.sin(3.0 * np.pi * x) * ad.cos(6.0 * np.pi * t))


class NavierStokes2d(PdeProblem):
    name = "ns2d"
    bounds = ((1.0, 8.0), (-2.0, 2.0), (0.0, 20.0))
    d_out = 2  # stream function and pressure
    bc = "none"
    coefficients = {"lambda1": 1.0, "lambda2": 0.01}

    def velocity_pressure(self, model, seqs):
        """(u, v, p) tensors with the parameter graph attached."""
        coords, out = _forward_parts(self, model, seqs)
        x, y, _ = coords
        psi = out[:, :, 0:1]
        p = out[:, :, 1:2]
        g = ad.grad(psi.sum(), [x, y], create_graph=True)
        return g[y], -g[x], p

    def residual(self, model, seqs):
        coords, out = _forward_parts(self, model, seqs)
        x, y, t = coords
        psi = out[:, :, 0:1]
        p = out[:, :, 1:2]
        l1 = self.coefficients["lambda1"]
        l2 = self.coefficients["lambda2"]

        g_psi = ad.grad(psi.sum(), [x, y], create_graph=True)
        u, v = g_psi[y], -g_psi[x]
        gu = ad.grad(u.sum(), [x, y, t], create_graph=True)
        gv = ad.grad(v.sum(), [x, y, t], create_graph=True)
        u_xx = ad.grad(gu[x].sum(), [x], create_graph=True)[x]
        u_yy = ad.grad(gu[y].sum(), [y], create_graph=True)[y]
        v_xx = ad.grad(gv[x].sum(), [x], create_graph=True)[x]
        v_yy = ad.grad(gv[y].sum(), [y], create_graph=True)[y]
        gp = ad.grad(p.sum(), [x, y], create_graph=True)

        f_u = gu[t] + l1 * (u * gu[x] + v * gu[y]) + gp[x] - l2 * (u_xx + u_yy)
        f_v = gv[t] + l1 * (u * gv[x] + v * gv[y]) + gp[y] - l2 * (v_xx + v_yy)
        return ad.concat([f_u, f_v], axis=-1)

    def ic_residual(self, model, seqs):
        raise ValueError("ns2d has no initial-condition component; "
                         "it trains against measured (u, v) data")


_REGISTRY = {cls.name: cls for cls in
             (Convection, Reaction1d, Wave1d, NavierStokes2d)}


def get_problem(name):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; registered: {PROBLEM_NAMES}") from None


# -- normalization ------------------------------------------------------------


def _bounds_arrays(problem):
    b = np.asarray(problem.bounds, dtype=np.float64)
    return b[:, 0], b[:, 1] - b[:, 0]


def normalize(problem, points):
    """Map physical coordinates into [0, 1]^d_in (strict domain check)."""
    points = np.asarray(points, dtype=np.float64)
    lo, rng = _bounds_arrays(problem)
    tol = 1e-9 * rng
    if np.any(points < lo - tol) or np.any(points > lo + rng + tol):
        raise ValueError(
            f"point outside the {problem.name} domain {problem.bounds}")
    return (points - lo) / rng


def denormalize(problem, zpoints):
    zpoints = np.asarray(zpoints, dtype=np.float64)
    lo, rng = _bounds_arrays(problem)
    return zpoints * rng + lo


def _normalize_graph(problem, raw):
    """In-graph affine version of normalize (no domain check; sequence tails
    may legitimately overhang t_max by (k-1) dt)."""
    lo, rng = _bounds_arrays(problem)
    return (raw - Tensor(lo)) * Tensor(1.0 / rng)


def _denormalize_graph(problem, z):
    lo, rng = _bounds_arrays(problem)
    return z * Tensor(rng) + Tensor(lo)


# -- model plumbing -----------------------------------------------------------


def _forward_parts(problem, model, seqs):
    """Coordinate leaves plus model output for raw sequences (B, k, d_in)."""
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.ndim != 3 or seqs.shape[-1] != problem.d_in:
        raise ValueError(f"expected (batch, k, {problem.d_in}) sequences for "
                         f"{problem.name}, got shape {seqs.shape}")
    config = getattr(model, "config", None)
    if config is not None and (config.d_in != problem.d_in
                               or config.d_out != problem.d_out):
        raise ValueError(
            f"model is {config.d_in}->{config.d_out} but {problem.name} "
            f"needs {problem.d_in}->{problem.d_out}")
    coords = [Tensor(seqs[:, :, j:j + 1].copy(), requires_grad=True)
              for j in range(problem.d_in)]
    z = _normalize_graph(problem, ad.concat(coords, axis=-1))
    return coords, model(z)


def residual(problem, model, seqs):
    """Residual tensor, one value per sequence position (two for ns2d)."""
    return problem.residual(model, seqs)


def ic_residual(problem, model, seqs):
    return problem.ic_residual(model, seqs)


def bc_residual(problem, model, seqs_left, seqs_right):
    """Boundary mismatch per position: value difference for periodic
    problems, raw boundary values (target zero) for Dirichlet."""
    if problem.bc == "periodic":
        _, u_l = _forward_parts(problem, model, seqs_left)
        _, u_r = _forward_parts(problem, model, seqs_right)
        return u_l - u_r
    if problem.bc == "dirichlet0":
        _, u_l = _forward_parts(problem, model, seqs_left)
        _, u_r = _forward_parts(problem, model, seqs_right)
        return ad.concat([u_l, u_r], axis=0)
    raise ValueError(f"{problem.name} has no boundary-condition component")


def boundary_predictions(problem, model, seqs):
    """Raw model values at given sequences (parameter graph attached)."""
    _, u = _forward_parts(problem, model, seqs)
    return u


def predict(problem, model, points, k=5, dt=1e-4, chunk=512):
    """Position-0 model values at raw points, evaluated without a tape."""
    points = np.asarray(points, dtype=np.float64)
    out = np.empty((len(points), problem.d_out))
    with ad.no_grad():
        for i in range(0, len(points), chunk):
            seqs = make_sequences(points[i:i + chunk], k, dt)
            _, u = _forward_parts(problem, model, seqs)
            out[i:i + chunk] = u.data[:, 0, :]
    return out


# -- analytic oracles ---------------------------------------------------------


class AnalyticModel:
    """Wraps a closed-form solution as a forward-compatible model.

    ``fn`` receives one raw-coordinate tensor per input dimension and must be
    composed from autodiff primitives, so the residual operators can
    differentiate straight through it. Used for oracle tests and null-model
    baselines; it has no trainable parameters.
    """

    def __init__(self, problem, fn):
        self.problem = problem
        self._fn = fn

    def forward(self, z):
        raw = _denormalize_graph(self.problem, ad._wrap(z))
        coords = [raw[:, :, j:j + 1] for j in range(self.problem.d_in)]
        return self._fn(*coords)

    def parameters(self):
        return []

    def __call__(self, z):
        return self.forward(z)


def analytic_model(problem):
    """Closed-form solution as a model; convection/reaction1d/wave1d only."""
    if not hasattr(problem, "analytic"):
        raise ValueError(f"{problem.name} has no closed-form solution; "
                         "use the dataset-based oracle")
    return AnalyticModel(problem, problem.analytic)


def analytical_solution(problem, x, t):
    """Closed-form solution values on arrays of physical coordinates."""
    model = analytic_model(problem)  # raises for ns2d
    with ad.no_grad():
        out = problem.analytic(Tensor(np.asarray(x, dtype=np.float64)),
                               Tensor(np.asarray(t, dtype=np.float64)))
    return out.data


# -- collocation --------------------------------------------------------------


@dataclass
class CollocationSet:
    """Residual grid plus sampled IC/BC points, raw and normalized."""

    residual_points: np.ndarray  # (N_x * N_t, 2), x-major Cartesian grid
    ic_points: np.ndarray        # (N_ic, 2), t = t_min exactly
    bc_left: np.ndarray          # (N_bc, 2) at x_min
    bc_right: np.ndarray         # (N_bc, 2) at x_max, matched times
    residual_normalized: np.ndarray
    ic_normalized: np.ndarray
    bc_left_normalized: np.ndarray
    bc_right_normalized: np.ndarray


def sample_collocation(problem, n_x, n_t, n_ic, n_bc, seed):
    """Deterministic residual grid, seeded uniform IC/BC draws."""
    if problem.spatial_dim != 1:
        raise ValueError(f"grid collocation is defined for one spatial "
                         f"dimension; {problem.name} uses its dataset")
    if min(n_x, n_t, n_ic, n_bc) < 1:
        raise ValueError("all collocation counts must be >= 1")
    (x0, x1), (t0, t1) = problem.bounds
    xs = np.linspace(x0, x1, n_x)
    ts = np.linspace(t0, t1, n_t)
    gx, gt = np.meshgrid(xs, ts, indexing="ij")
    grid = np.column_stack([gx.ravel(), gt.ravel()])

    rng = np.random.default_rng(seed)
    x_ic = rng.uniform(x0, x1, size=n_ic)
    ic = np.column_stack([x_ic, np.full(n_ic, t0)])
    t_bc = rng.uniform(t0, t1, size=n_bc)
    left = np.column_stack([np.full(n_bc, x0), t_bc])
    right = np.column_stack([np.full(n_bc, x1), t_bc])

    return CollocationSet(
        residual_points=grid, ic_points=ic, bc_left=left, bc_right=right,
        residual_normalized=normalize(problem, grid),
        ic_normalized=normalize(problem, ic),
        bc_left_normalized=normalize(problem, left),
        bc_right_normalized=normalize(problem, right),
    )
