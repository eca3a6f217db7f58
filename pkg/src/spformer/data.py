"""Cylinder-wake dataset ingestion and sampling.

The measurement set consists of N scattered spatial points observed at T
time steps: coordinates ``X_star`` (N, 2), times ``t`` (T,), velocities
``U_star`` (N, 2, T) and pressures ``p_star`` (N, T).  The upstream
distribution uses a proprietary scientific container, so this module
defines two plain formats of its own and a writer for converting:

CSV container
    Header row ``x,y,ti,u,v,p``; one row per (spatial point, time index)
    pair in spatial-major order (all T rows of point 0, then point 1,
    ...).  ``ti`` is the integer time index.  The T time values live in
    a sidecar file at ``<path>.times``, one float per line.

Flat binary container
    Magic bytes ``NSWAKE01``, then N and T as little-endian int64, then
    X_star, t, U_star, p_star as little-endian float64 in C order.

Both round-trip float64 exactly (the CSV writer uses repr).
"""

import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

__all__ = [
    "NsDataset",
    "NsSample",
    "StGrid",
    "load_ns_dataset",
    "save_ns_dataset",
    "build_st_grid",
    "sample_training_points",
    "test_slice",
    "domain_bounds",
    "BINARY_MAGIC",
    "CSV_HEADER",
]

BINARY_MAGIC = b"NSWAKE01"
CSV_HEADER = "x,y,ti,u,v,p"
_TIME_TOL = 1e-9


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending location."""


@dataclass
class NsDataset:
    """Scattered space points observed over a shared time axis."""

    X_star: np.ndarray  # (N, 2)
    t: np.ndarray       # (T,)
    U_star: np.ndarray  # (N, 2, T)
    p_star: np.ndarray  # (N, T)

    def __post_init__(self):
        self.X_star = np.asarray(self.X_star, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.U_star = np.asarray(self.U_star, dtype=np.float64)
        self.p_star = np.asarray(self.p_star, dtype=np.float64)
        n, tn = self.n_points, self.n_times
        if self.X_star.ndim != 2 or self.X_star.shape[1] != 2:
            raise ValueError(f"X_star must be (N, 2), got {self.X_star.shape}")
        if self.t.ndim != 1:
            raise ValueError(f"t must be 1-D, got shape {self.t.shape}")
        if self.U_star.shape != (n, 2, tn):
            raise ValueError(
                f"U_star shape {self.U_star.shape} inconsistent with "
                f"N={n}, T={tn}")
        if self.p_star.shape != (n, tn):
            raise ValueError(
                f"p_star shape {self.p_star.shape} inconsistent with "
                f"N={n}, T={tn}")
        if tn > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("time values must be strictly increasing")

    @property
    def n_points(self) -> int:
        return self.X_star.shape[0]

    @property
    def n_times(self) -> int:
        return self.t.shape[0]


@dataclass
class NsSample:
    """One (point, time) observation with its provenance indices."""

    x: float
    y: float
    t: float
    u: float
    v: float
    spatial_index: int
    time_index: int


@dataclass
class StGrid:
    """Cartesian product of spatial points and times, spatial-major.

    Row ``i * T + j`` pairs spatial point ``i`` with time step ``j``.
    ``inputs`` stacks (x, y, t); ``targets`` stacks (u, v); ``pressure``
    is carried for evaluation.
    """

    inputs: np.ndarray         # (M, 3)
    targets: np.ndarray        # (M, 2)
    pressure: np.ndarray       # (M,)
    spatial_index: np.ndarray  # (M,)
    time_index: np.ndarray     # (M,)

    def __len__(self):
        return self.inputs.shape[0]

    def sample(self, m: int) -> NsSample:
        x, y, t = self.inputs[m]
        u, v = self.targets[m]
        return NsSample(float(x), float(y), float(t), float(u), float(v),
                        int(self.spatial_index[m]), int(self.time_index[m]))


# -- file I/O -----------------------------------------------------------------


def _sidecar_path(path) -> str:
    return str(path) + ".times"


def save_ns_dataset(path, ds: NsDataset, fmt: str = "csv"):
    """Write a dataset in one of the two documented containers."""
    if fmt == "csv":
        _save_csv(path, ds)
    elif fmt == "binary":
        _save_binary(path, ds)
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'binary'")


def _save_csv(path, ds):
    # repr of a Python float round-trips the exact double
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(ds.n_points):
            x, y = (float(c) for c in ds.X_star[i])
            for j in range(ds.n_times):
                fh.write(f"{x!r},{y!r},{j},{float(ds.U_star[i, 0, j])!r},"
                         f"{float(ds.U_star[i, 1, j])!r},"
                         f"{float(ds.p_star[i, j])!r}\n")
    with open(_sidecar_path(path), "w") as fh:
        for tv in ds.t:
            fh.write(f"{float(tv)!r}\n")


def _save_binary(path, ds):
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(np.array([ds.n_points, ds.n_times], dtype="<i8").tobytes())
        for arr in (ds.X_star, ds.t, ds.U_star, ds.p_star):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ns_dataset(path) -> NsDataset:
    """Read either container; the binary magic decides the branch."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_csv(path)


def _load_binary(path) -> NsDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = len(BINARY_MAGIC)
    if len(blob) < off + 16:
        raise DatasetFormatError(f"{path}: truncated header at byte {len(blob)}")
    n, tn = (int(v) for v in np.frombuffer(blob, dtype="<i8", count=2,
                                           offset=off))
    if n <= 0 or tn <= 0:
        raise DatasetFormatError(f"{path}: non-positive extents N={n}, T={tn}")
    off += 16

    def take(count, name, shape):
        nonlocal off
        nbytes = count * 8
        if len(blob) < off + nbytes:
            raise DatasetFormatError(
                f"{path}: truncated in {name} at byte {off} "
                f"(need {nbytes} more bytes)")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += nbytes
        return arr.reshape(shape).copy()

    x_star = take(n * 2, "X_star", (n, 2))
    t = take(tn, "t", (tn,))
    u_star = take(n * 2 * tn, "U_star", (n, 2, tn))
    p_star = take(n * tn, "p_star", (n, tn))
    if off != len(blob):
        raise DatasetFormatError(
            f"{path}: {len(blob) - off} trailing bytes after p_star")
    try:
        return NsDataset(x_star, t, u_star, p_star)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def _load_csv(path) -> NsDataset:
    sidecar = _sidecar_path(path)
    if not os.path.exists(sidecar):
        raise DatasetFormatError(
            f"{path}: missing sidecar time file {sidecar}")
    times = []
    with open(sidecar) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                times.append(float(line))
            except ValueError:
                raise DatasetFormatError(
                    f"{sidecar}:{lineno}: not a number: {line!r}") from None
    if not times:
        raise DatasetFormatError(f"{sidecar}: no time values")
    tn = len(times)

    rows: List[Tuple[float, float, int, float, float, float]] = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise DatasetFormatError(
                f"{path}:1: expected header {CSV_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                x, y = float(parts[0]), float(parts[1])
                ti = int(parts[2])
                u, v, p = (float(parts[3]), float(parts[4]), float(parts[5]))
            except ValueError as exc:
                raise DatasetFormatError(
                    f"{path}:{lineno}: {exc}") from None
            if not 0 <= ti < tn:
                raise DatasetFormatError(
                    f"{path}:{lineno}: time index {ti} outside [0, {tn})")
            rows.append((x, y, ti, u, v, p))

    if not rows or len(rows) % tn != 0:
        raise DatasetFormatError(
            f"{path}: {len(rows)} data rows is not a multiple of T={tn}")
    n = len(rows) // tn

    x_star = np.empty((n, 2))
    u_star = np.empty((n, 2, tn))
    p_star = np.empty((n, tn))
    for i in range(n):
        block = rows[i * tn:(i + 1) * tn]
        x_star[i] = block[0][:2]
        for j, (x, y, ti, u, v, p) in enumerate(block):
            lineno = 2 + i * tn + j
            if ti != j:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected time index {j} "
                    f"(spatial-major order), got {ti}")
            if (x, y) != (block[0][0], block[0][1]):
                raise DatasetFormatError(
                    f"{path}:{lineno}: coordinates changed mid-block; "
                    f"rows of one spatial point must be contiguous")
            u_star[i, 0, j], u_star[i, 1, j], p_star[i, j] = u, v, p
    try:
        return NsDataset(x_star, np.asarray(times), u_star, p_star)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


# -- grid assembly and sampling -----------------------------------------------


def build_st_grid(ds: NsDataset) -> StGrid:
    """All N*T (point, time) combinations in spatial-major order."""
    n, tn = ds.n_points, ds.n_times
    si = np.repeat(np.arange(n), tn)
    ti = np.tile(np.arange(tn), n)
    inputs = np.column_stack([ds.X_star[si, 0], ds.X_star[si, 1], ds.t[ti]])
    targets = np.column_stack([ds.U_star[si, 0, ti], ds.U_star[si, 1, ti]])
    return StGrid(inputs, targets, ds.p_star[si, ti], si, ti)


def sample_training_points(grid: StGrid, n: int, seed: int) -> StGrid:
    """Draw n rows uniformly without replacement; order is the draw order."""
    if n > len(grid):
        raise ValueError(f"cannot draw {n} from a grid of {len(grid)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(grid), size=n, replace=False)
    return StGrid(grid.inputs[idx].copy(), grid.targets[idx].copy(),
                  grid.pressure[idx].copy(), grid.spatial_index[idx].copy(),
                  grid.time_index[idx].copy())


def test_slice(ds: NsDataset, t_value: float):
    """Coordinates, velocities and pressures at one recorded time.

    Returns (X_star, u, v, p) for the time step matching ``t_value``
    within 1e-9.
    """
    diffs = np.abs(ds.t - t_value)
    j = int(np.argmin(diffs))
    if diffs[j] > _TIME_TOL:
        raise ValueError(
            f"t={t_value} not in dataset; available times: {ds.t.tolist()}")
    return ds.X_star, ds.U_star[:, 0, j], ds.U_star[:, 1, j], ds.p_star[:, j]


def domain_bounds(ds: NsDataset) -> Tuple[Tuple[float, float], ...]:
    """Per-coordinate (min, max) of the measurement domain, as needed to
    normalize (x, y, t) inputs consistently between training and replay."""
    return (
        (float(ds.X_star[:, 0].min()), float(ds.X_star[:, 0].max())),
        (float(ds.X_star[:, 1].min()), float(ds.X_star[:, 1].max())),
        (float(ds.t.min()), float(ds.t.max())),
    )
