"""Error metrics and spectral band analysis.

Provides the relative error norms used to score trained models, the
constant-offset correction for pressure fields that are only identified
up to an additive constant, and a direct DFT decomposition of the
prediction error into frequency bands of the spatial axis.
"""

import csv
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "FieldGrid",
    "BandSpec",
    "BandError",
    "rmae",
    "rmse",
    "pressure_offset",
    "dft",
    "band_errors",
    "write_band_report",
    "read_band_report",
    "BAND_LABELS",
]

# Table row order is fixed: lowest band first.
BAND_LABELS = ("very_low", "low", "medium", "high", "very_high")

# fractions of the Nyquist frequency separating adjacent bands
BAND_EDGE_FRACTIONS = (0.3, 0.5, 0.7, 0.9)

_UNIFORM_TOL = 1e-9


@dataclass
class FieldGrid:
    """Values of a scalar field on a shared x-by-t evaluation grid.

    ``values[i, j]`` is the field at ``(x[i], t[j])``.  Predictions and
    truths must be built on identical coordinate arrays so that metrics
    compare like with like.
    """

    x: np.ndarray
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.ndim != 1 or self.t.ndim != 1:
            raise ValueError("FieldGrid: coordinate axes must be 1-D")
        if self.values.shape != (self.x.size, self.t.size):
            raise ValueError(
                f"FieldGrid: values shape {self.values.shape} does not match "
                f"axes ({self.x.size}, {self.t.size})")


def _as_values(obj) -> np.ndarray:
    if isinstance(obj, FieldGrid):
        return obj.values
    return np.asarray(obj, dtype=float)


def _check_same_grid(pred, truth):
    if isinstance(pred, FieldGrid) != isinstance(truth, FieldGrid):
        raise ValueError("metric: mix of FieldGrid and raw array operands")
    if isinstance(pred, FieldGrid):
        if pred.x.shape != truth.x.shape or not np.array_equal(pred.x, truth.x):
            raise ValueError("metric: prediction and truth use different x axes")
        if pred.t.shape != truth.t.shape or not np.array_equal(pred.t, truth.t):
            raise ValueError("metric: prediction and truth use different t axes")
    a, b = _as_values(pred), _as_values(truth)
    if a.shape != b.shape:
        raise ValueError(f"metric: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def rmae(pred, truth) -> float:
    """Relative mean absolute error: sum|pred - truth| / sum|truth|."""
    p, t = _check_same_grid(pred, truth)
    denom = np.sum(np.abs(t))
    if denom == 0.0:
        raise ValueError("rmae: truth is identically zero")
    return float(np.sum(np.abs(p - t)) / denom)


def rmse(pred, truth) -> float:
    """Relative L2 error: ||pred - truth||_2 / ||truth||_2."""
    p, t = _check_same_grid(pred, truth)
    denom = np.linalg.norm((t - 0.0).ravel())
    if denom == 0.0:
        raise ValueError("rmse: truth has zero norm")
    return float(np.linalg.norm((p - t).ravel()) / denom)


def pressure_offset(p_pred, p_true) -> Tuple[np.ndarray, float]:
    """Correct a pressure prediction by the optimal additive constant.

    A streamfunction formulation determines pressure only up to a
    constant, so predictions are aligned with the reference before
    scoring.  The mean of the pointwise difference is the least-squares
    optimal shift.  Returns (corrected prediction, C).
    """
    p_pred = np.asarray(p_pred, dtype=float)
    p_true = np.asarray(p_true, dtype=float)
    if p_pred.shape != p_true.shape:
        raise ValueError(
            f"pressure_offset: shape mismatch {p_pred.shape} vs {p_true.shape}")
    if p_pred.size == 0:
        raise ValueError("pressure_offset: empty input")
    c = float(np.mean(p_true - p_pred))
    return p_pred + c, c


# -- spectral band decomposition ----------------------------------------------


@dataclass
class BandSpec:
    """Frequency bands of a uniform spatial grid.

    Five bands partition [0, f_n] at fractions {0.3, 0.5, 0.7, 0.9} of
    the Nyquist frequency f_n.  Band membership of a DFT bin is decided
    by half-open intervals [lo, hi), with the last band closed at f_n so
    every non-negative bin lands in exactly one band.
    """

    f_nyquist: float
    edges: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not np.isfinite(self.f_nyquist) or self.f_nyquist <= 0:
            raise ValueError("BandSpec: Nyquist frequency must be positive")
        if self.edges is None:
            self.edges = tuple(f * self.f_nyquist for f in BAND_EDGE_FRACTIONS)
        self.edges = tuple(float(e) for e in self.edges)
        if len(self.edges) != len(BAND_LABELS) - 1:
            raise ValueError("BandSpec: need exactly 4 interior edges")
        bounds = (0.0,) + self.edges + (self.f_nyquist,)
        if any(hi <= lo for lo, hi in zip(bounds[:-1], bounds[1:])):
            raise ValueError("BandSpec: edges must increase within (0, f_n)")

    @classmethod
    def from_grid(cls, x: np.ndarray) -> "BandSpec":
        """Build the band layout for a uniform 1-D grid of sample points."""
        dx = _uniform_spacing(np.asarray(x, dtype=float))
        return cls(f_nyquist=1.0 / (2.0 * dx))

    def intervals(self) -> List[Tuple[str, float, float]]:
        bounds = (0.0,) + self.edges + (self.f_nyquist,)
        return [(lab, bounds[i], bounds[i + 1])
                for i, lab in enumerate(BAND_LABELS)]


@dataclass
class BandError:
    label: str
    f_lo: float
    f_hi: float
    mae: float
    n_bins: int


def _uniform_spacing(x: np.ndarray) -> float:
    if x.ndim != 1 or x.size < 2:
        raise ValueError("spatial grid must be 1-D with at least 2 points")
    steps = np.diff(x)
    dx = steps[0]
    if dx <= 0 or np.any(np.abs(steps - dx) > _UNIFORM_TOL * max(1.0, abs(dx))):
        raise ValueError("spatial grid is not uniform")
    return float(dx)


def dft(signal: np.ndarray) -> np.ndarray:
    """Direct discrete Fourier transform of a 1-D signal.

    Computes X[k] = sum_n x[n] exp(-2*pi*i*k*n/N) by explicit matrix
    product.  O(N^2), but exact on the native grid with no padding, and
    cheap at the grid sizes used here.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("dft: expected a 1-D signal")
    n = x.size
    idx = np.arange(n)
    kernel = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return kernel @ x.astype(complex)


def _bin_frequencies(n: int, dx: float) -> np.ndarray:
    # physical frequency of DFT bin k on an n-point grid with spacing dx
    return np.arange(n) / (n * dx)


def band_errors(pred, truth, spec: Optional[BandSpec] = None) -> List[BandError]:
    """Mean absolute spectral error per frequency band.

    Each time slice of the grids is transformed along x; the per-bin
    error is the absolute difference of the magnitude spectra, averaged
    over time slices with equal weight.  A band's MAE averages its bins.
    Only non-negative frequencies up to the Nyquist limit enter.
    """
    if not isinstance(pred, FieldGrid) or not isinstance(truth, FieldGrid):
        raise ValueError("band_errors: operands must be FieldGrid instances")
    p, t = _check_same_grid(pred, truth)
    dx = _uniform_spacing(pred.x)
    if spec is None:
        spec = BandSpec(f_nyquist=1.0 / (2.0 * dx))

    n = pred.x.size
    idx = np.arange(n)
    kernel = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    # columns are time slices; transform all at once
    mag_p = np.abs(kernel @ p.astype(complex))
    mag_t = np.abs(kernel @ t.astype(complex))
    bin_err = np.mean(np.abs(mag_p - mag_t), axis=1)

    freqs = _bin_frequencies(n, dx)
    keep = freqs <= spec.f_nyquist + _UNIFORM_TOL
    freqs, bin_err = freqs[keep], bin_err[keep]

    out = []
    for i, (label, lo, hi) in enumerate(spec.intervals()):
        last = i == len(BAND_LABELS) - 1
        if last:
            mask = (freqs >= lo) & (freqs <= hi + _UNIFORM_TOL)
        else:
            mask = (freqs >= lo) & (freqs < hi)
        count = int(np.count_nonzero(mask))
        mae = float(np.mean(bin_err[mask])) if count else 0.0
        out.append(BandError(label, lo, hi, mae, count))
    return out


def write_band_report(path, bands: Sequence[BandError]):
    """Write band MAEs as CSV, lowest band first."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["band", "f_lo", "f_hi", "mae"])
        for b in bands:
            w.writerow([b.label, repr(b.f_lo), repr(b.f_hi), repr(b.mae)])


def read_band_report(path) -> List[BandError]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["band", "f_lo", "f_hi", "mae"]:
        raise ValueError(f"{path}: not a band report")
    out = []
    for rec in rows[1:]:
        out.append(BandError(rec[0], float(rec[1]), float(rec[2]),
                             float(rec[3]), n_bins=-1))
    return out
