"""Metrics, pressure offset, and spectral band decomposition."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spformer.analysis import (BAND_LABELS, BandError, BandSpec, FieldGrid,
                               band_errors, dft, pressure_offset, rmae,
                               read_band_report, rmse, write_band_report)


def brute_force_dft(x):
    """O(N^2) reference with compensated summation per bin."""
    n = len(x)
    out = np.empty(n, dtype=complex)
    for k in range(n):
        re = math.fsum(x[j] * math.cos(-2.0 * math.pi * k * j / n)
                       for j in range(n))
        im = math.fsum(x[j] * math.sin(-2.0 * math.pi * k * j / n)
                       for j in range(n))
        out[k] = complex(re, im)
    return out


# -- rmae / rmse --------------------------------------------------------------


def test_rmae_identity_zero():
    t = np.linspace(-1, 2, 40)
    assert rmae(t, t) == 0.0


def test_rmae_doubling_positive_truth():
    t = np.linspace(0.5, 3.0, 17)
    assert abs(rmae(2 * t, t) - 1.0) < 1e-14


def test_rmae_constant_offset_on_ones():
    eps = 3e-4
    t = np.ones(64)
    assert abs(rmae(t + eps, t) - eps) < 1e-16


def test_rmae_zero_truth_rejected():
    with pytest.raises(ValueError):
        rmae(np.ones(4), np.zeros(4))


def test_rmse_identity_and_null_predictor():
    t = np.array([0.3, -1.2, 0.9])
    assert rmse(t, t) == 0.0
    assert abs(rmse(np.zeros(3), t) - 1.0) < 1e-15


def test_rmse_unit_basis_example():
    # pred - truth = e1, truth = e2 -> ratio of unit norms
    truth = np.zeros(5)
    truth[1] = 1.0
    pred = truth.copy()
    pred[0] += 1.0
    assert abs(rmse(pred, truth) - 1.0) < 1e-15


def test_rmse_zero_iff_equal():
    rng = np.random.default_rng(0)
    t = rng.normal(size=30)
    p = t.copy()
    p[7] += 1e-9
    assert rmse(p, t) > 0.0


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        rmae(np.ones(3), np.ones(4))


def test_metrics_on_field_grids_check_axes():
    x, t = np.arange(3.0), np.arange(2.0)
    v = np.ones((3, 2))
    assert rmae(FieldGrid(x, t, v), FieldGrid(x, t, v)) == 0.0
    with pytest.raises(ValueError):
        rmae(FieldGrid(x, t, v), FieldGrid(x + 1.0, t, v))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1),
       st.floats(min_value=1e-3, max_value=1e3),
       st.booleans())
def test_scale_equivariance(seed, a, flip):
    if flip:
        a = -a
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=25) + 2.0  # keep away from zero-sum truth
    pred = truth + rng.normal(size=25)
    assert math.isclose(rmae(a * pred, a * truth), rmae(pred, truth),
                        rel_tol=1e-12)
    assert math.isclose(rmse(a * pred, a * truth), rmse(pred, truth),
                        rel_tol=1e-12)


# -- pressure offset ----------------------------------------------------------


def test_pressure_offset_recovers_shift():
    p = np.random.default_rng(1).normal(size=100)
    corrected, c = pressure_offset(p - 3.0, p)
    assert abs(c - 3.0) < 1e-12
    assert np.max(np.abs(corrected - p)) < 1e-12


def test_pressure_offset_identity():
    p = np.random.default_rng(2).normal(size=10)
    corrected, c = pressure_offset(p, p)
    assert c == 0.0
    assert np.array_equal(corrected, p)


def test_pressure_offset_mean_alignment():
    rng = np.random.default_rng(3)
    pred, true = rng.normal(size=50), rng.normal(size=50)
    corrected, _ = pressure_offset(pred, true)
    assert abs(np.mean(corrected) - np.mean(true)) < 1e-12


def test_pressure_offset_is_least_squares_optimal():
    rng = np.random.default_rng(4)
    pred, true = rng.normal(size=80), rng.normal(size=80)
    _, c = pressure_offset(pred, true)
    base = np.sum((true - (pred + c)) ** 2)
    for dc in (1e-3, -1e-3):
        assert np.sum((true - (pred + c + dc)) ** 2) > base


def test_pressure_offset_empty_rejected():
    with pytest.raises(ValueError):
        pressure_offset(np.array([]), np.array([]))


# -- DFT ----------------------------------------------------------------------


def test_dft_matches_brute_force_oracle():
    rng = np.random.default_rng(5)
    for _ in range(5):
        sig = rng.normal(size=101)
        assert np.max(np.abs(dft(sig) - brute_force_dft(sig))) < 1e-10


def test_dft_linearity():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=32), rng.normal(size=32)
    lhs = dft(2.0 * a - 3.0 * b)
    rhs = 2.0 * dft(a) - 3.0 * dft(b)
    assert np.max(np.abs(lhs - rhs)) < 1e-11


def test_dft_requires_1d():
    with pytest.raises(ValueError):
        dft(np.ones((3, 3)))


# -- band spec ----------------------------------------------------------------


def test_band_spec_partitions_nyquist_range():
    spec = BandSpec.from_grid(np.linspace(0.0, 1.0, 101))
    assert abs(spec.f_nyquist - 50.0) < 1e-9
    ivals = spec.intervals()
    assert [lab for lab, _, _ in ivals] == list(BAND_LABELS)
    assert ivals[0][1] == 0.0
    assert abs(ivals[-1][2] - spec.f_nyquist) < 1e-12
    for (_, _, hi), (_, lo, _) in zip(ivals[:-1], ivals[1:]):
        assert hi == lo  # adjacent bands share an edge: no gap, no overlap


def test_band_spec_rejects_bad_edges():
    with pytest.raises(ValueError):
        BandSpec(f_nyquist=10.0, edges=(3.0, 2.0, 7.0, 9.0))
    with pytest.raises(ValueError):
        BandSpec(f_nyquist=-1.0)


def test_every_bin_lands_in_exactly_one_band():
    x = np.linspace(0.0, 2.0 * np.pi, 101)
    grid = FieldGrid(x, np.arange(3.0),
                     np.random.default_rng(7).normal(size=(101, 3)))
    bands = band_errors(grid, grid)
    assert sum(b.n_bins for b in bands) == 51  # bins 0..50 for n = 101


# -- band errors --------------------------------------------------------------


def _tone_grid(x, freq, n_t=4, amp=1.0):
    vals = amp * np.sin(2.0 * np.pi * freq * x)[:, None] * np.ones((1, n_t))
    return FieldGrid(x, np.arange(float(n_t)), vals)


def test_band_errors_identity_all_zero():
    x = np.linspace(0.0, 1.0, 101)
    g = FieldGrid(x, np.arange(5.0),
                  np.random.default_rng(8).normal(size=(101, 5)))
    assert all(b.mae == 0.0 for b in band_errors(g, g))


def test_pure_tone_isolates_in_its_band():
    # 100-point periodic grid on [0, 1): dx = 0.01, f_n = 50
    x = np.linspace(0.0, 1.0, 101)[:-1]
    spec = BandSpec.from_grid(x)
    cases = [(5.0, "very_low"), (20.0, "low"), (30.0, "medium"),
             (37.0, "high"), (48.0, "very_high")]
    for freq, label in cases:
        truth = _tone_grid(x, freq)
        pred = _tone_grid(x, freq, amp=0.0)
        bands = band_errors(pred, truth, spec)
        hit = {b.label: b.mae for b in bands}
        assert hit[label] > 1e-3, (freq, label)
        for other in BAND_LABELS:
            if other != label:
                assert hit[other] < 1e-10, (freq, other)


def test_out_of_band_additions_do_not_leak():
    x = np.linspace(0.0, 1.0, 101)[:-1]
    spec = BandSpec.from_grid(x)
    truth = _tone_grid(x, 20.0)
    pred = _tone_grid(x, 20.0, amp=0.5)
    base = {b.label: b.mae for b in band_errors(pred, truth, spec)}
    # shift both fields by the same very-low tone: only that band changes
    tone = _tone_grid(x, 3.0).values
    moved = band_errors(FieldGrid(x, truth.t, pred.values + tone),
                        FieldGrid(x, truth.t, truth.values + tone), spec)
    for b in moved:
        if b.label != "very_low":
            assert abs(b.mae - base[b.label]) < 1e-10


def test_band_mass_conservation():
    x = np.linspace(0.0, 2.0 * np.pi, 101)
    rng = np.random.default_rng(9)
    pred = FieldGrid(x, np.arange(6.0), rng.normal(size=(101, 6)))
    truth = FieldGrid(x, np.arange(6.0), rng.normal(size=(101, 6)))
    bands = band_errors(pred, truth)

    # recompute total per-bin error mass directly
    n = 101
    kernel = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    err = np.mean(np.abs(np.abs(kernel @ pred.values.astype(complex))
                         - np.abs(kernel @ truth.values.astype(complex))),
                  axis=1)[:51]
    total = np.sum(err)
    assert abs(sum(b.mae * b.n_bins for b in bands) - total) < 1e-10


def test_band_errors_reject_non_uniform_grid():
    x = np.array([0.0, 0.1, 0.3, 0.6])
    g = FieldGrid(x, np.arange(2.0), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        band_errors(g, g)


def test_band_report_round_trip(tmp_path):
    x = np.linspace(0.0, 1.0, 101)[:-1]
    bands = band_errors(_tone_grid(x, 10.0, amp=0.0), _tone_grid(x, 10.0))
    path = tmp_path / "bands.csv"
    write_band_report(path, bands)
    back = read_band_report(path)
    assert [b.label for b in back] == list(BAND_LABELS)
    for orig, rec in zip(bands, back):
        assert rec.f_lo == orig.f_lo
        assert rec.f_hi == orig.f_hi
        assert rec.mae == orig.mae


def test_band_report_rejects_other_csv(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_band_report(path)
