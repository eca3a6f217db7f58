"""Dataset container I/O, grid assembly, sampling, and slicing."""

import numpy as np
import pytest

from spformer.data import (BINARY_MAGIC, DatasetFormatError, NsDataset,
                           build_st_grid, domain_bounds, load_ns_dataset,
                           sample_training_points, save_ns_dataset)
# aliased: a module-level name starting with test_ would be collected
from spformer.data import test_slice as extract_slice


def synthetic(n=2, tn=2, seed=0):
    rng = np.random.default_rng(seed)
    return NsDataset(
        X_star=rng.normal(size=(n, 2)),
        t=np.sort(rng.uniform(0.0, 10.0, size=tn)),
        U_star=rng.normal(size=(n, 2, tn)),
        p_star=rng.normal(size=(n, tn)),
    )


def assert_datasets_equal(a, b):
    assert np.array_equal(a.X_star, b.X_star)
    assert np.array_equal(a.t, b.t)
    assert np.array_equal(a.U_star, b.U_star)
    assert np.array_equal(a.p_star, b.p_star)


# -- invariants ---------------------------------------------------------------


def test_two_point_two_step_dataset():
    ds = synthetic(2, 2)
    assert ds.n_points == 2 and ds.n_times == 2


def test_mismatched_pressure_extent_names_array():
    with pytest.raises(ValueError, match="p_star"):
        NsDataset(np.zeros((3, 2)), np.arange(2.0), np.zeros((3, 2, 2)),
                  np.zeros((3, 5)))


def test_mismatched_velocity_extent_names_array():
    with pytest.raises(ValueError, match="U_star"):
        NsDataset(np.zeros((3, 2)), np.arange(2.0), np.zeros((4, 2, 2)),
                  np.zeros((3, 2)))


def test_non_increasing_times_rejected():
    with pytest.raises(ValueError, match="increasing"):
        NsDataset(np.zeros((1, 2)), np.array([1.0, 1.0]),
                  np.zeros((1, 2, 2)), np.zeros((1, 2)))


# -- round trips --------------------------------------------------------------


@pytest.mark.parametrize("fmt,name", [("csv", "wake.csv"), ("binary", "wake.bin")])
def test_round_trip_lossless(tmp_path, fmt, name):
    ds = synthetic(7, 4, seed=3)
    path = tmp_path / name
    save_ns_dataset(path, ds, fmt)
    assert_datasets_equal(ds, load_ns_dataset(path))


def test_round_trip_survives_extreme_doubles(tmp_path):
    ds = synthetic(2, 2, seed=4)
    ds.p_star[0, 0] = 1e-308
    ds.p_star[1, 1] = -1.2345678901234567e300
    ds.U_star[0, 1, 1] = np.pi
    for fmt, name in (("csv", "x.csv"), ("binary", "x.bin")):
        path = tmp_path / name
        save_ns_dataset(path, ds, fmt)
        assert_datasets_equal(ds, load_ns_dataset(path))


def test_format_sniffing(tmp_path):
    ds = synthetic(3, 2, seed=5)
    b = tmp_path / "d.bin"
    save_ns_dataset(b, ds, "binary")
    with open(b, "rb") as fh:
        assert fh.read(8) == BINARY_MAGIC
    c = tmp_path / "d.csv"
    save_ns_dataset(c, ds, "csv")
    with open(c) as fh:
        assert fh.readline().strip() == "x,y,ti,u,v,p"


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_ns_dataset(tmp_path / "d", synthetic(), "hdf5")


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_ns_dataset("/nonexistent/wake.csv")


# -- CSV error reporting ------------------------------------------------------


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def test_csv_bad_header(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "a,b,c\n")
    _write(str(p) + ".times", "0.0\n")
    with pytest.raises(DatasetFormatError, match=r"d\.csv:1"):
        load_ns_dataset(p)


def test_csv_bad_field_count_carries_line_number(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n1.0,2.0,0,0.1,0.2,0.3\n1.0,2.0,99\n")
    _write(str(p) + ".times", "0.0\n")
    with pytest.raises(DatasetFormatError, match=r"d\.csv:3"):
        load_ns_dataset(p)


def test_csv_non_numeric_field(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n1.0,oops,0,0.1,0.2,0.3\n")
    _write(str(p) + ".times", "0.0\n")
    with pytest.raises(DatasetFormatError, match=r"d\.csv:2"):
        load_ns_dataset(p)


def test_csv_time_index_out_of_range(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n1.0,2.0,5,0.1,0.2,0.3\n")
    _write(str(p) + ".times", "0.0\n")
    with pytest.raises(DatasetFormatError, match="time index 5"):
        load_ns_dataset(p)


def test_csv_row_count_not_multiple_of_t(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n"
              "1.0,2.0,0,0.1,0.2,0.3\n"
              "1.0,2.0,1,0.1,0.2,0.3\n"
              "3.0,4.0,0,0.1,0.2,0.3\n")
    _write(str(p) + ".times", "0.0\n1.0\n")
    with pytest.raises(DatasetFormatError, match="not a multiple"):
        load_ns_dataset(p)


def test_csv_out_of_order_block(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n"
              "1.0,2.0,1,0.1,0.2,0.3\n"
              "1.0,2.0,0,0.1,0.2,0.3\n")
    _write(str(p) + ".times", "0.0\n1.0\n")
    with pytest.raises(DatasetFormatError, match="spatial-major"):
        load_ns_dataset(p)


def test_csv_missing_sidecar(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n")
    with pytest.raises(DatasetFormatError, match="sidecar"):
        load_ns_dataset(p)


def test_sidecar_bad_value_carries_line_number(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, "x,y,ti,u,v,p\n")
    _write(str(p) + ".times", "0.0\nnope\n")
    with pytest.raises(DatasetFormatError, match=r"times:2"):
        load_ns_dataset(p)


# -- binary error reporting ---------------------------------------------------


def test_binary_truncation_carries_location(tmp_path):
    ds = synthetic(4, 3, seed=6)
    p = tmp_path / "d.bin"
    save_ns_dataset(p, ds, "binary")
    blob = p.read_bytes()
    (tmp_path / "cut.bin").write_bytes(blob[:len(blob) - 9])
    with pytest.raises(DatasetFormatError, match="truncated in p_star"):
        load_ns_dataset(tmp_path / "cut.bin")


def test_binary_trailing_bytes_rejected(tmp_path):
    ds = synthetic(2, 2, seed=7)
    p = tmp_path / "d.bin"
    save_ns_dataset(p, ds, "binary")
    (tmp_path / "pad.bin").write_bytes(p.read_bytes() + b"\x00" * 8)
    with pytest.raises(DatasetFormatError, match="trailing"):
        load_ns_dataset(tmp_path / "pad.bin")


# -- grid assembly ------------------------------------------------------------


def test_grid_counting():
    g = build_st_grid(synthetic(2, 3))
    assert len(g) == 6


def test_grid_provenance():
    ds = synthetic(3, 4, seed=8)
    g = build_st_grid(ds)
    for i in range(3):
        for j in range(4):
            s = g.sample(i * 4 + j)
            assert s.spatial_index == i and s.time_index == j
            assert s.u == ds.U_star[i, 0, j]
            assert s.v == ds.U_star[i, 1, j]
            assert (s.x, s.y) == (ds.X_star[i, 0], ds.X_star[i, 1])
            assert s.t == ds.t[j]


def test_grid_spatial_major_inputs():
    ds = synthetic(2, 2, seed=9)
    g = build_st_grid(ds)
    # first two rows are point 0 at both times
    assert np.array_equal(g.inputs[0, :2], ds.X_star[0])
    assert np.array_equal(g.inputs[1, :2], ds.X_star[0])
    assert g.inputs[0, 2] == ds.t[0] and g.inputs[1, 2] == ds.t[1]


def test_grid_carries_pressure():
    ds = synthetic(2, 3, seed=10)
    g = build_st_grid(ds)
    assert g.pressure[1 * 3 + 2] == ds.p_star[1, 2]


# -- sampling -----------------------------------------------------------------


def test_sampling_determinism():
    g = build_st_grid(synthetic(10, 5, seed=11))
    a = sample_training_points(g, 12, seed=42)
    b = sample_training_points(g, 12, seed=42)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.spatial_index, b.spatial_index)


def test_sampling_full_size_is_permutation():
    g = build_st_grid(synthetic(4, 3, seed=12))
    s = sample_training_points(g, 12, seed=0)
    key = s.spatial_index * 3 + s.time_index
    assert sorted(key.tolist()) == list(range(12))


def test_sampling_without_replacement():
    g = build_st_grid(synthetic(6, 5, seed=13))
    s = sample_training_points(g, 20, seed=1)
    key = s.spatial_index * 5 + s.time_index
    assert len(set(key.tolist())) == 20


def test_sampling_paper_count():
    # the benchmark draws 2500 of the N*T pool
    g = build_st_grid(synthetic(60, 50, seed=14))
    s = sample_training_points(g, 2500, seed=0)
    assert len(s) == 2500


def test_oversampling_rejected():
    g = build_st_grid(synthetic(2, 2))
    with pytest.raises(ValueError):
        sample_training_points(g, 5, seed=0)


def test_sample_targets_match_provenance():
    ds = synthetic(5, 4, seed=15)
    s = sample_training_points(build_st_grid(ds), 9, seed=3)
    for m in range(9):
        i, j = s.spatial_index[m], s.time_index[m]
        assert s.targets[m, 0] == ds.U_star[i, 0, j]
        assert s.targets[m, 1] == ds.U_star[i, 1, j]


# -- test slice ---------------------------------------------------------------


def test_slice_first_time_column():
    ds = synthetic(4, 3, seed=16)
    coords, u, v, p = extract_slice(ds, ds.t[0])
    assert np.array_equal(coords, ds.X_star)
    assert np.array_equal(p, ds.p_star[:, 0])
    assert np.array_equal(u, ds.U_star[:, 0, 0])
    assert len(p) == ds.n_points


def test_slice_tolerates_tiny_jitter():
    ds = synthetic(2, 3, seed=17)
    _, _, _, p = extract_slice(ds, ds.t[1] + 5e-10)
    assert np.array_equal(p, ds.p_star[:, 1])


def test_slice_absent_time_lists_available():
    ds = synthetic(2, 2, seed=18)
    with pytest.raises(ValueError, match="available times"):
        extract_slice(ds, 123.456)


# -- bounds -------------------------------------------------------------------


def test_domain_bounds():
    ds = synthetic(20, 7, seed=19)
    (x0, x1), (y0, y1), (t0, t1) = domain_bounds(ds)
    assert x0 == ds.X_star[:, 0].min() and x1 == ds.X_star[:, 0].max()
    assert y0 == ds.X_star[:, 1].min() and y1 == ds.X_star[:, 1].max()
    assert t0 == ds.t[0] and t1 == ds.t[-1]
