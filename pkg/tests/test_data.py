import numpy as np
import pytest

from mixedboot import data as data_mod
from mixedboot.data import DataError, design_from_json, read_csv, simulate_dataset, write_csv
from mixedboot.numerics import RandomStream

from conftest import MEDSIM_DESIGN_DOC


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


CSV_OK = """g,t,y
a,0,1.5
a,1,2.5
b,0,0.5
b,1,1.5
c,0,2.0
c,1,3.0
"""


def test_read_csv_shapes(tmp_path):
    ds = read_csv(_write(tmp_path / "d.csv", CSV_OK), "y ~ t + (t|g)")
    assert ds.n == 3 and ds.N == 6 and ds.p == 2 and ds.q == 2
    assert ds.fixed_names == ("(Intercept)", "t")
    assert [b.id for b in ds.clusters] == ["a", "b", "c"]
    np.testing.assert_array_equal(ds.clusters[0].y, [1.5, 2.5])
    np.testing.assert_array_equal(ds.clusters[1].X, [[1.0, 0.0], [1.0, 1.0]])


def test_read_csv_missing_rows_dropped(tmp_path):
    text = "g,t,y\na,0,1\na,1,NA\nb,0,2\nb,1,\nc,0,3\nc,1,4\n"
    ds = read_csv(_write(tmp_path / "d.csv", text), "y ~ t + (1|g)")
    assert ds.dropped_rows == 2
    assert ds.N == 4


def test_read_csv_missing_column(tmp_path):
    with pytest.raises(DataError, match="missing column"):
        read_csv(_write(tmp_path / "d.csv", CSV_OK), "y ~ dose + (1|g)")


def test_read_csv_cluster_fully_dropped(tmp_path):
    text = "g,t,y\na,0,1\na,1,2\nb,NA,3\nb,NA,4\nc,0,5\nc,1,6\n"
    with pytest.raises(DataError, match="all rows dropped"):
        read_csv(_write(tmp_path / "d.csv", text), "y ~ t + (1|g)")


def test_read_csv_too_few_clusters(tmp_path):
    text = "g,t,y\na,0,1\na,1,2\n"
    with pytest.raises(DataError, match="at least 2 clusters"):
        read_csv(_write(tmp_path / "d.csv", text), "y ~ t + (1|g)")


def test_read_csv_empty_file(tmp_path):
    with pytest.raises(DataError, match="empty file"):
        read_csv(_write(tmp_path / "d.csv", ""), "y ~ t + (1|g)")


def test_read_csv_non_numeric_dropped(tmp_path):
    text = "g,t,y\na,0,1\na,x,2\nb,0,3\nb,1,4\n"
    ds = read_csv(_write(tmp_path / "d.csv", text), "y ~ t + (1|g)")
    assert ds.dropped_rows == 1


def test_write_read_round_trip(tmp_path, medsim_data):
    path = tmp_path / "sim.csv"
    write_csv(medsim_data, path)
    back = read_csv(str(path), data_mod.MEDSIM_FORMULA)
    assert back.n == medsim_data.n and back.N == medsim_data.N
    for a, b in zip(back.clusters, medsim_data.clusters):
        assert a.id == b.id
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Z, b.Z)


def test_interaction_column(tmp_path):
    text = "g,a,b,y\n" + "".join(
        f"c{i},{i % 2},{j},{i + j}\n" for i in range(4) for j in range(3)
    )
    ds = read_csv(_write(tmp_path / "d.csv", text), "y ~ a * b + (1|g)")
    X = ds.stacked_X()
    np.testing.assert_array_equal(X[:, 3], X[:, 1] * X[:, 2])


def test_without_cluster(medsim_data):
    sub = medsim_data.without_cluster(4)
    removed = medsim_data.clusters[4].id
    assert sub.n == medsim_data.n - 1
    assert removed not in [b.id for b in sub.clusters]
    assert removed not in set(sub.columns[sub.cluster_var])
    with pytest.raises(IndexError):
        medsim_data.without_cluster(medsim_data.n)


def test_design_from_json_fraction():
    design, seed = design_from_json(MEDSIM_DESIGN_DOC)
    assert design.n == 60
    assert design.group_assignment.sum() == 30
    # untreated clusters come first
    assert np.all(design.group_assignment[:30] == 0)
    assert seed == 0


def test_design_from_json_explicit_treat():
    doc = dict(MEDSIM_DESIGN_DOC, n=4, treat=[1, 0, 0, 1], seed=9)
    doc.pop("treat_fraction")
    design, seed = design_from_json(doc)
    np.testing.assert_array_equal(design.group_assignment, [1, 0, 0, 1])
    assert seed == 9


def test_design_requires_assignment():
    doc = {k: v for k, v in MEDSIM_DESIGN_DOC.items() if k != "treat_fraction"}
    with pytest.raises(DataError):
        design_from_json(doc)


def test_simulate_shapes_and_determinism(medsim_design):
    a = simulate_dataset(medsim_design, RandomStream(42))
    b = simulate_dataset(medsim_design, RandomStream(42))
    c = simulate_dataset(medsim_design, RandomStream(43))
    assert a.n == 60 and a.N == 420 and a.p == 4 and a.q == 2
    np.testing.assert_array_equal(a.stacked_y(), b.stacked_y())
    assert not np.array_equal(a.stacked_y(), c.stacked_y())


def test_simulate_design_columns(medsim_design):
    ds = simulate_dataset(medsim_design, RandomStream(1))
    block = ds.clusters[45]  # a treated subject
    t = np.arange(0.0, 19.0, 3.0)
    np.testing.assert_array_equal(block.X, np.column_stack([np.ones(7), np.ones(7), t, t]))
    np.testing.assert_array_equal(block.Z, np.column_stack([np.ones(7), t]))


def test_from_columns_non_finite():
    cols = {
        "g": np.array(["a", "a", "b", "b"]),
        "t": np.array([0.0, 1.0, 0.0, np.nan]),
        "y": np.array([1.0, 2.0, 3.0, 4.0]),
    }
    with pytest.raises(DataError, match="non-finite"):
        data_mod.from_columns("y ~ t + (1|g)", cols)
