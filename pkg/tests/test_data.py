import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbart.data import (
    CutpointGrid,
    DataError,
    DataSet,
    VarMeta,
    load_csv,
    load_like,
    make_cutpoints,
    train_test_split,
    write_csv,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_dummy_expansion_replaces_column(tmp_path):
    p = _write(tmp_path, "y,a,c,b\n1,0.5,red,2\n2,1.5,blue,3\n3,2.5,green,4\n4,3.5,red,5\n")
    ds = load_csv(p, "y")
    assert ds.names == ("a", "c.blue", "c.green", "c.red", "b")
    np.testing.assert_array_equal(ds.x[:, 1:4], [[0, 0, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert [m.kind for m in ds.var_meta] == ["continuous", "dummy", "dummy", "dummy", "continuous"]
    np.testing.assert_array_equal(ds.y, [1, 2, 3, 4])


def test_cars_schema_has_15_predictors(tmp_path):
    rows = ["price,trim,isOneOwner,mileage,year,color,displacement"]
    trims, colors, disps, owners = ["430", "500", "550", "other"], \
        ["Black", "Silver", "White", "other"], ["4.6", "5.5", "other"], ["f", "t"]
    for i in range(8):
        rows.append(f"{20000 + i},{trims[i % 4]},{owners[i % 2]},{1000 * i + 5},{2000 + i},"
                    f"{colors[i % 4]},{disps[i % 3]}")
    ds = load_csv(_write(tmp_path, "\n".join(rows) + "\n"), "price")
    assert ds.d == 15
    assert sum(m.kind == "continuous" for m in ds.var_meta) == 2


@pytest.mark.parametrize("cell", ["NA", "", "nan", "NULL"])
def test_missing_response_names_the_cell(tmp_path, cell):
    p = _write(tmp_path, f"y,x\n1,2\n{cell},3\n4,5\n")
    with pytest.raises(DataError, match=r"row 3.*'y'"):
        load_csv(p, "y")


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv", "y")
    with pytest.raises(DataError, match="at least 2"):
        load_csv(_write(tmp_path, "y,x\n1,2\n"), "y")
    with pytest.raises(DataError, match="non-numeric response"):
        load_csv(_write(tmp_path, "y,x\n1,2\nabc,3\n"), "y")
    with pytest.raises(DataError, match="missing value at row 2, column 'x'"):
        load_csv(_write(tmp_path, "y,x\n1,\n2,3\n"), "y")
    with pytest.raises(DataError, match="not in header"):
        load_csv(_write(tmp_path, "a,x\n1,2\n2,3\n"), "y")


def test_exclude_columns(tmp_path):
    p = _write(tmp_path, "x,y,f_true\n0.1,1,9\n0.2,2,9\n")
    assert load_csv(p, "y", exclude=("f_true",)).names == ("x",)


def test_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["y,u,cat,v"]
    for i in range(30):
        lines.append(f"{rng.normal()!r},{rng.uniform()!r},{'abc'[i % 3]},{rng.normal() * 1e-7!r}")
    src = _write(tmp_path, "\n".join(lines) + "\n")
    ds = load_csv(src, "y")
    out = tmp_path / "out.csv"
    write_csv(ds, out)
    ds2 = load_csv(out, "y")
    assert ds2.names == ds.names
    assert ds2.x.tobytes() == ds.x.tobytes()
    assert ds2.y.tobytes() == ds.y.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40),
       st.integers(2, 5))
def test_round_trip_property(tmp_path_factory, ys, k):
    tmp = tmp_path_factory.mktemp("rt")
    n = len(ys)
    lines = ["y,z,g"] + [f"{y!r},{i * 0.37 - 3!r},L{i % k}" for i, y in enumerate(ys)]
    ds = load_csv(_write(tmp, "\n".join(lines) + "\n"), "y")
    # k-level categorical gives exactly min(k, n) dummy columns in {0, 1}
    dummies = [j for j, m in enumerate(ds.var_meta) if m.kind == "dummy"]
    assert len(dummies) == min(k, n)
    assert set(np.unique(ds.x[:, dummies])) <= {0.0, 1.0}
    assert np.all(ds.x[:, dummies].sum(axis=1) == 1)
    write_csv(ds, tmp / "o.csv")
    ds2 = load_csv(tmp / "o.csv", "y")
    assert ds2.x.tobytes() == ds.x.tobytes() and ds2.y.tobytes() == ds.y.tobytes()


def test_dataset_invariants():
    with pytest.raises(DataError):
        DataSet(np.ones((3, 1)), np.ones(2), (VarMeta("continuous"),), ("a",))
    with pytest.raises(DataError, match="not 0/1"):
        DataSet(np.array([[0.0], [0.5]]), np.ones(2), (VarMeta("dummy", "c", "a"),), ("c.a",))
    with pytest.raises(DataError, match="non-finite"):
        DataSet(np.array([[np.nan], [0.5]]), np.ones(2), (VarMeta("continuous"),), ("a",))
    ds = DataSet.from_arrays(np.ones((2, 1)), [1.0, 2.0])
    with pytest.raises(ValueError):
        ds.x[0, 0] = 3.0


def test_cutpoints_equal_spacing_dummy_constant():
    x = np.column_stack([np.linspace(0, 1, 11), np.r_[np.zeros(5), np.ones(6)], np.full(11, 2.0)])
    ds = DataSet(x, np.arange(11.0), (VarMeta("continuous"), VarMeta("dummy", "c", "b"),
                                      VarMeta("continuous")), ("a", "c.b", "k"))
    g = make_cutpoints(ds, max_cuts=3)
    np.testing.assert_allclose(g[0], [0.25, 0.5, 0.75])
    np.testing.assert_array_equal(g[1], [0.5])
    assert g[2].size == 0
    np.testing.assert_array_equal(g.sizes, [3, 1, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=50),
       st.integers(1, 120))
def test_cutpoints_strictly_inside(vals, max_cuts):
    x = np.array(vals)[:, None]
    ds = DataSet.from_arrays(x, np.zeros(len(vals)))
    c = make_cutpoints(ds, max_cuts)[0]
    if np.ptp(x) == 0:
        assert c.size == 0
    else:
        assert 1 <= c.size <= max_cuts
        assert np.all(np.diff(c) > 0)
        assert c.min() > x.min() and c.max() < x.max()


def test_grid_code_matches_strict_less_than():
    g = CutpointGrid((np.array([0.2, 0.5, 0.8]),))
    x = np.array([[0.0], [0.2], [0.3], [0.5], [0.79], [0.8], [1.0]])
    code = g.code(x)[:, 0]
    for k in range(3):
        np.testing.assert_array_equal(code <= k, x[:, 0] < g[0][k])
    with pytest.raises(DataError):
        CutpointGrid((np.array([0.5, 0.5]),))


def test_train_test_split():
    ds = DataSet.from_arrays(np.arange(10.0)[:, None], np.arange(10.0))
    tr, te = train_test_split(ds, 0.6, seed=4)
    assert (tr.n, te.n) == (6, 4)
    assert set(tr.y) | set(te.y) == set(range(10)) and not set(tr.y) & set(te.y)
    tr2, te2 = train_test_split(ds, 0.6, seed=4)
    np.testing.assert_array_equal(tr.y, tr2.y)
    tr, te = train_test_split(ds, 0.999, seed=1)
    assert (tr.n, te.n) == (9, 1)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            train_test_split(ds, bad, seed=0)


def test_load_like_encodes_with_training_layout(tmp_path):
    train = load_csv(_write(tmp_path, "y,c,a\n1,u,0.5\n2,v,1.5\n"), "y")
    x, y = load_like(_write(tmp_path, "a,c\n3.0,v\n4.0,w\n", "n.csv"), train.names,
                     train.var_meta, "y")
    assert y is None
    np.testing.assert_array_equal(x, [[0, 1, 3.0], [0, 0, 4.0]])
