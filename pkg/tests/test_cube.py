import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volgibbs.cube import (CubeFormatError, CubeGrid, GridError, TransformSpec, VolCube,
                           apply_transform, flatten_index, inverse_transform, random_mask,
                           read_cube, read_grid, unflatten_index, write_cube, write_grid)


def small_grid(m, t, s):
    offs = [0.0] + [0.001 * (k + 1) for k in range(s - 1)]
    return CubeGrid(tuple(range(1, m + 1)), tuple(range(1, t + 1)), tuple(sorted(offs)))


def test_default_grid_has_4998_points():
    g = CubeGrid.default()
    assert g.shape == (21, 14, 17)
    assert g.size == 4998
    assert CubeGrid.desk().shape == (8, 6, 7)


def test_flatten_examples():
    assert flatten_index(0, 0, 0, small_grid(3, 2, 4)) == 0
    assert flatten_index(1, 1, 1, small_grid(2, 2, 2)) == 7
    g = small_grid(2, 3, 4)
    order = list(itertools.product(range(2), range(3), range(4)))
    assert order.index((1, 0, 1)) == 13
    assert flatten_index(1, 0, 1, g) == 13


def test_flatten_exhaustive_bijection():
    for shape in [(1, 1, 1), (2, 3, 4), (3, 1, 5), (4, 4, 2)]:
        g = small_grid(*shape)
        seen = []
        for i, j, k in itertools.product(*map(range, shape)):
            f = flatten_index(i, j, k, g)
            assert unflatten_index(f, g) == (i, j, k)
            seen.append(f)
        assert seen == list(range(g.size))


@pytest.mark.parametrize("idx", [(2, 0, 0), (0, 3, 0), (0, 0, 4), (-1, 0, 0)])
def test_flatten_out_of_bounds(idx):
    with pytest.raises(IndexError):
        flatten_index(*idx, small_grid(2, 3, 4))


def test_grid_invariants():
    with pytest.raises(GridError):
        CubeGrid((1.0, 0.5), (1.0,), (0.0,))
    with pytest.raises(GridError):
        CubeGrid((0.0, 1.0), (1.0,), (0.0,))
    with pytest.raises(GridError):
        CubeGrid((1.0,), (1.0,), (-0.01, 0.01))


def test_transform_examples():
    assert apply_transform(1.0, "log") == 0.0
    assert apply_transform(0.0, "artanh") == 0.0
    assert apply_transform(0.5, TransformSpec("artanh")) == pytest.approx(0.5 * math.log(1.5 / 0.5), rel=1e-15)
    assert apply_transform(3.0, "identity") == 3.0


@pytest.mark.parametrize("x,kind", [(0.0, "log"), (-1.0, "log"), (1.0, "artanh"), (-1.2, "artanh")])
def test_transform_domain_errors(x, kind):
    with pytest.raises(ValueError):
        apply_transform(x, kind)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-8, 1e8))
def test_log_roundtrip(x):
    assert inverse_transform(apply_transform(x, "log"), "log") == pytest.approx(x, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.999, 0.999))
def test_artanh_roundtrip(x):
    assert inverse_transform(apply_transform(x, "artanh"), "artanh") == pytest.approx(x, rel=1e-12, abs=1e-300)


def test_transforms_monotone():
    xs = np.linspace(-0.99, 0.99, 201)
    assert np.all(np.diff(apply_transform(xs, "artanh")) > 0)
    xs = np.geomspace(1e-6, 1e3, 201)
    assert np.all(np.diff(apply_transform(xs, "log")) > 0)


def test_cube_roundtrip_with_mask(tmp_path):
    g = small_grid(2, 2, 3)
    vals = np.array([53.25, 41.0, 60.1, 1 / 3, 2 / 7, 55.5, 44.4, 50.0, 51.0, 52.0, 49.9, 48.75])
    mask = np.ones(12, bool)
    mask[[2, 7]] = False
    cube = VolCube(g, vals, mask)
    write_cube(cube, tmp_path / "c.csv")
    back = read_cube(tmp_path / "c.csv")
    assert back == cube
    assert np.array_equal(back.mask, mask)
    assert np.array_equal(back.values[mask], vals[mask])
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "maturity,tenor,strike_offset,vol_bp"
    assert lines[3].endswith(",")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-6, 1e4, allow_nan=False), min_size=12, max_size=12),
       st.lists(st.booleans(), min_size=12, max_size=12))
def test_cube_roundtrip_bit_exact(tmp_path_factory, vals, mask):
    g = small_grid(2, 2, 3)
    cube = VolCube(g, np.array(vals), np.array(mask))
    p = tmp_path_factory.mktemp("rt") / "c.csv"
    write_cube(cube, p)
    back = read_cube(p)
    assert np.array_equal(back.mask, cube.mask)
    assert back.values[back.mask].tobytes() == cube.values[cube.mask].tobytes()


def test_negative_vol_in_file_is_schema_error(tmp_path):
    g = small_grid(1, 1, 2)
    write_cube(VolCube(g, [50.0, 60.0]), tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_text().replace("60.0", "-60.0")
    (tmp_path / "c.csv").write_text(text)
    with pytest.raises(CubeFormatError, match="row 3"):
        read_cube(tmp_path / "c.csv")


def test_missing_atm_column_is_grid_error(tmp_path):
    lines = ["maturity,tenor,strike_offset,vol_bp", "1.0,1.0,-0.01,50.0", "1.0,1.0,0.01,52.0"]
    (tmp_path / "c.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(GridError):
        read_cube(tmp_path / "c.csv")


def test_malformed_row_reports_row_number(tmp_path):
    lines = ["maturity,tenor,strike_offset,vol_bp", "1.0,1.0,0.0,50.0", "1.0,1.0"]
    (tmp_path / "c.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(CubeFormatError, match="row 3"):
        read_cube(tmp_path / "c.csv")


def test_cube_invariants():
    g = small_grid(1, 1, 2)
    with pytest.raises(CubeFormatError):
        VolCube(g, [50.0])
    with pytest.raises(CubeFormatError):
        VolCube(g, [50.0, 0.0])
    c = VolCube(g, [50.0, np.nan], [True, False])
    assert c.n_missing == 1
    with pytest.raises(ValueError):
        c.values[0] = 1.0


def test_grid_json_roundtrip(tmp_path):
    g = CubeGrid.desk()
    write_grid(g, tmp_path / "g.json")
    assert read_grid(tmp_path / "g.json") == g


def test_random_mask_rate_and_determinism():
    g = CubeGrid.desk()
    m1 = random_mask(g, 0.796, np.random.default_rng(3))
    m2 = random_mask(g, 0.796, np.random.default_rng(3))
    assert np.array_equal(m1, m2)
    assert (~m1).sum() == round(0.796 * g.size)
