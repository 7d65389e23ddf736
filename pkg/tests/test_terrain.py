import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probewalk.terrain import (
    HeightGrid,
    OutOfBoundsError,
    PlankField,
    RigidTerrain,
    RockField,
    TerrainGeometryError,
    TerrainParameterError,
    elevation_map_of,
    height_at,
    make_plank_field,
    terrain_from_mapping,
)

WEIGHT = 21.0 * 9.81


def test_flat_grid_height():
    grid = HeightGrid(np.zeros(2), 0.1, np.zeros((10, 10)))
    assert height_at(grid, (0.55, 0.31)) == 0.0


def test_plank_top_height_in_map():
    field = make_plank_field(4, 0.2, 0.25, 20.0, level=0.12)
    grid = elevation_map_of(field, 0.02)
    assert height_at(grid, (0.3, 0.05)) == pytest.approx(0.12)


@pytest.mark.parametrize("xy", [(-0.01, 0.5), (1.5, 0.5), (0.5, 2.0)])
def test_out_of_bounds_rejected(xy):
    grid = HeightGrid(np.zeros(2), 0.1, np.zeros((10, 10)))
    with pytest.raises(OutOfBoundsError):
        height_at(grid, xy)


def test_bad_grid_parameters():
    with pytest.raises(TerrainParameterError):
        HeightGrid(np.zeros(2), 0.0, np.zeros((3, 3)))
    with pytest.raises(TerrainParameterError):
        HeightGrid(np.zeros(2), 0.1, np.full((3, 3), np.inf))


def test_plank_field_length():
    assert make_plank_field(4, 0.200, 0.250, 20.0).length == pytest.approx(1.0)
    assert make_plank_field(1, 0.200, 0.250, 20.0).length == pytest.approx(0.25)


@pytest.mark.parametrize("kwargs", [dict(stiffness=0.0), dict(plank_w=0.0), dict(plank_l=-0.1), dict(rows=0)])
def test_plank_parameter_errors(kwargs):
    args = dict(rows=4, plank_w=0.2, plank_l=0.25, stiffness=20.0) | kwargs
    with pytest.raises(TerrainParameterError):
        make_plank_field(**args)


def test_beams_at_row_centres():
    field = make_plank_field(4, 0.2, 0.25, 20.0, start_x=0.1)
    np.testing.assert_allclose([field.beam_x(r) for r in range(4)], [0.225, 0.475, 0.725, 0.975])


def test_rigid_load():
    r = RigidTerrain().apply_load((0.3, 0.1, 0.0), (0, 0, -100))
    np.testing.assert_array_equal(r.displacement, 0.0)
    assert not r.collapsed


def test_lever_example():
    # k = 50, d = 0.10, F = 100 -> theta = 0.2 rad
    field = make_plank_field(1, 0.2, 0.25, 50.0)
    point = np.array([field.beam_x(0) + 0.10, 0.0, 0.0])
    r = field.apply_load(point, (0, 0, -100.0))
    assert r.displacement[2] == pytest.approx(-0.10 * np.sin(0.2), abs=1e-12)
    assert -r.displacement[2] == pytest.approx(0.0199, abs=5e-5)
    assert r.support_height == pytest.approx(-0.10 * np.sin(0.2))


def test_load_on_beam_does_not_move():
    field = make_plank_field(1, 0.2, 0.25, 20.0)
    r = field.apply_load((field.beam_x(0), 0.0, 0.0), (0, 0, -WEIGHT))
    np.testing.assert_allclose(r.displacement, 0.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.025, 0.025), st.floats(0.0, WEIGHT), st.integers(0, 1000))
def test_beam_safety(d, force, seed):
    field = make_plank_field(4, 0.2, 0.25, 20.0, stiffness_jitter=0.1, seed=seed)
    r = field.apply_load((field.beam_x(1) + d, 0.05, 0.0), (0, 0, -force))
    assert np.linalg.norm(r.displacement) < 0.03


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.12, 0.12), st.floats(0.0, 300.0), st.floats(0.0, 300.0))
def test_lever_monotone_in_force(d, f1, f2):
    field = make_plank_field(1, 0.2, 0.25, 20.0)
    p = (field.beam_x(0) + d, 0.0, 0.0)
    lo, hi = sorted((f1, f2))
    assert -field.apply_load(p, (0, 0, -hi)).displacement[2] >= -field.apply_load(p, (0, 0, -lo)).displacement[2]


def test_default_stiffness_collapses_at_edge():
    # half the robot weight near the plank edge must be detectable (> 3 cm)
    field = make_plank_field(4, 0.2, 0.25, 20.0, stiffness_jitter=0.1, seed=3)
    r = field.apply_load((field.beam_x(0) + 0.12, 0.0, 0.0), (0, 0, -0.5 * WEIGHT))
    assert np.linalg.norm(r.displacement) > 0.03


def test_plank_determinism():
    a = make_plank_field(4, 0.2, 0.25, 20.0, stiffness_jitter=0.1, seed=7)
    b = make_plank_field(4, 0.2, 0.25, 20.0, stiffness_jitter=0.1, seed=7)
    np.testing.assert_array_equal(a.stiffness, b.stiffness)
    p, f = (0.3, 0.05, 0.0), (0.0, 0.0, -80.0)
    np.testing.assert_array_equal(a.apply_load(p, f).displacement, b.apply_load(p, f).displacement)


def test_contact_off_surface_rejected():
    field = make_plank_field(4, 0.2, 0.25, 20.0)
    with pytest.raises(TerrainGeometryError):
        field.apply_load((0.3, 0.0, 0.1), (0, 0, -50))


def test_removed_plank_is_a_hole():
    field = make_plank_field(4, 0.2, 0.25, 20.0, removed=frozenset({(1, 2)}))
    x0, x1, y0, y1 = field.plank_footprint(1, 2)
    assert field.surface_height(((x0 + x1) / 2, (y0 + y1) / 2)) is None
    with pytest.raises(TerrainGeometryError):
        field.apply_load(((x0 + x1) / 2, (y0 + y1) / 2, 0.0), (0, 0, -50))
    grid = elevation_map_of(field, 0.02)
    for ix in range(grid.width):
        for iy in range(grid.height):
            cx, cy = grid.cell_center(ix, iy)
            if min(abs(cx - x0), abs(cx - x1), abs(cy - y0), abs(cy - y1)) < 1e-9:
                continue  # centre on the plank border
            inside = x0 < cx < x1 and y0 < cy < y1
            assert np.isnan(grid.cells[ix, iy]) == inside


def test_intact_field_renders_flat():
    grid = elevation_map_of(make_plank_field(4, 0.2, 0.25, 20.0), 0.02)
    assert np.nanmax(grid.cells) - np.nanmin(grid.cells) < 0.02
    assert not np.any(np.isnan(grid.cells))


def test_rigid_map_all_zero():
    grid = elevation_map_of(RigidTerrain(), 0.05)
    np.testing.assert_array_equal(grid.cells, 0.0)


def test_rock_collapse_by_capacity():
    rocks = RockField(length=0.2, width=0.2, cell=0.1, capacity=np.full((2, 2), 80.0))
    r = rocks.apply_load((0.05, 0.05, 0.0), (0, 0, -100.0))
    assert r.collapsed
    assert r.displacement[2] == pytest.approx(-0.05)
    ok = rocks.apply_load((0.15, 0.05, 0.0), (0, 0, -60.0))
    assert not ok.collapsed
    np.testing.assert_array_equal(ok.displacement, 0.0)


def test_rock_capacities_in_range_and_seeded():
    a = RockField(capacity_range=(60, 160), seed=4)
    b = RockField(capacity_range=(60, 160), seed=4)
    assert a.capacity.min() >= 60 and a.capacity.max() <= 160
    np.testing.assert_array_equal(a.capacity, b.capacity)


def test_terrain_from_mapping_strings():
    t = terrain_from_mapping({"variant": "PlankField", "rows": "2", "removed": "0:1 1:3", "stiffness": "30"})
    assert isinstance(t, PlankField)
    assert t.removed == {(0, 1), (1, 3)}
    with pytest.raises(TerrainParameterError):
        terrain_from_mapping({"variant": "Lava"})
