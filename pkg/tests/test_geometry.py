import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semplan.geometry import (
    GeometryError,
    OccupancyGrid,
    Workspace,
    chi2_2dof_quantile,
    confidence_ellipse_cells,
    distance_field,
    rasterize,
)

SQRT2 = math.sqrt(2.0)


def relaxation_oracle(blocked, goal, res):
    """Bellman-Ford style relaxation over the 8-neighbourhood, no corner cutting."""
    nx, ny = blocked.shape
    dist = np.full((nx, ny), np.inf)
    dist[goal] = 0.0
    changed = True
    while changed:
        changed = False
        for i in range(nx):
            for j in range(ny):
                if blocked[i, j]:
                    continue
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        if di == dj == 0:
                            continue
                        a, b = i + di, j + dj
                        if not (0 <= a < nx and 0 <= b < ny) or blocked[a, b]:
                            continue
                        if di and dj and (blocked[i + di, j] or blocked[i, j + dj]):
                            continue
                        w = res * (SQRT2 if di and dj else 1.0)
                        if dist[a, b] + w < dist[i, j] - 1e-15:
                            dist[i, j] = dist[a, b] + w
                            changed = True
    return dist


def grid_from_mask(mask, res=1.0):
    return OccupancyGrid(res, mask.shape, (0.0, 0.0), mask)


def test_empty_workspace_rasterizes_to_free_grid():
    grid = rasterize(Workspace((0, 0, 4, 4)), 0.5)
    assert grid.shape == (8, 8)
    assert not grid.occupied.any()


def test_centered_obstacle_occupies_four_cells():
    ws = Workspace((0, 0, 4, 4), obstacles=[[1.5, 1.5, 2.5, 2.5]])
    grid = rasterize(ws, 0.5)
    assert grid.occupied.sum() == 4
    assert grid.occupied[3:5, 3:5].all()


def test_ceil_division_covers_bounds():
    grid = rasterize(Workspace((0, 0, 1.0, 0.75)), 0.3)
    assert grid.shape == (4, 3)


@pytest.mark.parametrize("res", [0.0, -1.0])
def test_nonpositive_resolution_rejected(res):
    with pytest.raises(GeometryError):
        rasterize(Workspace((0, 0, 4, 4)), res)


def test_default_resolution_is_min_side_over_64():
    ws = Workspace((0, 0, 8, 4))
    assert rasterize(ws).resolution == pytest.approx(4 / 64)


def test_degenerate_bounds_rejected():
    with pytest.raises(GeometryError):
        Workspace((0, 0, 0, 4))


def test_region_outside_bounds_rejected():
    with pytest.raises(GeometryError):
        Workspace((0, 0, 4, 4), regions={"R": [5, 5, 6, 6]})


def test_region_membership_is_closed():
    ws = Workspace((0, 0, 4, 4), regions={"R1": [1, 1, 2, 2]})
    assert ws.in_region("R1", (1.0, 1.5))
    assert ws.in_region("R1", (2.0, 2.0))
    assert not ws.in_region("R1", (2.01, 2.0))


def test_straight_line_distance():
    grid = rasterize(Workspace((0, 0, 4, 4)), 0.5)
    df = distance_field(grid, (0, 0))
    assert df[(3, 0)] == pytest.approx(1.5)
    assert df[(0, 0)] == 0.0


def test_wall_detour_matches_hand_value_and_oracle():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, :4] = True  # wall at column 2, row 4 left open
    grid = grid_from_mask(mask)
    df = distance_field(grid, (0, 0))
    # (0,0) -> (1,4) octile, two straight cells through the gap, (3,4) -> (4,0) octile
    hand = 2 * (3 + SQRT2) + 2
    assert df[(4, 0)] == pytest.approx(hand, abs=1e-12)
    np.testing.assert_allclose(df.values, relaxation_oracle(mask, (0, 0), 1.0), atol=1e-12)


def test_enclosed_cell_is_unreachable():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2:5, 2] = mask[2, 2:5] = True
    mask[4, 4] = False
    mask[3, 4] = mask[4, 3] = True
    grid = grid_from_mask(mask)
    assert math.isinf(distance_field(grid, (0, 0))[(4, 4)])


def test_goal_must_be_free():
    mask = np.zeros((3, 3), dtype=bool)
    mask[1, 1] = True
    with pytest.raises(GeometryError):
        distance_field(grid_from_mask(mask), (1, 1))
    with pytest.raises(GeometryError):
        distance_field(grid_from_mask(np.zeros((3, 3), bool)), (0, 0), extra_obstacles={(0, 0)})


def test_extra_obstacles_are_infinite():
    grid = grid_from_mask(np.zeros((4, 4), dtype=bool))
    df = distance_field(grid, (0, 0), extra_obstacles={(2, 2)})
    assert math.isinf(df[(2, 2)])


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(1, 12), ny=st.integers(1, 12), data=st.data())
def test_free_grid_equals_octile_metric(nx, ny, data):
    gi = data.draw(st.integers(0, nx - 1))
    gj = data.draw(st.integers(0, ny - 1))
    res = data.draw(st.sampled_from([0.1, 0.25, 1.0]))
    df = distance_field(grid_from_mask(np.zeros((nx, ny), bool), res), (gi, gj))
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    dx, dy = np.abs(ii - gi), np.abs(jj - gj)
    octile = (np.maximum(dx, dy) + (SQRT2 - 1) * np.minimum(dx, dy)) * res
    np.testing.assert_allclose(df.values, octile, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_obstacles_match_oracle_and_triangle_property(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((7, 6)) < 0.3
    mask[0, 0] = False
    df = distance_field(grid_from_mask(mask, 0.5), (0, 0))
    np.testing.assert_allclose(df.values, relaxation_oracle(mask, (0, 0), 0.5), atol=1e-12)
    free = ~mask
    for i in range(7):
        for j in range(6):
            for di, dj in ((1, 0), (0, 1)):
                a, b = i + di, j + dj
                if a < 7 and b < 6 and free[i, j] and free[a, b]:
                    u, v = df.values[i, j], df.values[a, b]
                    if np.isfinite(u) or np.isfinite(v):
                        assert abs(u - v) <= 0.5 + 1e-12


def test_chi2_quantile():
    assert chi2_2dof_quantile(0.9) == pytest.approx(4.60517, abs=1e-5)


def test_ellipse_of_tiny_covariance_is_the_mean_cell():
    grid = rasterize(Workspace((0, 0, 4, 4)), 0.1)
    cells = confidence_ellipse_cells([1.23, 2.07], np.eye(2) * 1e-14, 0.9, grid)
    assert cells == {grid.cell_of([1.23, 2.07])}


def test_isotropic_ellipse_is_disk_of_chi2_radius():
    grid = rasterize(Workspace((0, 0, 4, 4)), 0.05)
    sigma = 0.3
    mean = np.array([2.0, 2.0])
    cells = confidence_ellipse_cells(mean, np.eye(2) * sigma**2, 0.9, grid)
    radius = sigma * math.sqrt(chi2_2dof_quantile(0.9))
    assert radius == pytest.approx(2.146 * sigma, abs=1e-3 * sigma)
    centers = grid.centers()
    inside = np.linalg.norm(centers - mean, axis=-1) <= radius
    expected = {(int(i), int(j)) for i, j in zip(*np.nonzero(inside))}
    assert cells == expected


@pytest.mark.parametrize("eps", [0.0, 1.0, 1.5])
def test_ellipse_epsilon_bounds(eps):
    grid = rasterize(Workspace((0, 0, 1, 1)), 0.1)
    with pytest.raises(GeometryError):
        confidence_ellipse_cells([0.5, 0.5], np.eye(2), eps, grid)


@settings(max_examples=30, deadline=None)
@given(e1=st.floats(0.05, 0.95), e2=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
def test_ellipse_monotone_in_epsilon(e1, e2, seed):
    lo, hi = sorted((e1, e2))
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 2)) * 0.3
    cov = a @ a.T
    grid = rasterize(Workspace((0, 0, 4, 4)), 0.1)
    mean = rng.uniform(0.5, 3.5, 2)
    assert confidence_ellipse_cells(mean, cov, lo, grid) <= confidence_ellipse_cells(mean, cov, hi, grid)


def test_line_of_sight_blocked_by_obstacle():
    ws = Workspace((0, 0, 4, 4), obstacles=[[1.5, 0, 2.5, 4]])
    assert not ws.line_of_sight((0.5, 2.0), (3.5, 2.0))
    assert ws.line_of_sight((0.5, 2.0), (1.0, 3.0))


def test_distance_field_csv(tmp_path):
    grid = grid_from_mask(np.array([[False, True], [False, False]]))
    df = distance_field(grid, (0, 0))
    path = tmp_path / "df.csv"
    df.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0].split(",")[0] == "inf"
    assert len(rows) == 2
