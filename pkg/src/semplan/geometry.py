"""Workspace geometry, occupancy rasterization and grid geodesic distances."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

Cell = tuple[int, int]

_EPS = 1e-12


class GeometryError(ValueError):
    pass


def _as_polygon(shape) -> np.ndarray:
    """Accept ``[xmin, ymin, xmax, ymax]`` or a vertex list; return CCW vertices."""
    arr = np.asarray(shape, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (4,):
            raise GeometryError(f"rectangle needs 4 numbers, got {arr.tolist()}")
        x0, y0, x1, y1 = arr
        if not (x1 > x0 and y1 > y0):
            raise GeometryError(f"degenerate rectangle {arr.tolist()}")
        arr = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise GeometryError("polygon needs at least three 2-D vertices")
    # shoelace: negative area means clockwise
    x, y = arr[:, 0], arr[:, 1]
    area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if abs(area) < _EPS:
        raise GeometryError("polygon has zero area")
    if area < 0:
        arr = arr[::-1].copy()
    edges = np.roll(arr, -1, axis=0) - arr
    nxt = np.roll(edges, -1, axis=0)
    if np.any(edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0] < -1e-9):
        raise GeometryError("polygon is not convex")
    arr.setflags(write=False)
    return arr


def points_in_polygon(poly: np.ndarray, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Closed containment test of (k, 2) points in a CCW convex polygon."""
    pts = np.atleast_2d(pts)
    v0 = poly
    e = np.roll(poly, -1, axis=0) - poly
    rel = pts[:, None, :] - v0[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    scale = np.linalg.norm(e, axis=1)[None, :]
    return np.all(cross >= -tol * scale, axis=1)


def segment_hits_polygon(poly: np.ndarray, a, b) -> bool:
    """Cyrus-Beck clip of segment ab against a convex polygon (interior or boundary)."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    t0, t1 = 0.0, 1.0
    e = np.roll(poly, -1, axis=0) - poly
    # inward normals for CCW polygon
    normals = np.stack([-e[:, 1], e[:, 0]], axis=1)
    for n, v in zip(normals, poly):
        num = float(np.dot(n, a - v))
        den = float(np.dot(n, d))
        if abs(den) < _EPS:
            if num < 0:
                return False
            continue
        t = -num / den
        if den > 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1 + 1e-12:
            return False
    return True


@dataclass(frozen=True)
class Workspace:
    """Rectangular bounds with convex obstacles and named convex regions (meters)."""

    bounds: tuple[float, float, float, float]
    obstacles: tuple[np.ndarray, ...] = ()
    regions: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 4 or not (b[2] > b[0] and b[3] > b[1]):
            raise GeometryError(f"bounds must have positive area, got {self.bounds}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "obstacles", tuple(_as_polygon(o) for o in self.obstacles))
        regions = {}
        for name, poly in dict(self.regions).items():
            if name in regions:
                raise GeometryError(f"duplicate region {name!r}")
            p = _as_polygon(poly)
            lo, hi = p.min(axis=0), p.max(axis=0)
            if lo[0] >= b[2] or lo[1] >= b[3] or hi[0] <= b[0] or hi[1] <= b[1]:
                raise GeometryError(f"region {name!r} does not intersect the bounds")
            regions[name] = p
        object.__setattr__(self, "regions", regions)

    @property
    def width(self) -> float:
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self) -> float:
        return self.bounds[3] - self.bounds[1]

    def default_resolution(self) -> float:
        return min(self.width, self.height) / 64.0

    def in_bounds(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        x0, y0, x1, y1 = self.bounds
        return (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)

    def collides(self, pts) -> np.ndarray:
        """True where a point is outside the bounds or inside an obstacle."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        bad = ~self.in_bounds(pts)
        for poly in self.obstacles:
            bad |= points_in_polygon(poly, pts)
        return bad

    def in_region(self, name: str, point) -> bool:
        try:
            poly = self.regions[name]
        except KeyError:
            raise GeometryError(f"unknown region {name!r}") from None
        return bool(points_in_polygon(poly, np.asarray(point, dtype=float)[:2])[0])

    def line_of_sight(self, a, b) -> bool:
        return not any(segment_hits_polygon(poly, a[:2], b[:2]) for poly in self.obstacles)

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "obstacles": [p.tolist() for p in self.obstacles],
            "regions": {k: v.tolist() for k, v in self.regions.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Workspace":
        return cls(
            bounds=tuple(data["bounds"]),
            obstacles=tuple(data.get("obstacles", ())),
            regions=dict(data.get("regions", {})),
        )


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Cell ``(i, j)`` covers ``origin + [i, i+1) x [j, j+1)`` times ``resolution``."""

    resolution: float
    shape: tuple[int, int]
    origin: tuple[float, float]
    occupied: np.ndarray

    def cell_of(self, point) -> Cell:
        i = int(math.floor((point[0] - self.origin[0]) / self.resolution))
        j = int(math.floor((point[1] - self.origin[1]) / self.resolution))
        return (min(max(i, 0), self.shape[0] - 1), min(max(j, 0), self.shape[1] - 1))

    def center(self, cell: Cell) -> np.ndarray:
        return np.array([
            self.origin[0] + (cell[0] + 0.5) * self.resolution,
            self.origin[1] + (cell[1] + 0.5) * self.resolution,
        ])

    def centers(self) -> np.ndarray:
        """Array of shape (nx, ny, 2) with every cell center."""
        xs = self.origin[0] + (np.arange(self.shape[0]) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.shape[1]) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def is_free(self, cell: Cell) -> bool:
        i, j = cell
        return 0 <= i < self.shape[0] and 0 <= j < self.shape[1] and not self.occupied[i, j]

    def cells_in_polygon(self, poly: np.ndarray) -> frozenset[Cell]:
        c = self.centers().reshape(-1, 2)
        inside = points_in_polygon(poly, c).reshape(self.shape)
        return frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(inside)))


def rasterize(workspace: Workspace, resolution: float | None = None) -> OccupancyGrid:
    """A cell is occupied iff its center lies inside an obstacle (closed)."""
    if resolution is None:
        resolution = workspace.default_resolution()
    if not resolution > 0:
        raise GeometryError(f"resolution must be positive, got {resolution}")
    nx = int(math.ceil(workspace.width / resolution - 1e-9))
    ny = int(math.ceil(workspace.height / resolution - 1e-9))
    grid = OccupancyGrid(
        resolution=float(resolution),
        shape=(nx, ny),
        origin=(workspace.bounds[0], workspace.bounds[1]),
        occupied=np.zeros((nx, ny), dtype=bool),
    )
    centers = grid.centers().reshape(-1, 2)
    occ = np.zeros(len(centers), dtype=bool)
    for poly in workspace.obstacles:
        occ |= points_in_polygon(poly, centers)
    occupied = occ.reshape(nx, ny)
    occupied.setflags(write=False)
    object.__setattr__(grid, "occupied", occupied)
    return grid


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Geodesic distance (meters) from every cell to the goal set; inf if unreachable."""

    values: np.ndarray
    goals: tuple[Cell, ...]
    grid: OccupancyGrid

    @property
    def goal(self) -> Cell:
        return self.goals[0]

    def __getitem__(self, cell: Cell) -> float:
        return float(self.values[cell])

    def at(self, point) -> float:
        return float(self.values[self.grid.cell_of(point)])

    def to_csv(self, path) -> None:
        # rows are y (top row = highest y) so the file reads like a map
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for j in reversed(range(self.values.shape[1])):
                w.writerow(["inf" if math.isinf(v) else f"{v:.6g}" for v in self.values[:, j]])


_NEIGHBORS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


def _shift(d: int, n: int) -> tuple[slice, slice]:
    """Source and destination slices for an index offset ``d`` on an axis of length ``n``."""
    return slice(max(0, -d), n - max(0, d)), slice(max(0, d), n + min(0, d))


def _blocked_mask(grid: OccupancyGrid, extra: Iterable[Cell]) -> np.ndarray:
    blocked = np.array(grid.occupied, dtype=bool, copy=True)
    for i, j in extra:
        if 0 <= i < grid.shape[0] and 0 <= j < grid.shape[1]:
            blocked[i, j] = True
    return blocked


def distance_field(
    grid: OccupancyGrid,
    goal: Cell | Sequence[Cell],
    extra_obstacles: Iterable[Cell] = (),
) -> DistanceField:
    """8-connected Dijkstra from the goal cell(s).

    Diagonal steps cost ``sqrt(2) * resolution`` and may not cut the corner of
    a blocked cell. ``goal`` may be a single cell or a collection of cells
    (multi-source, used for region targets).
    """
    goals: tuple[Cell, ...]
    if len(goal) == 2 and all(isinstance(g, (int, np.integer)) for g in goal):
        goals = ((int(goal[0]), int(goal[1])),)
    else:
        goals = tuple(sorted((int(g[0]), int(g[1])) for g in goal))
    if not goals:
        raise GeometryError("empty goal set")
    blocked = _blocked_mask(grid, extra_obstacles)
    for g in goals:
        if not (0 <= g[0] < grid.shape[0] and 0 <= g[1] < grid.shape[1]):
            raise GeometryError(f"goal {g} outside grid")
        if grid.occupied[g]:
            raise GeometryError(f"goal {g} is occupied")
        if blocked[g]:
            raise GeometryError(f"goal {g} is inside an extra obstacle")

    nx, ny = grid.shape
    idx = np.arange(nx * ny).reshape(nx, ny)
    free = ~blocked
    rows, cols, weights = [], [], []
    for di, dj in _NEIGHBORS:
        si, ti = _shift(di, nx)
        sj, tj = _shift(dj, ny)
        ok = free[si, sj] & free[ti, tj]
        if di and dj:
            # no corner cutting: both orthogonal neighbours must be free
            ok &= free[ti, sj] & free[si, tj]
            w = math.sqrt(2.0) * grid.resolution
        else:
            w = grid.resolution
        rows.append(idx[si, sj][ok])
        cols.append(idx[ti, tj][ok])
        weights.append(np.full(int(ok.sum()), w))
    graph = coo_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    ).tocsr()
    sources = [idx[g] for g in goals]
    dist = dijkstra(graph, directed=True, indices=sources, min_only=True)
    values = dist.reshape(nx, ny)
    values[blocked] = np.inf
    for g in goals:
        values[g] = 0.0
    values.setflags(write=False)
    return DistanceField(values=values, goals=goals, grid=grid)


def chi2_2dof_quantile(epsilon: float) -> float:
    return -2.0 * math.log1p(-epsilon)


def confidence_ellipse_cells(mean, cov, epsilon: float, grid: OccupancyGrid) -> frozenset[Cell]:
    """Cells whose centers fall in the ``epsilon`` Gaussian confidence ellipse.

    The cell containing the mean is always included. Along a degenerate
    covariance axis the ellipse has zero width, so only centers within half
    a cell of the mean along that axis qualify.
    """
    if not 0.0 < epsilon < 1.0:
        raise GeometryError(f"epsilon must lie in (0, 1), got {epsilon}")
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam.min() < -1e-12 * max(1.0, abs(lam.max())):
        raise GeometryError("covariance is not PSD")
    k = chi2_2dof_quantile(epsilon)
    rel = grid.centers().reshape(-1, 2) - mean
    proj = rel @ vec
    degenerate = lam <= 1e-12 * max(1.0, float(lam.max()))
    inside = np.ones(len(rel), dtype=bool)
    maha = np.zeros(len(rel))
    for a in range(2):
        if degenerate[a]:
            inside &= np.abs(proj[:, a]) <= 0.5 * grid.resolution
        else:
            maha += proj[:, a] ** 2 / lam[a]
    inside &= maha <= k
    cells = {(int(i), int(j)) for i, j in zip(*np.nonzero(inside.reshape(grid.shape)))}
    cells.add(grid.cell_of(mean))
    return frozenset(cells)
