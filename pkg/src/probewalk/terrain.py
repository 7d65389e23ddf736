"""Ground-truth terrain: rigid ground, tilting plank fields and loose-rock fields.

Terrain responds quasi-statically to foot loads; elevation maps are rendered the
way a depth-based mapper would see the top surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNOBSERVED = np.nan


class TerrainParameterError(ValueError):
    pass


class TerrainGeometryError(ValueError):
    pass


class OutOfBoundsError(ValueError):
    pass


@dataclass
class HeightGrid:
    origin: np.ndarray
    resolution: float
    cells: np.ndarray  # (width, height) indexed [ix, iy]; NaN marks unobserved

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.cells = np.asarray(self.cells, dtype=float)
        if self.resolution <= 0:
            raise TerrainParameterError("resolution must be positive")
        if self.cells.ndim != 2:
            raise TerrainParameterError("cells must be a 2D array")
        if np.any(np.isinf(self.cells)):
            raise TerrainParameterError("observed cells must be finite")

    @property
    def width(self) -> int:
        return self.cells.shape[0]

    @property
    def height(self) -> int:
        return self.cells.shape[1]

    def index_of(self, xy) -> tuple[int, int] | None:
        rel = (np.asarray(xy, dtype=float)[:2] - self.origin) / self.resolution
        ix, iy = int(np.floor(rel[0])), int(np.floor(rel[1]))
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return ix, iy
        return None

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return self.origin + (np.array([ix, iy]) + 0.5) * self.resolution


def height_at(grid: HeightGrid, xy) -> float:
    """Elevation of the cell containing ``xy``; NaN when unobserved."""
    idx = grid.index_of(xy)
    if idx is None:
        raise OutOfBoundsError(f"point {tuple(np.asarray(xy)[:2])} outside the height grid")
    return float(grid.cells[idx])


@dataclass
class ContactResponse:
    displacement: np.ndarray
    collapsed: bool
    support_height: float


class TerrainModel:
    """Base class; subclasses define the surface and its load response."""

    variant = "Rigid"
    bounds = (-2.0, 4.0, -1.5, 1.5)

    def surface_height(self, xy) -> float | None:
        """Top-surface height at ``xy`` or None over a hole."""
        raise NotImplementedError

    def apply_load(self, point, force) -> ContactResponse:
        raise NotImplementedError

    def release(self, point) -> None:
        """Foot lifted from ``point``; quasi-static terrain relaxes."""

    def visible_height(self, xy) -> float:
        h = self.surface_height(xy)
        return UNOBSERVED if h is None else h

    def _check_contact(self, point, tol=0.02) -> float:
        point = np.asarray(point, dtype=float)
        h = self.surface_height(point[:2])
        if h is None:
            raise TerrainGeometryError(f"contact point {point} lies over a hole")
        if abs(point[2] - h) > tol:
            raise TerrainGeometryError(f"contact point {point} is {point[2] - h:+.3f} m off the surface")
        return h


def normal_load(force) -> float:
    """Compressive foot-on-terrain load along +z (positive when pushing down)."""
    return max(0.0, -float(np.asarray(force, dtype=float)[2]))


@dataclass
class RigidTerrain(TerrainModel):
    level: float = 0.0
    variant = "Rigid"

    def surface_height(self, xy) -> float:
        return self.level

    def apply_load(self, point, force) -> ContactResponse:
        self._check_contact(point)
        return ContactResponse(np.zeros(3), False, self.level)


@dataclass
class PlankField(TerrainModel):
    """Rows of planks hinged on a central lateral beam per row.

    A load at lever arm ``d`` from the beam axis tilts the plank by
    ``theta = F_n * |d| / k``.  Beyond ``slip_angle`` the foot slides off the
    plank and drops to the floor ``drop_depth`` below the surface.
    """

    rows: int = 4
    plank_w: float = 0.20
    plank_l: float = 0.25
    stiffness: np.ndarray | float = 20.0
    columns: int = 4
    start_x: float = 0.0
    level: float = 0.0
    drop_depth: float = 0.20
    slip_angle: float = float(np.arctan(0.5))
    removed: frozenset = frozenset()
    seed: int = 0
    stiffness_jitter: float = 0.0  # relative, per plank, drawn from ``seed``
    variant = "PlankField"

    def __post_init__(self):
        if self.rows < 1 or self.columns < 1:
            raise TerrainParameterError("plank field needs at least one row and column")
        if self.plank_w <= 0 or self.plank_l <= 0:
            raise TerrainParameterError("plank dimensions must be positive")
        k = np.broadcast_to(np.asarray(self.stiffness, dtype=float), (self.rows, self.columns)).copy()
        if np.any(k <= 0):
            raise TerrainParameterError("plank stiffness must be positive")
        if not 0.0 <= self.stiffness_jitter < 1.0:
            raise TerrainParameterError("stiffness jitter must lie in [0, 1)")
        if self.stiffness_jitter > 0:
            rng = np.random.default_rng(self.seed)
            k = k * rng.uniform(1 - self.stiffness_jitter, 1 + self.stiffness_jitter, size=k.shape)
        self.stiffness = k
        self.removed = frozenset((int(r), int(c)) for r, c in self.removed)

    @property
    def length(self) -> float:
        return self.rows * self.plank_l

    @property
    def field_width(self) -> float:
        return self.columns * self.plank_w

    @property
    def bounds(self):
        return (self.start_x - 1.5, self.start_x + self.length + 1.5, -1.0, 1.0)

    def beam_x(self, row: int) -> float:
        return self.start_x + (row + 0.5) * self.plank_l

    def plank_at(self, xy) -> tuple[int, int] | None:
        x, y = float(xy[0]), float(xy[1])
        r = int(np.floor((x - self.start_x) / self.plank_l))
        c = int(np.floor((y + 0.5 * self.field_width) / self.plank_w))
        if 0 <= r < self.rows and 0 <= c < self.columns:
            return r, c
        return None

    def lever_arm(self, xy) -> float:
        plank = self.plank_at(xy)
        if plank is None:
            raise TerrainGeometryError("point is not on a plank")
        return float(xy[0]) - self.beam_x(plank[0])

    def surface_height(self, xy):
        plank = self.plank_at(xy)
        if plank is not None and plank in self.removed:
            return None
        return self.level

    def apply_load(self, point, force) -> ContactResponse:
        self._check_contact(point)
        plank = self.plank_at(point)
        if plank is None:
            return ContactResponse(np.zeros(3), False, self.level)
        d = self.lever_arm(point)
        k = self.stiffness[plank]
        theta = normal_load(force) * abs(d) / k
        if theta > self.slip_angle:
            return ContactResponse(np.array([0.0, 0.0, -self.drop_depth]), True, self.level - self.drop_depth)
        drop = abs(d) * np.sin(theta)
        dx = -np.sign(d) * abs(d) * (1.0 - np.cos(theta))
        return ContactResponse(np.array([dx, 0.0, -drop]), False, self.level - drop)

    def plank_footprint(self, row: int, col: int):
        x0 = self.start_x + row * self.plank_l
        y0 = -0.5 * self.field_width + col * self.plank_w
        return (x0, x0 + self.plank_l, y0, y0 + self.plank_w)


def make_plank_field(rows: int, plank_w: float, plank_l: float, stiffness: float, **kwargs) -> PlankField:
    if rows < 1:
        raise TerrainParameterError("rows must be >= 1")
    if plank_w <= 0 or plank_l <= 0 or np.any(np.asarray(stiffness) <= 0):
        raise TerrainParameterError("plank dimensions and stiffness must be positive")
    return PlankField(rows=rows, plank_w=plank_w, plank_l=plank_l, stiffness=stiffness, **kwargs)


@dataclass
class RockField(TerrainModel):
    """Grid of loose rocks, each with a load capacity; overloaded rocks settle."""

    start_x: float = 0.0
    length: float = 1.0
    width: float = 0.8
    cell: float = 0.1
    capacity_range: tuple = (60.0, 160.0)
    settling: float = 0.05
    height_jitter: float = 0.0
    level: float = 0.0
    seed: int = 0
    capacity: np.ndarray = field(default=None, repr=False)
    heights: np.ndarray = field(default=None, repr=False)
    collapsed_cells: np.ndarray = field(default=None, repr=False)
    variant = "RockField"

    def __post_init__(self):
        lo, hi = self.capacity_range
        if lo < 0 or hi < lo:
            raise TerrainParameterError("capacity range must satisfy 0 <= min <= max")
        if self.cell <= 0 or self.length <= 0 or self.width <= 0:
            raise TerrainParameterError("rock field dimensions must be positive")
        nx = int(round(self.length / self.cell))
        ny = int(round(self.width / self.cell))
        rng = np.random.default_rng(self.seed)
        if self.capacity is None:
            self.capacity = rng.uniform(lo, hi, size=(nx, ny))
        if self.heights is None:
            self.heights = self.level + rng.uniform(0.0, self.height_jitter, size=(nx, ny))
        if self.collapsed_cells is None:
            self.collapsed_cells = np.zeros((nx, ny), dtype=bool)

    @property
    def bounds(self):
        return (self.start_x - 1.5, self.start_x + self.length + 1.5, -1.0, 1.0)

    def cell_at(self, xy):
        ix = int(np.floor((float(xy[0]) - self.start_x) / self.cell))
        iy = int(np.floor((float(xy[1]) + 0.5 * self.width) / self.cell))
        if 0 <= ix < self.capacity.shape[0] and 0 <= iy < self.capacity.shape[1]:
            return ix, iy
        return None

    def surface_height(self, xy):
        c = self.cell_at(xy)
        if c is None:
            return self.level
        return float(self.heights[c] - (self.settling if self.collapsed_cells[c] else 0.0))

    def apply_load(self, point, force) -> ContactResponse:
        point = np.asarray(point, dtype=float)
        c = self.cell_at(point)
        if c is None:
            self._check_contact(point)
            return ContactResponse(np.zeros(3), False, self.level)
        before = self.surface_height(point)
        if abs(point[2] - before) > 0.02 and abs(point[2] - before - self.settling) > 0.02:
            raise TerrainGeometryError(f"contact point {point} is off the rock surface")
        if not self.collapsed_cells[c] and normal_load(force) > self.capacity[c]:
            self.collapsed_cells[c] = True
        support = self.surface_height(point)
        return ContactResponse(np.array([0.0, 0.0, support - point[2]]), bool(self.collapsed_cells[c]), support)


def elevation_map_of(model: TerrainModel, resolution: float) -> HeightGrid:
    """Top-surface grid as a perception system would map it."""
    if resolution <= 0:
        raise TerrainParameterError("resolution must be positive")
    xmin, xmax, ymin, ymax = model.bounds
    nx = int(np.ceil((xmax - xmin) / resolution))
    ny = int(np.ceil((ymax - ymin) / resolution))
    cells = np.empty((nx, ny))
    for ix in range(nx):
        for iy in range(ny):
            c = (xmin + (ix + 0.5) * resolution, ymin + (iy + 0.5) * resolution)
            cells[ix, iy] = model.visible_height(c)
    return HeightGrid(np.array([xmin, ymin]), resolution, cells)


def terrain_from_mapping(values: dict) -> TerrainModel:
    """Build a terrain model from a flat key/value block (strings or numbers)."""

    def num(key, default):
        return float(values.get(key, default))

    variant = str(values.get("variant", "Rigid")).strip()
    if variant.lower() == "rigid":
        return RigidTerrain(level=num("level", 0.0))
    if variant.lower() == "plankfield":
        removed = []
        spec = str(values.get("removed", "")).strip()
        if spec:
            for item in spec.replace(";", " ").split():
                r, c = item.split(":")
                removed.append((int(r), int(c)))
        return make_plank_field(
            int(num("rows", 4)),
            num("plank_w", 0.20),
            num("plank_l", 0.25),
            num("stiffness", 20.0),
            columns=int(num("columns", 4)),
            start_x=num("start_x", 0.0),
            level=num("level", 0.0),
            drop_depth=num("drop_depth", 0.20),
            removed=frozenset(removed),
            seed=int(num("seed", 0)),
            stiffness_jitter=num("stiffness_jitter", 0.0),
        )
    if variant.lower() == "rockfield":
        return RockField(
            start_x=num("start_x", 0.0),
            length=num("length", 1.0),
            width=num("width", 0.8),
            cell=num("cell", 0.1),
            capacity_range=(num("capacity_min", 60.0), num("capacity_max", 160.0)),
            settling=num("settling", 0.05),
            height_jitter=num("height_jitter", 0.0),
            level=num("level", 0.0),
            seed=int(num("seed", 0)),
        )
    raise TerrainParameterError(f"unknown terrain variant {variant!r}")
