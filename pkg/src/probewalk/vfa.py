"""Visual foothold adaptation on 15x15 foothold heightmaps."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from probewalk.model import DegenerateGeometryError, local_surface_normal
from probewalk.terrain import HeightGrid, OutOfBoundsError, height_at

SIZE = 15
MID = SIZE // 2

NONE, UNCERTAINTY, ROUGHNESS, COLLISION = "none", "uncertainty", "roughness", "collision"


class NoSafeFootholdError(RuntimeError):
    pass


@dataclass(frozen=True)
class VfaParams:
    cell_size: float = 0.02
    roughness: float = 0.03
    shin_clearance: float = 0.05
    shin_radius: float = 0.06


@dataclass
class FootholdHeightmap:
    center: np.ndarray
    cells: np.ndarray  # (15, 15) [ix, iy]; NaN = unobserved
    cell_size: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)[:2]
        self.cells = np.asarray(self.cells, dtype=float)
        if self.cells.shape != (SIZE, SIZE):
            raise ValueError("foothold heightmap must be 15x15")

    def cell_xy(self, i: int, j: int) -> np.ndarray:
        return self.center + (np.array([i, j]) - MID) * self.cell_size


@dataclass
class SafetyMask:
    safe: np.ndarray  # (15, 15) bool
    tags: np.ndarray  # (15, 15) str


@dataclass
class ConvexRegion:
    vertices: np.ndarray  # (k, 2), counter-clockwise
    normal: np.ndarray
    anchor: np.ndarray  # a 3D point on the region plane

    def lift(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        n = self.normal
        z = self.anchor[2] - (n[0] * (xy[..., 0] - self.anchor[0]) + n[1] * (xy[..., 1] - self.anchor[1])) / n[2]
        return np.concatenate([xy, np.asarray(z)[..., None]], axis=-1)

    @property
    def area(self) -> float:
        v = self.vertices
        return 0.5 * abs(np.dot(v[:, 0], np.roll(v[:, 1], -1)) - np.dot(v[:, 1], np.roll(v[:, 0], -1)))


@dataclass
class HalfSpaces:
    A: np.ndarray  # (4, 3)
    b: np.ndarray  # (4,)
    unbounded: bool = False

    def residuals(self, p) -> np.ndarray:
        return self.A @ np.asarray(p, dtype=float) + self.b


def extract_heightmap(grid: HeightGrid, target, cell_size: float = 0.02) -> FootholdHeightmap:
    target = np.asarray(target, dtype=float)[:2]
    if grid.index_of(target) is None:
        raise OutOfBoundsError(f"target {tuple(target)} outside the elevation map")
    cells = np.full((SIZE, SIZE), np.nan)
    for i in range(SIZE):
        for j in range(SIZE):
            xy = target + (np.array([i, j]) - MID) * cell_size
            if grid.index_of(xy) is not None:
                cells[i, j] = height_at(grid, xy)
    return FootholdHeightmap(target, cells, cell_size)


def _neighbors(i, j, radius=1):
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            a, b = i + di, j + dj
            if (di or dj) and 0 <= a < SIZE and 0 <= b < SIZE:
                yield a, b


def classify_cells(fhm: FootholdHeightmap, params: VfaParams = VfaParams()) -> SafetyMask:
    h = fhm.cells
    observed = ~np.isnan(h)
    r_cells = int(np.ceil(params.shin_radius / fhm.cell_size))
    tags = np.full((SIZE, SIZE), NONE, dtype=object)
    for i in range(SIZE):
        for j in range(SIZE):
            nb = list(_neighbors(i, j))
            if not observed[i, j] or any(not observed[a, b] for a, b in nb):
                tags[i, j] = UNCERTAINTY
                continue
            if any(abs(h[a, b] - h[i, j]) > params.roughness for a, b in nb):
                tags[i, j] = ROUGHNESS
                continue
            for a, b in _neighbors(i, j, r_cells):
                within = np.hypot(a - i, b - j) * fhm.cell_size <= params.shin_radius
                if within and observed[a, b] and h[a, b] - h[i, j] > params.shin_clearance:
                    tags[i, j] = COLLISION
                    break
    return SafetyMask(tags == NONE, tags)


def select_cell(mask: SafetyMask) -> tuple[int, int]:
    best, best_d = None, np.inf
    for i in range(SIZE):
        for j in range(SIZE):
            if mask.safe[i, j]:
                d = (i - MID) ** 2 + (j - MID) ** 2
                if d < best_d:
                    best, best_d = (i, j), d
    if best is None:
        raise NoSafeFootholdError("no safe cell in the foothold heightmap")
    return best


def select_foothold(mask: SafetyMask, fhm: FootholdHeightmap) -> np.ndarray:
    """Safe cell centre closest to the desired touch-down (row-major tie-break)."""
    i, j = select_cell(mask)
    return np.array([*fhm.cell_xy(i, j), fhm.cells[i, j]])


def _largest_rectangle(safe: np.ndarray, chosen) -> tuple[int, int, int, int]:
    ci, cj = chosen
    if not safe[ci, cj]:
        raise ValueError("chosen cell is not safe")
    unsafe = np.pad((~safe).astype(int), ((1, 0), (1, 0))).cumsum(0).cumsum(1)

    def clear(i0, i1, j0, j1):
        return unsafe[i1 + 1, j1 + 1] - unsafe[i0, j1 + 1] - unsafe[i1 + 1, j0] + unsafe[i0, j0] == 0

    best, best_key = None, None
    for i0, i1, j0, j1 in itertools.product(range(ci + 1), range(ci, SIZE), range(cj + 1), range(cj, SIZE)):
        if not clear(i0, i1, j0, j1):
            continue
        area = (i1 - i0 + 1) * (j1 - j0 + 1)
        off = (0.5 * (i0 + i1) - MID) ** 2 + (0.5 * (j0 + j1) - MID) ** 2
        key = (-area, off, i0, j0)
        if best_key is None or key < best_key:
            best, best_key = (i0, i1, j0, j1), key
    return best


def safe_region_polygon(mask: SafetyMask, chosen, fhm: FootholdHeightmap) -> ConvexRegion:
    """Largest safe axis-aligned rectangle containing ``chosen`` as a world polygon."""
    i0, i1, j0, j1 = _largest_rectangle(mask.safe, chosen)
    cs = fhm.cell_size
    lo = fhm.center + (np.array([i0, j0]) - MID - 0.5) * cs
    hi = fhm.center + (np.array([i1, j1]) - MID + 0.5) * cs
    vertices = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    pts = np.array(
        [[*fhm.cell_xy(i, j), fhm.cells[i, j]] for i in range(i0, i1 + 1) for j in range(j0, j1 + 1)]
    )
    try:
        normal = local_surface_normal(pts)
    except DegenerateGeometryError:
        normal = np.array([0.0, 0.0, 1.0])
    return ConvexRegion(vertices, normal, pts.mean(axis=0))


def halfspaces_from_region(region: ConvexRegion) -> HalfSpaces:
    v = np.asarray(region.vertices, dtype=float)
    if v.shape != (4, 2):
        raise ValueError("region must be a 4-vertex polygon")
    signed = 0.5 * (np.dot(v[:, 0], np.roll(v[:, 1], -1)) - np.dot(v[:, 1], np.roll(v[:, 0], -1)))
    if abs(signed) < 1e-12:
        raise DegenerateGeometryError("region polygon has zero area")
    if signed < 0:
        v = v[::-1]
    lifted = region.lift(v)
    n = region.normal / np.linalg.norm(region.normal)
    A = np.zeros((4, 3))
    b = np.zeros(4)
    for k in range(4):
        edge = lifted[(k + 1) % 4] - lifted[k]
        a = np.cross(n, edge)
        a /= np.linalg.norm(a)
        A[k] = a
        b[k] = -a @ lifted[k]
    return HalfSpaces(A, b)


def whole_plane_region() -> HalfSpaces:
    return HalfSpaces(np.zeros((4, 3)), np.ones(4), unbounded=True)


def adapt_foothold(grid: HeightGrid | None, target, params: VfaParams = VfaParams()):
    """Full adaptation for one target: (foothold, HalfSpaces, heightmap, mask).

    Without a map the target is kept and the region is the whole plane.
    """
    target = np.asarray(target, dtype=float)
    if grid is None or grid.index_of(target) is None:
        return target.copy(), whole_plane_region(), None, None
    fhm = extract_heightmap(grid, target, params.cell_size)
    mask = classify_cells(fhm, params)
    cell = select_cell(mask)
    foothold = np.array([*fhm.cell_xy(*cell), fhm.cells[cell]])
    region = safe_region_polygon(mask, cell, fhm)
    return foothold, halfspaces_from_region(region), fhm, mask


def dump_csv(path, fhm: FootholdHeightmap, mask: SafetyMask) -> None:
    """Heights block, a blank line, then the 0/1 safety block."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"col{j}" for j in range(SIZE)])
        for i in range(SIZE):
            writer.writerow(["" if np.isnan(v) else f"{v:.4f}" for v in fhm.cells[i]])
        writer.writerow([])
        for i in range(SIZE):
            writer.writerow([int(s) for s in mask.safe[i]])
