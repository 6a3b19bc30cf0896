"""Occupancy grids, procedural map generators, and map file I/O.

Grids are row-major numpy arrays indexed ``cells[cy, cx]``; a cell index is
the pair ``(cx, cy)``. World coordinates are meters, cell (0, 0) sits at the
grid origin corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


_CHAR_FOR_STATE = {CellState.OCCUPIED: "#", CellState.FREE: ".", CellState.UNKNOWN: "?"}
_STATE_FOR_CHAR = {v: k for k, v in _CHAR_FOR_STATE.items()}


class GridError(Exception):
    """Base class for map construction and parsing failures."""


class MapGenError(GridError):
    """Raised when a generator cannot satisfy its constraints."""


class MapParseError(GridError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OutOfBoundsError(GridError):
    pass


@dataclass
class OccupancyGrid:
    """2D cell lattice; ``cells`` holds CellState values as uint8."""

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    cells: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.resolution <= 0:
            raise GridError("resolution must be positive")
        if self.cells is None:
            self.cells = np.full((self.height, self.width), CellState.UNKNOWN, dtype=np.uint8)
        else:
            self.cells = np.asarray(self.cells, dtype=np.uint8)
            if self.cells.shape != (self.height, self.width):
                raise GridError(
                    f"cells shape {self.cells.shape} != (height, width) "
                    f"({self.height}, {self.width})"
                )

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.cells, other.cells)
        )

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.width, self.height, self.resolution, self.origin, self.cells.copy())

    @classmethod
    def unknown_like(cls, other: "OccupancyGrid") -> "OccupancyGrid":
        """All-Unknown belief grid with the same geometry as ``other``."""
        return cls(other.width, other.height, other.resolution, other.origin)

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        cx, cy = cell
        return 0 <= cx < self.width and 0 <= cy < self.height

    def state_at(self, cell: tuple[int, int]) -> CellState:
        return CellState(self.cells[cell[1], cell[0]])


def world_to_cell(grid: OccupancyGrid, point: tuple[float, float]) -> tuple[int, int]:
    """Cell containing a world point; raises OutOfBoundsError outside the grid."""
    cx = int(np.floor((point[0] - grid.origin[0]) / grid.resolution))
    cy = int(np.floor((point[1] - grid.origin[1]) / grid.resolution))
    if not grid.in_bounds((cx, cy)):
        raise OutOfBoundsError(f"point {point} outside grid")
    return (cx, cy)


def cell_to_world(grid: OccupancyGrid, cell: tuple[int, int]) -> tuple[float, float]:
    """Center of a cell in world coordinates."""
    return (
        grid.origin[0] + (cell[0] + 0.5) * grid.resolution,
        grid.origin[1] + (cell[1] + 0.5) * grid.resolution,
    )


def save_map(grid: OccupancyGrid) -> str:
    """Serialize to the text map format (see load_map)."""
    res = repr(grid.resolution) if grid.resolution != round(grid.resolution, 6) else f"{grid.resolution:g}"
    lines = [f"{grid.width} {grid.height} {res}"]
    lut = np.array([ord("?"), ord("."), ord("#")], dtype=np.uint8)
    for row in grid.cells:
        lines.append(lut[row].tobytes().decode("ascii"))
    return "\n".join(lines) + "\n"


def load_map(text: str) -> OccupancyGrid:
    """Parse the text map format.

    Line 1 is ``"<width> <height> <resolution>"``; the next ``height`` lines
    hold ``width`` characters each, ``#`` occupied, ``.`` free, ``?`` unknown.
    """
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise MapParseError("missing header", 1)
    parts = lines[0].split()
    if len(parts) != 3:
        raise MapParseError(f"header needs 'width height resolution', got {lines[0]!r}", 1)
    try:
        width, height = int(parts[0]), int(parts[1])
        resolution = float(parts[2])
    except ValueError as e:
        raise MapParseError(f"bad header value: {e}", 1) from None
    if width <= 0 or height <= 0 or resolution <= 0:
        raise MapParseError("width, height, resolution must be positive", 1)
    if len(lines) < height + 1:
        raise MapParseError(f"expected {height} map lines, found {len(lines) - 1}", len(lines))
    cells = np.empty((height, width), dtype=np.uint8)
    for r in range(height):
        line = lines[r + 1]
        if len(line) != width:
            raise MapParseError(f"expected {width} characters, got {len(line)}", r + 2)
        for c, ch in enumerate(line):
            state = _STATE_FOR_CHAR.get(ch)
            if state is None:
                raise MapParseError(f"unknown character {ch!r}", r + 2)
            cells[r, c] = state
    return OccupancyGrid(width, height, resolution, (0.0, 0.0), cells)


class MapKind(IntEnum):
    MAZE = 0
    FENCE_AND_CLUSTERS = 1
    UNIFORM_RANDOM = 2


@dataclass
class MapGenConfig:
    """Parameters for the three simulated environment generators.

    Generated maps keep free space 4-connected and cap obstacle-interior
    cells (occupied cells with no free 4-neighbor) at ``interior_cap`` of the
    grid so a ground vehicle can still reach the 95% progress threshold.
    """

    kind: MapKind = MapKind.UNIFORM_RANDOM
    seed: int = 0
    width: int = 200
    height: int = 200
    resolution: float = 0.1
    obstacle_density: float = 0.12
    corridor_width: float = 2.5  # maze corridors, meters
    cluster_count: int = 8
    cluster_radius: float = 0.6
    interior_cap: float = 0.04
    start_clearance: float = 0.8  # free radius kept around the start corner, meters


# Start corner used by the simulator; generators keep it clear.
START_CELL_OFFSET = 10


def _free_components(cells: np.ndarray) -> int:
    from scipy import ndimage

    free = cells == CellState.FREE
    _, n = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    return n


def interior_cell_count(cells: np.ndarray) -> int:
    """Occupied cells with no free 4-neighbor (never lidar-observable)."""
    occ = cells == CellState.OCCUPIED
    free = cells == CellState.FREE
    near_free = np.zeros_like(free)
    near_free[1:, :] |= free[:-1, :]
    near_free[:-1, :] |= free[1:, :]
    near_free[:, 1:] |= free[:, :-1]
    near_free[:, :-1] |= free[:, 1:]
    return int(np.count_nonzero(occ & ~near_free))


def _stamp_rect(cells: np.ndarray, cx0: int, cy0: int, cx1: int, cy1: int) -> None:
    cells[max(cy0, 0) : cy1 + 1, max(cx0, 0) : cx1 + 1] = CellState.OCCUPIED


def _start_window(cfg: MapGenConfig) -> tuple[int, int, int, int]:
    r = int(np.ceil(cfg.start_clearance / cfg.resolution))
    s = START_CELL_OFFSET
    return (max(s - r, 1), max(s - r, 1), min(s + r, cfg.width - 2), min(s + r, cfg.height - 2))


def _clear_start(cells: np.ndarray, cfg: MapGenConfig) -> None:
    x0, y0, x1, y1 = _start_window(cfg)
    cells[y0 : y1 + 1, x0 : x1 + 1] = CellState.FREE


def _blank_grid(cfg: MapGenConfig) -> np.ndarray:
    cells = np.full((cfg.height, cfg.width), CellState.FREE, dtype=np.uint8)
    cells[0, :] = CellState.OCCUPIED
    cells[-1, :] = CellState.OCCUPIED
    cells[:, 0] = CellState.OCCUPIED
    cells[:, -1] = CellState.OCCUPIED
    return cells


def _gen_uniform_random(cfg: MapGenConfig, rng: np.random.Generator) -> np.ndarray:
    cells = _blank_grid(cfg)
    if cfg.obstacle_density <= 0:
        return cells
    total = cfg.width * cfg.height
    target_occ = cfg.obstacle_density * total
    cap = cfg.interior_cap * total
    sx0, sy0, sx1, sy1 = _start_window(cfg)
    occupied = int(np.count_nonzero(cells == CellState.OCCUPIED))
    attempts = 0
    # Rejection-sample axis-aligned rectangles until the density target.
    while occupied < target_occ and attempts < 4000:
        attempts += 1
        w = int(rng.integers(4, 16))
        h = int(rng.integers(4, 16))
        cx = int(rng.integers(1, cfg.width - 1 - w))
        cy = int(rng.integers(1, cfg.height - 1 - h))
        if cx <= sx1 and cx + w >= sx0 and cy <= sy1 and cy + h >= sy0:
            continue
        trial = cells.copy()
        _stamp_rect(trial, cx, cy, cx + w - 1, cy + h - 1)
        if interior_cell_count(trial) > cap:
            continue
        if _free_components(trial) != 1:
            continue
        cells = trial
        occupied = int(np.count_nonzero(cells == CellState.OCCUPIED))
    return cells


def _gen_fence_and_clusters(cfg: MapGenConfig, rng: np.random.Generator) -> np.ndarray:
    cells = _blank_grid(cfg)
    total = cfg.width * cfg.height
    cap = cfg.interior_cap * total
    thickness = 3
    gap = max(int(round(cfg.corridor_width / cfg.resolution)) // 2, 8)

    # One long wall across the middle with two gaps.
    fy = cfg.height // 2 + int(rng.integers(-cfg.height // 8, cfg.height // 8))
    wall = cells.copy()
    _stamp_rect(wall, 1, fy, cfg.width - 2, fy + thickness - 1)
    g1 = int(rng.integers(cfg.width // 8, cfg.width // 2 - gap))
    g2 = int(rng.integers(cfg.width // 2, 7 * cfg.width // 8 - gap))
    wall[fy : fy + thickness, g1 : g1 + gap] = CellState.FREE
    wall[fy : fy + thickness, g2 : g2 + gap] = CellState.FREE
    if _free_components(wall) == 1 and interior_cell_count(wall) <= cap:
        cells = wall

    # Random convex blobs (filled circles).
    sx0, sy0, sx1, sy1 = _start_window(cfg)
    placed = 0
    attempts = 0
    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width]
    while placed < cfg.cluster_count and attempts < 600:
        attempts += 1
        r_cells = max(int(round(cfg.cluster_radius / cfg.resolution * rng.uniform(0.6, 1.4))), 3)
        cx = int(rng.integers(2 + r_cells, cfg.width - 2 - r_cells))
        cy = int(rng.integers(2 + r_cells, cfg.height - 2 - r_cells))
        if sx0 - r_cells <= cx <= sx1 + r_cells and sy0 - r_cells <= cy <= sy1 + r_cells:
            continue
        trial = cells.copy()
        trial[(xx - cx) ** 2 + (yy - cy) ** 2 <= r_cells**2] = CellState.OCCUPIED
        if interior_cell_count(trial) > cap:
            continue
        if _free_components(trial) != 1:
            continue
        cells = trial
        placed += 1
    return cells


def _gen_maze(cfg: MapGenConfig, rng: np.random.Generator) -> np.ndarray:
    """Recursive division with configurable corridor width and 3-cell walls."""
    cells = _blank_grid(cfg)
    cw = max(int(round(cfg.corridor_width / cfg.resolution)), 6)
    tw = 3  # wall thickness in cells; >2 so walls have interiors
    cap = cfg.interior_cap * cfg.width * cfg.height

    def divide(x0: int, y0: int, x1: int, y1: int, depth: int) -> None:
        # Chamber bounds are inclusive free-cell ranges.
        w, h = x1 - x0 + 1, y1 - y0 + 1
        if depth > 24 or (w < 2 * cw + tw and h < 2 * cw + tw):
            return
        if interior_cell_count(cells) > cap * 0.9:
            return
        horizontal = h >= w if h != w else bool(rng.integers(0, 2))
        if horizontal and h >= 2 * cw + tw:
            wy = int(rng.integers(y0 + cw, y1 - cw - tw + 2))
            door = int(rng.integers(x0, x1 - cw + 2))
            cells[wy : wy + tw, x0 : x1 + 1] = CellState.OCCUPIED
            cells[wy : wy + tw, door : door + cw] = CellState.FREE
            divide(x0, y0, x1, wy - 1, depth + 1)
            divide(x0, wy + tw, x1, y1, depth + 1)
        elif not horizontal and w >= 2 * cw + tw:
            wx = int(rng.integers(x0 + cw, x1 - cw - tw + 2))
            door = int(rng.integers(y0, y1 - cw + 2))
            cells[y0 : y1 + 1, wx : wx + tw] = CellState.OCCUPIED
            cells[door : door + cw, wx : wx + tw] = CellState.FREE
            divide(x0, y0, wx - 1, y1, depth + 1)
            divide(wx + tw, y0, x1, y1, depth + 1)

    divide(1, 1, cfg.width - 2, cfg.height - 2, 0)
    return cells


_GENERATORS = {
    MapKind.MAZE: _gen_maze,
    MapKind.FENCE_AND_CLUSTERS: _gen_fence_and_clusters,
    MapKind.UNIFORM_RANDOM: _gen_uniform_random,
}


def generate_map(config: MapGenConfig) -> OccupancyGrid:
    """Deterministic ground-truth map for the given config.

    Retries with derived sub-seeds when a draw violates the connectivity or
    interior-density constraints; raises MapGenError naming the constraint
    that could not be met.
    """
    if config.width < 24 or config.height < 24:
        raise MapGenError("grid too small for a bordered environment (min 24x24)")
    total = config.width * config.height
    last_failure = "no attempt"
    for retry in range(8):
        rng = np.random.default_rng(np.random.SeedSequence([int(config.seed) & (2**63 - 1), retry]))
        cells = _GENERATORS[config.kind](config, rng)
        _clear_start(cells, config)
        if _free_components(cells) != 1:
            last_failure = "free space not 4-connected"
            continue
        interior = interior_cell_count(cells)
        if interior > config.interior_cap * total:
            last_failure = (
                f"obstacle interior {interior / total:.1%} exceeds cap {config.interior_cap:.1%}"
            )
            continue
        return OccupancyGrid(config.width, config.height, config.resolution, (0.0, 0.0), cells)
    raise MapGenError(f"map generation failed after retries: {last_failure}")
