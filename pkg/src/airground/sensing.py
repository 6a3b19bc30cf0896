"""Simulated sensors, belief-map integration, and frontier extraction.

Frontier A cells are Unknown cells 4-adjacent to a Free cell (new
information reachable by the ground vehicle). Frontier B cells are Unknown
cells 4-adjacent to an Occupied cell and to no Free cell: information only
the aerial downward view can resolve. A cell adjacent to both Free and
Occupied is classified A only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .grid import CellState, OccupancyGrid, world_to_cell

_N4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
_N8 = np.ones((3, 3), dtype=int)


class SensingError(Exception):
    pass


class InvalidPoseError(SensingError):
    pass


class InconsistentObservationError(SensingError):
    def __init__(self, cell: tuple[int, int], old: CellState, new: CellState):
        super().__init__(f"cell {cell}: belief {old.name} contradicts observation {new.name}")
        self.cell = cell


@dataclass(frozen=True)
class LidarSensor:
    range: float = 6.0
    beam_count: int = 720

    def __post_init__(self):
        if self.range <= 0 or self.beam_count < 4:
            raise SensingError("lidar needs positive range and >= 4 beams")


@dataclass(frozen=True)
class CameraFootprint:
    """Axis-aligned rectangular ground footprint of the downward camera."""

    side_x: float = 2.144
    side_y: float = 2.144

    def __post_init__(self):
        if self.side_x <= 0 or self.side_y <= 0:
            raise SensingError("footprint sides must be positive")


@dataclass(frozen=True)
class Observation:
    """Deduplicated observed cells: ``cells`` is (N, 2) of (cx, cy), ``states``
    holds FREE/OCCUPIED values."""

    cells: np.ndarray
    states: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)

    def to_pairs(self) -> list[tuple[tuple[int, int], int]]:
        return [((int(c[0]), int(c[1])), int(s)) for c, s in zip(self.cells, self.states)]


@dataclass(frozen=True)
class FrontierSet:
    a_mask: np.ndarray
    b_mask: np.ndarray

    @property
    def frontier_a(self) -> np.ndarray:
        """(N, 2) array of frontier-A cells in row-major order."""
        ys, xs = np.nonzero(self.a_mask)
        return np.column_stack([xs, ys])

    @property
    def frontier_b(self) -> np.ndarray:
        ys, xs = np.nonzero(self.b_mask)
        return np.column_stack([xs, ys])

    def is_empty(self) -> bool:
        return not (self.a_mask.any() or self.b_mask.any())


@dataclass(frozen=True)
class FrontierLine:
    """One 8-connected component of frontier-A cells."""

    cells: np.ndarray  # (N, 2), row-major order
    length: float  # meters: cell count * resolution

    def __len__(self) -> int:
        return len(self.cells)


@njit(cache=True)
def _cast_rays(truth, px, py, ox, oy, res, sensor_range, beam_count, seen):
    """Amanatides-Woo traversal of every beam; stamps 1=free, 2=occupied."""
    height, width = truth.shape
    gx = (px - ox) / res
    gy = (py - oy) / res
    for b in range(beam_count):
        ang = 2.0 * math.pi * b / beam_count
        dx = math.cos(ang)
        dy = math.sin(ang)
        cx = int(math.floor(gx))
        cy = int(math.floor(gy))
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        # Parametric distance (in meters) to the next cell boundary per axis.
        if dx > 0:
            t_max_x = (cx + 1 - gx) / dx * res
        elif dx < 0:
            t_max_x = (cx - gx) / dx * res
        else:
            t_max_x = 1e30
        if dy > 0:
            t_max_y = (cy + 1 - gy) / dy * res
        elif dy < 0:
            t_max_y = (cy - gy) / dy * res
        else:
            t_max_y = 1e30
        t_delta_x = res / abs(dx) if dx != 0 else 1e30
        t_delta_y = res / abs(dy) if dy != 0 else 1e30
        t = 0.0
        while t <= sensor_range:
            if cx < 0 or cx >= width or cy < 0 or cy >= height:
                break
            if truth[cy, cx] == 2:
                seen[cy, cx] = 2
                break
            seen[cy, cx] = 1
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                cx += step_x
            else:
                t = t_max_y
                t_max_y += t_delta_y
                cy += step_y


def simulate_lidar(truth: OccupancyGrid, pose: tuple[float, float], sensor: LidarSensor) -> Observation:
    """Cast ``beam_count`` rays uniformly over 360 degrees.

    Cells traversed by a ray are reported Free up to the first Occupied cell,
    which is reported Occupied; nothing beyond range or beyond the first hit.
    """
    cell = world_to_cell(truth, pose)
    if truth.state_at(cell) != CellState.FREE:
        raise InvalidPoseError(f"lidar pose {pose} is on a non-free cell {cell}")
    seen = np.zeros_like(truth.cells)
    _cast_rays(
        truth.cells,
        float(pose[0]),
        float(pose[1]),
        truth.origin[0],
        truth.origin[1],
        truth.resolution,
        sensor.range,
        sensor.beam_count,
        seen,
    )
    ys, xs = np.nonzero(seen)
    return Observation(np.column_stack([xs, ys]), seen[ys, xs])


def simulate_camera(truth: OccupancyGrid, pose: tuple[float, float], fp: CameraFootprint) -> Observation:
    """Unoccluded downward view: every cell whose center lies inside the
    footprint rectangle is reported with its true state (obstacle interiors
    included). Cells outside the grid are clipped."""
    res = truth.resolution
    # Cell centers are at origin + (c + 0.5) * res.
    cx0 = int(np.ceil((pose[0] - fp.side_x / 2 - truth.origin[0]) / res - 0.5))
    cx1 = int(np.floor((pose[0] + fp.side_x / 2 - truth.origin[0]) / res - 0.5))
    cy0 = int(np.ceil((pose[1] - fp.side_y / 2 - truth.origin[1]) / res - 0.5))
    cy1 = int(np.floor((pose[1] + fp.side_y / 2 - truth.origin[1]) / res - 0.5))
    cx0, cx1 = max(cx0, 0), min(cx1, truth.width - 1)
    cy0, cy1 = max(cy0, 0), min(cy1, truth.height - 1)
    if cx0 > cx1 or cy0 > cy1:
        return Observation(np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.uint8))
    xs, ys = np.meshgrid(np.arange(cx0, cx1 + 1), np.arange(cy0, cy1 + 1))
    cells = np.column_stack([xs.ravel(), ys.ravel()])
    states = truth.cells[cy0 : cy1 + 1, cx0 : cx1 + 1].ravel()
    return Observation(cells, states.copy())


def integrate(
    belief: OccupancyGrid, obs: Observation, in_place: bool = False
) -> tuple[OccupancyGrid, np.ndarray]:
    """Write observed states into the belief map.

    Returns the updated belief and the (N, 2) array of cells whose state
    actually changed. A Known cell contradicting its observation raises
    InconsistentObservationError (sensing is noise-free by contract).
    """
    out = belief if in_place else belief.copy()
    if len(obs) == 0:
        return out, np.empty((0, 2), dtype=np.int64)
    xs = obs.cells[:, 0]
    ys = obs.cells[:, 1]
    current = out.cells[ys, xs]
    conflict = (current != CellState.UNKNOWN) & (current != obs.states)
    if conflict.any():
        i = int(np.argmax(conflict))
        raise InconsistentObservationError(
            (int(xs[i]), int(ys[i])), CellState(int(current[i])), CellState(int(obs.states[i]))
        )
    changed = current != obs.states
    out.cells[ys[changed], xs[changed]] = obs.states[changed]
    return out, obs.cells[changed]


def adjacent4(mask: np.ndarray) -> np.ndarray:
    """Cells with a 4-neighbor inside ``mask``."""
    out = np.zeros_like(mask)
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def extract_frontiers(belief: OccupancyGrid) -> FrontierSet:
    """Classify Unknown cells into frontier A/B; A wins when both apply."""
    unknown = belief.cells == CellState.UNKNOWN
    near_free = adjacent4(belief.cells == CellState.FREE)
    near_occ = adjacent4(belief.cells == CellState.OCCUPIED)
    a_mask = unknown & near_free
    b_mask = unknown & near_occ & ~near_free
    return FrontierSet(a_mask, b_mask)


def cluster_frontier_lines(fs: FrontierSet, grid: OccupancyGrid) -> list[FrontierLine]:
    """Partition frontier-A cells into 8-connected components.

    Lines are ordered by their smallest row-major cell index; a line's length
    is its cell count times the grid resolution.
    """
    labels, n = ndimage.label(fs.a_mask, structure=_N8)
    lines = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        cells = np.column_stack([xs, ys])
        lines.append(FrontierLine(cells, len(cells) * grid.resolution))
    # ndimage labels in raster order, so this is already by smallest index;
    # sort anyway to pin the contract.
    lines.sort(key=lambda ln: int(ln.cells[0, 1]) * grid.width + int(ln.cells[0, 0]))
    return lines


def cluster_cells(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components of an arbitrary cell mask, as (N, 2) arrays."""
    labels, n = ndimage.label(mask, structure=_N8)
    out = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        out.append(np.column_stack([xs, ys]))
    return out
