"""Corridor-constrained trajectory optimization for the ground vehicle.

Turns a gradient-descent grid path into a chain of overlapping obstacle-free
axis-aligned boxes, then minimizes integrated squared acceleration over
degree-5 Bezier segments (one per box) subject to: control points inside
their box (convex-hull containment certificate), C2 continuity at junctions,
endpoint states, and per-axis velocity/acceleration bounds on control-point
differences (conservative sufficient condition for the 2-norm bounds).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

from .grid import CellState, OccupancyGrid, cell_to_world
from .trajectory import BezierSegment, MotionState, PiecewiseTrajectory

DEGREE = 5
MIN_SEGMENT_DURATION = 0.1

_QP_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-10,
    "reltol": 1e-10,
    "feastol": 1e-9,
    "maxiters": 200,
}


class CorridorError(Exception):
    pass


class InvalidPathError(CorridorError):
    """A corridor path cell is not Free in the belief map."""


class CorridorBreakError(CorridorError):
    """Consecutive boxes could not be made to overlap."""


class QpInfeasibleError(Exception):
    def __init__(self, family: str):
        super().__init__(f"trajectory QP infeasible; first violated constraint family: {family}")
        self.family = family


@dataclass(frozen=True)
class Box:
    """Axis-aligned world-coordinate rectangle covering whole cells."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, p, tol: float = 1e-9) -> bool:
        return (
            self.x0 - tol <= p[0] <= self.x1 + tol
            and self.y0 - tol <= p[1] <= self.y1 + tol
        )

    def intersection(self, other: "Box") -> "Box | None":
        x0, y0 = max(self.x0, other.x0), max(self.y0, other.y0)
        x1, y1 = min(self.x1, other.x1), min(self.y1, other.y1)
        if x0 >= x1 or y0 >= y1:
            return None
        return Box(x0, y0, x1, y1)


@dataclass
class Corridor:
    boxes: list[Box]
    path: list[tuple[int, int]]
    path_assignment: list[int]  # box index per path waypoint
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)

    def waypoints(self) -> np.ndarray:
        """Piecewise-linear skeleton: path endpoints with the midpoint of each
        consecutive box overlap in between. (M boxes -> M+1 points.)"""
        pts = [self._cell_center(self.path[0])]
        for a, b in zip(self.boxes[:-1], self.boxes[1:]):
            ov = a.intersection(b)
            if ov is None:
                raise CorridorBreakError("consecutive boxes do not overlap")
            pts.append(((ov.x0 + ov.x1) / 2, (ov.y0 + ov.y1) / 2))
        pts.append(self._cell_center(self.path[-1]))
        return np.asarray(pts)

    def _cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return (
            self.origin[0] + (cell[0] + 0.5) * self.resolution,
            self.origin[1] + (cell[1] + 0.5) * self.resolution,
        )


def _grow_box(free: np.ndarray, seed: tuple[int, int]) -> tuple[int, int, int, int]:
    """Inflate an inclusive cell rectangle from a seed, one side at a time,
    while every covered cell stays free. Returns (cx0, cy0, cx1, cy1)."""
    h, w = free.shape
    cx, cy = seed
    x0 = x1 = cx
    y0 = y1 = cy
    blocked = [False] * 4  # west, east, south, north
    while not all(blocked):
        if not blocked[0]:
            if x0 > 0 and free[y0 : y1 + 1, x0 - 1].all():
                x0 -= 1
            else:
                blocked[0] = True
        if not blocked[1]:
            if x1 < w - 1 and free[y0 : y1 + 1, x1 + 1].all():
                x1 += 1
            else:
                blocked[1] = True
        if not blocked[2]:
            if y0 > 0 and free[y0 - 1, x0 : x1 + 1].all():
                y0 -= 1
            else:
                blocked[2] = True
        if not blocked[3]:
            if y1 < h - 1 and free[y1 + 1, x0 : x1 + 1].all():
                y1 += 1
            else:
                blocked[3] = True
    return x0, y0, x1, y1


def _cells_to_box(grid: OccupancyGrid, r: tuple[int, int, int, int]) -> Box:
    x0, y0, x1, y1 = r
    ox, oy = grid.origin
    res = grid.resolution
    return Box(ox + x0 * res, oy + y0 * res, ox + (x1 + 1) * res, oy + (y1 + 1) * res)


def densify_path(belief: OccupancyGrid, path: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Make a (possibly 8-connected) grid path 4-connected through free cells.

    Diagonal steps gain the free orthogonal companion cell; if neither
    companion is free the path is truncated before the step (the caller gets
    closer, re-senses, and replans).
    """
    free = belief.cells == CellState.FREE
    out = [path[0]]
    for (ax, ay), (bx, by) in zip(path[:-1], path[1:]):
        dx, dy = bx - ax, by - ay
        if dx != 0 and dy != 0:
            c1, c2 = (bx, ay), (ax, by)
            options = [c for c in sorted((c1, c2), key=lambda c: (c[1], c[0])) if free[c[1], c[0]]]
            if not options:
                return out
            out.append(options[0])
        out.append((bx, by))
    return out


def generate_corridor(belief: OccupancyGrid, path: list[tuple[int, int]]) -> Corridor:
    """Chain of overlapping free boxes covering a grid path.

    Greedy inflation: grow a box at the first uncovered path cell; advance
    past the covered prefix; seed the next box at the last covered path cell
    (inside the previous box) so consecutive boxes share at least one cell,
    falling back to the uncovered cell itself when that seed stalls.
    """
    if not path:
        raise InvalidPathError("empty path")
    free = belief.cells == CellState.FREE
    for cx, cy in path:
        if not belief.in_bounds((cx, cy)) or not free[cy, cx]:
            raise InvalidPathError(f"path cell {(cx, cy)} is not Free")

    boxes_cells: list[tuple[int, int, int, int]] = []
    k = 0
    while k < len(path):
        if boxes_cells:
            # Seed inside the previous box footprint when possible.
            rect = _grow_box(free, path[k - 1])
            if not _rect_contains(rect, path[k]):
                rect = _grow_box(free, path[k])
                if _rect_overlap(rect, boxes_cells[-1]) is None:
                    raise CorridorBreakError(
                        f"no overlap between boxes around path cells {path[k - 1]} and {path[k]}"
                    )
        else:
            rect = _grow_box(free, path[k])
        boxes_cells.append(rect)
        while k < len(path) and _rect_contains(rect, path[k]):
            k += 1

    assignment = []
    bi = 0
    for cell in path:
        while not _rect_contains(boxes_cells[bi], cell):
            bi += 1
        assignment.append(bi)

    return Corridor(
        [_cells_to_box(belief, r) for r in boxes_cells],
        list(path),
        assignment,
        belief.resolution,
        belief.origin,
    )


def _rect_contains(r: tuple[int, int, int, int], cell: tuple[int, int]) -> bool:
    return r[0] <= cell[0] <= r[2] and r[1] <= cell[1] <= r[3]


def _rect_overlap(a, b):
    x0, y0 = max(a[0], b[0]), max(a[1], b[1])
    x1, y1 = min(a[2], b[2]), min(a[3], b[3])
    if x0 > x1 or y0 > y1:
        return None
    return (x0, y0, x1, y1)


def allocate_times(corridor: Corridor, v_max: float, a_max: float) -> np.ndarray:
    """Trapezoidal-velocity heuristic over the corridor skeleton.

    Each segment gets distance / v_max; the first and last segments are
    extended to at least v_max / a_max for acceleration from / deceleration
    to rest. Every duration is floored at MIN_SEGMENT_DURATION.
    """
    if v_max <= 0 or a_max <= 0:
        raise ValueError("v_max and a_max must be positive")
    pts = corridor.waypoints()
    dists = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    durations = dists / v_max
    ramp = v_max / a_max if np.isfinite(a_max) else 0.0
    durations[0] = max(durations[0], ramp)
    durations[-1] = max(durations[-1], ramp)
    return np.maximum(durations, MIN_SEGMENT_DURATION)


def _acc_gram(duration: float) -> np.ndarray:
    """H with p^T H p = integral of (d2/dt2 Bezier(p))^2 dt over one segment."""
    # Acceleration control points: A = D2 @ p, a degree-3 Bezier.
    d2 = np.zeros((4, 6))
    for i in range(4):
        d2[i, i] = 1.0
        d2[i, i + 1] = -2.0
        d2[i, i + 2] = 1.0
    d2 *= DEGREE * (DEGREE - 1) / duration**2
    g3 = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            g3[i, j] = comb(3, i) * comb(3, j) / (comb(6, i + j) * 7.0)
    return duration * d2.T @ g3 @ d2


def _endpoint_rows(duration: float):
    """Rows mapping a segment's 6 control points to boundary pos/vel/acc."""
    n = DEGREE
    pos0 = np.eye(6)[0]
    pos1 = np.eye(6)[5]
    vel0 = np.zeros(6)
    vel0[[0, 1]] = (-n / duration, n / duration)
    vel1 = np.zeros(6)
    vel1[[4, 5]] = (-n / duration, n / duration)
    acc0 = np.zeros(6)
    acc0[[0, 1, 2]] = np.array([1.0, -2.0, 1.0]) * n * (n - 1) / duration**2
    acc1 = np.zeros(6)
    acc1[[3, 4, 5]] = np.array([1.0, -2.0, 1.0]) * n * (n - 1) / duration**2
    return pos0, vel0, acc0, pos1, vel1, acc1


def _build_axis_qp(corridor, durations, start, end, axis, v_bound, a_bound, margin):
    """Assemble H, A, b (equalities) and G, h (inequalities) for one axis."""
    m = len(corridor.boxes)
    nvar = 6 * m
    H = np.zeros((nvar, nvar))
    for i, T in enumerate(durations):
        H[6 * i : 6 * i + 6, 6 * i : 6 * i + 6] = _acc_gram(T)

    rows_a, rhs_b = [], []

    def eq(row, seg, value):
        full = np.zeros(nvar)
        full[6 * seg : 6 * seg + 6] = row
        rows_a.append(full)
        rhs_b.append(value)

    p0, v0, a0, p1, v1, a1 = _endpoint_rows(durations[0])
    eq(p0, 0, start.pos[axis])
    eq(v0, 0, start.vel[axis])
    eq(a0, 0, start.acc[axis])
    p0e, v0e, a0e, p1e, v1e, a1e = _endpoint_rows(durations[-1])
    eq(p1e, m - 1, end.pos[axis])
    eq(v1e, m - 1, end.vel[axis])
    eq(a1e, m - 1, end.acc[axis])
    for i in range(m - 1):
        _, _, _, pe, ve, ae = _endpoint_rows(durations[i])
        ps, vs, acs, _, _, _ = _endpoint_rows(durations[i + 1])
        for left, right in ((pe, ps), (ve, vs), (ae, acs)):
            full = np.zeros(nvar)
            full[6 * i : 6 * i + 6] = left
            full[6 * (i + 1) : 6 * (i + 1) + 6] -= right
            rows_a.append(full)
            rhs_b.append(0.0)

    rows_g, rhs_h, families = [], [], []
    for i, box in enumerate(corridor.boxes):
        lo = (box.x0, box.y0)[axis]
        hi = (box.x1, box.y1)[axis]
        shrink = min(margin, (hi - lo) / 4)
        lo += shrink
        hi -= shrink
        for k in range(6):
            row = np.zeros(nvar)
            row[6 * i + k] = 1.0
            rows_g.append(row)
            rhs_h.append(hi)
            families.append("box")
            rows_g.append(-row)
            rhs_h.append(-lo)
            families.append("box")
    if v_bound is not None:
        for i, T in enumerate(durations):
            for k in range(5):
                row = np.zeros(nvar)
                row[6 * i + k] = -DEGREE / T
                row[6 * i + k + 1] = DEGREE / T
                rows_g.append(row)
                rhs_h.append(v_bound)
                families.append("velocity")
                rows_g.append(-row)
                rhs_h.append(v_bound)
                families.append("velocity")
    if a_bound is not None:
        for i, T in enumerate(durations):
            for k in range(4):
                row = np.zeros(nvar)
                row[6 * i + k : 6 * i + k + 3] = np.array([1.0, -2.0, 1.0]) * DEGREE * (DEGREE - 1) / T**2
                rows_g.append(row)
                rhs_h.append(a_bound)
                families.append("acceleration")
                rows_g.append(-row)
                rhs_h.append(a_bound)
                families.append("acceleration")

    return H, np.array(rows_a), np.array(rhs_b), np.array(rows_g), np.array(rhs_h), families


def _solve_axis(H, A, b, G, h, families):
    """Equality-constrained KKT solve first; cvxopt only when an inequality
    becomes active (keeps the unconstrained case at machine precision)."""
    n = H.shape[0]
    p = A.shape[0]
    kkt = np.zeros((n + p, n + p))
    kkt[:n, :n] = 2 * H
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    rhs = np.concatenate([np.zeros(n), b])
    try:
        x = np.linalg.solve(kkt, rhs)[:n]
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:n]
    slack = G @ x - h
    if slack.max(initial=-np.inf) <= 1e-9:
        return x
    sol = cvx_solvers.qp(
        cvx_matrix(2 * H + 1e-12 * np.eye(n)),
        cvx_matrix(np.zeros(n)),
        cvx_matrix(G),
        cvx_matrix(h),
        cvx_matrix(A),
        cvx_matrix(b),
        options=_QP_OPTIONS,
    )
    if sol["status"] != "optimal":
        worst = int(np.argmax(slack))
        raise QpInfeasibleError(families[worst])
    return np.array(sol["x"]).ravel()


def optimize_bezier(
    corridor: Corridor,
    start_state: MotionState,
    end_state: MotionState,
    durations: np.ndarray,
    v_max: float | None = None,
    a_max: float | None = None,
    margin: float = 0.0,
) -> PiecewiseTrajectory:
    """Minimum-integrated-squared-acceleration Bezier chain through the corridor.

    One degree-5 segment per box. Per-axis speed/acceleration bounds of
    v_max/sqrt(2) and a_max/sqrt(2) on the derivative control points
    guarantee the Euclidean bounds on the whole curve. ``margin`` shrinks the
    box constraints so the trajectory keeps a strict clearance from box
    edges. Raises QpInfeasibleError naming the first violated constraint
    family when no trajectory satisfies the certificates.
    """
    durations = np.asarray(durations, dtype=np.float64)
    if len(durations) != len(corridor.boxes):
        raise ValueError("need one duration per corridor box")
    if not corridor.boxes[0].contains(start_state.pos):
        raise QpInfeasibleError("box")
    if not corridor.boxes[-1].contains(end_state.pos):
        raise QpInfeasibleError("box")
    v_bound = v_max / np.sqrt(2.0) if v_max is not None else None
    a_bound = a_max / np.sqrt(2.0) if a_max is not None else None

    per_axis = []
    for axis in (0, 1):
        H, A, b, G, h, families = _build_axis_qp(
            corridor, durations, start_state, end_state, axis, v_bound, a_bound, margin
        )
        per_axis.append(_solve_axis(H, A, b, G, h, families))

    segments = []
    for i, T in enumerate(durations):
        pts = np.column_stack([per_axis[0][6 * i : 6 * i + 6], per_axis[1][6 * i : 6 * i + 6]])
        segments.append(BezierSegment(pts, float(T)))
    return PiecewiseTrajectory(segments)


def objective_value(traj: PiecewiseTrajectory) -> float:
    """Integrated squared acceleration of a Bezier trajectory."""
    total = 0.0
    for seg in traj.segments:
        pts = seg.control_points
        for axis in (0, 1):
            p = pts[:, axis]
            total += p @ _acc_gram(seg.duration) @ p
    return float(total)
