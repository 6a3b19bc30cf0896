"""Motion-primitive exploration planner for the aerial vehicle.

Expands a tree of constant-acceleration primitives over a discretized
acceleration set, scores root-to-leaf candidates by weighted frontier
coverage of the swept camera footprint divided by a time-plus-effort cost,
and falls back to a distant frontier goal when the local tree cannot gain
enough. Executable trajectories come from a minimum-jerk quintic generator
through the chosen waypoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import OccupancyGrid
from .sensing import CameraFootprint, FrontierSet, cluster_cells
from .trajectory import (
    BezierSegment,
    MotionState,
    PiecewiseTrajectory,
    power_to_bezier,
    speed_squared_bound,
)

DEFAULT_V_MAX = 1.4
DEFAULT_A_MAX = 1.0
SWEEP_SAMPLE_DT = 0.1


class UavPlannerError(Exception):
    pass


class DegenerateInputError(UavPlannerError):
    pass


@dataclass(frozen=True)
class UavState:
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class Primitive:
    """Constant-acceleration propagation over a fixed duration."""

    accel: tuple[float, float]
    duration: float
    start: UavState
    end: UavState

    @classmethod
    def propagate(cls, start: UavState, accel: tuple[float, float], duration: float) -> "Primitive":
        px, py = start.position
        vx, vy = start.velocity
        ax, ay = accel
        t = duration
        end = UavState(
            (px + vx * t + 0.5 * ax * t * t, py + vy * t + 0.5 * ay * t * t),
            (vx + ax * t, vy + ay * t),
        )
        return cls((float(ax), float(ay)), float(t), start, end)


@dataclass
class TreeNode:
    primitive: Primitive
    parent: int  # -1 for children of the root
    depth: int  # 1-based


@dataclass
class PathTree:
    root: UavState
    nodes: list[TreeNode] = field(default_factory=list)
    leaves: list[int] = field(default_factory=list)  # node ids at full depth

    def is_empty(self) -> bool:
        return not self.leaves

    def leaf_path(self, leaf: int) -> list[Primitive]:
        chain = []
        i = leaf
        while i >= 0:
            chain.append(self.nodes[i].primitive)
            i = self.nodes[i].parent
        return chain[::-1]


@dataclass(frozen=True)
class GainParams:
    w_a: float = 1.0  # weight per covered frontier-A cell
    w_b: float = 3.0  # weight per covered frontier-B cell (aerial preference)
    rho: float = 0.1  # control-effort weight in the cost
    g_min: float = 1.0  # minimum acceptable best gain/cost ratio

    def __post_init__(self):
        if not self.w_b > self.w_a > 0:
            raise UavPlannerError("weights must satisfy w_b > w_a > 0")


def default_accel_set(a_max: float = DEFAULT_A_MAX) -> np.ndarray:
    """{-a_max, 0, +a_max}^2 in lexicographic order."""
    vals = (-a_max, 0.0, a_max)
    return np.array([(ax, ay) for ax in vals for ay in vals])


def expand_tree(
    state: UavState,
    accel_set: np.ndarray | None = None,
    tau: float = 1.0,
    depth: int = 3,
    v_max: float = DEFAULT_V_MAX,
    bounds: tuple[float, float, float, float] | None = None,
) -> PathTree:
    """Full |accel_set|^depth expansion minus pruned branches.

    A branch is pruned when its endpoint or midpoint speed exceeds v_max or
    its endpoint leaves ``bounds`` (xmin, ymin, xmax, ymax). An empty leaf
    list signals that every branch was pruned.
    """
    if accel_set is None:
        accel_set = default_accel_set()
    accel_set = np.asarray(accel_set, dtype=np.float64)
    if len(accel_set) == 0 or tau <= 0 or depth < 1:
        raise UavPlannerError("need a nonempty accel set, positive tau, depth >= 1")

    tree = PathTree(state)
    frontier = [(-1, state)]
    for d in range(1, depth + 1):
        next_frontier = []
        for parent, s in frontier:
            for a in accel_set:
                prim = Primitive.propagate(s, (a[0], a[1]), tau)
                if _speed(s.velocity, a, tau / 2) > v_max + 1e-12:
                    continue
                if _speed(s.velocity, a, tau) > v_max + 1e-12:
                    continue
                if bounds is not None:
                    ex, ey = prim.end.position
                    if not (bounds[0] <= ex <= bounds[2] and bounds[1] <= ey <= bounds[3]):
                        continue
                tree.nodes.append(TreeNode(prim, parent, d))
                node_id = len(tree.nodes) - 1
                if d == depth:
                    tree.leaves.append(node_id)
                else:
                    next_frontier.append((node_id, prim.end))
        frontier = next_frontier
    return tree


def _speed(vel, accel, t: float) -> float:
    return math.hypot(vel[0] + accel[0] * t, vel[1] + accel[1] * t)


def _sweep_sample_positions(path: list[Primitive], sample_dt: float = SWEEP_SAMPLE_DT) -> np.ndarray:
    """Positions along a primitive chain at the global sample grid k*sample_dt,
    including t=0 and the final endpoint when it falls on the grid."""
    cum = np.concatenate([[0.0], np.cumsum([p.duration for p in path])])
    total = cum[-1]
    ks = np.arange(int(math.floor(total / sample_dt + 1e-9)) + 1)
    pts = []
    for k in ks:
        t = k * sample_dt
        i = int(np.searchsorted(cum[1:-1], t, side="left"))
        i = min(i, len(path) - 1)
        s = min(max(t - cum[i], 0.0), path[i].duration)
        p = path[i]
        px, py = p.start.position
        vx, vy = p.start.velocity
        pts.append((px + vx * s + 0.5 * p.accel[0] * s * s, py + vy * s + 0.5 * p.accel[1] * s * s))
    return np.asarray(pts)


def _frontier_world(fs: FrontierSet, grid: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Frontier cell centers (world meters) and their weights-by-class flag.

    Returns (centers (F, 2), is_b (F,) bool); frontier A first, then B.
    """
    a = fs.frontier_a
    b = fs.frontier_b
    cells = np.vstack([a, b]) if len(a) or len(b) else np.empty((0, 2))
    centers = (cells + 0.5) * grid.resolution + np.asarray(grid.origin)
    is_b = np.zeros(len(cells), dtype=bool)
    is_b[len(a) :] = True
    return centers, is_b


def score(
    path: list[Primitive],
    frontiers: FrontierSet,
    fp: CameraFootprint,
    params: GainParams,
    grid: OccupancyGrid,
) -> tuple[float, float, float]:
    """Gain, cost and their ratio for one candidate path.

    Gain counts each frontier cell whose center falls inside the footprint
    rectangle at any sweep sample, weighted w_a / w_b by class. Cost is total
    time plus rho * sum(|accel|^2 * duration).
    """
    if not path:
        raise UavPlannerError("empty path")
    centers, is_b = _frontier_world(frontiers, grid)
    cost = sum(p.duration + params.rho * (p.accel[0] ** 2 + p.accel[1] ** 2) * p.duration for p in path)
    if len(centers) == 0:
        return 0.0, cost, 0.0
    pts = _sweep_sample_positions(path)
    dx = np.abs(centers[:, 0][None, :] - pts[:, 0][:, None])
    dy = np.abs(centers[:, 1][None, :] - pts[:, 1][:, None])
    covered = ((dx <= fp.side_x / 2) & (dy <= fp.side_y / 2)).any(axis=0)
    gain = params.w_a * np.count_nonzero(covered & ~is_b) + params.w_b * np.count_nonzero(covered & is_b)
    return float(gain), float(cost), float(gain / cost)


def select_best(
    tree: PathTree,
    frontiers: FrontierSet,
    fp: CameraFootprint,
    params: GainParams,
    grid: OccupancyGrid,
) -> list[Primitive] | None:
    """Argmax-ratio leaf path; ties break toward lower cost then smaller leaf
    index. Returns None (insufficient gain) when the best ratio < g_min."""
    if tree.is_empty():
        raise UavPlannerError("cannot select from an empty tree")
    centers, is_b = _frontier_world(frontiers, grid)
    weights = np.where(is_b, params.w_b, params.w_a)

    # Per-node coverage of the frontier cells near the tree, then unions
    # down each leaf's ancestor chain. Matches score() sample for sample.
    n_nodes = len(tree.nodes)
    sample_pts = []
    sample_node = []
    tau = tree.nodes[0].primitive.duration
    for i, node in enumerate(tree.nodes):
        t0 = (node.depth - 1) * tau
        k_lo = int(math.floor(t0 / SWEEP_SAMPLE_DT + 1e-9)) + 1
        k_hi = int(math.floor((t0 + tau) / SWEEP_SAMPLE_DT + 1e-9))
        p = node.primitive
        for k in range(k_lo, k_hi + 1):
            s = min(max(k * SWEEP_SAMPLE_DT - t0, 0.0), tau)
            px, py = p.start.position
            vx, vy = p.start.velocity
            sample_pts.append(
                (px + vx * s + 0.5 * p.accel[0] * s * s, py + vy * s + 0.5 * p.accel[1] * s * s)
            )
            sample_node.append(i)
    sample_pts = np.asarray(sample_pts)
    sample_node = np.asarray(sample_node)

    root_pos = np.asarray(tree.root.position)
    if len(centers):
        lo = sample_pts.min(axis=0) - (fp.side_x / 2, fp.side_y / 2)
        hi = sample_pts.max(axis=0) + (fp.side_x / 2, fp.side_y / 2)
        lo = np.minimum(lo, root_pos - (fp.side_x / 2, fp.side_y / 2))
        hi = np.maximum(hi, root_pos + (fp.side_x / 2, fp.side_y / 2))
        near = ((centers >= lo) & (centers <= hi)).all(axis=1)
        centers_near = centers[near]
        weights_near = weights[near]
    else:
        centers_near = centers
        weights_near = weights

    nf = len(centers_near)
    node_cov = np.zeros((n_nodes, nf), dtype=bool)
    root_cov = np.zeros(nf, dtype=bool)
    if nf:
        dx = np.abs(centers_near[:, 0][None, :] - sample_pts[:, 0][:, None])
        dy = np.abs(centers_near[:, 1][None, :] - sample_pts[:, 1][:, None])
        hit = (dx <= fp.side_x / 2) & (dy <= fp.side_y / 2)
        for i in range(n_nodes):
            rows = hit[sample_node == i]
            if len(rows):
                node_cov[i] = rows.any(axis=0)
        root_cov = (np.abs(centers_near[:, 0] - root_pos[0]) <= fp.side_x / 2) & (
            np.abs(centers_near[:, 1] - root_pos[1]) <= fp.side_y / 2
        )

    node_cost = np.array(
        [
            n.primitive.duration
            + params.rho * (n.primitive.accel[0] ** 2 + n.primitive.accel[1] ** 2) * n.primitive.duration
            for n in tree.nodes
        ]
    )
    parents = np.array([n.parent for n in tree.nodes])

    best = None  # (ratio, -cost, -leaf_index) maximized
    best_leaf = None
    for leaf in tree.leaves:
        cov = root_cov.copy()
        cost = 0.0
        i = leaf
        while i >= 0:
            cov |= node_cov[i]
            cost += node_cost[i]
            i = parents[i]
        gain = float(weights_near[cov].sum()) if nf else 0.0
        ratio = gain / cost
        key = (ratio, -cost, -leaf)
        if best is None or key > best:
            best = key
            best_leaf = leaf
    if best is None or best[0] < params.g_min:
        return None
    return tree.leaf_path(best_leaf)


def select_global_goal(
    frontiers: FrontierSet,
    state: UavState,
    params: GainParams,
    grid: OccupancyGrid,
    lines_b: list[np.ndarray] | None = None,
) -> tuple[float, float] | None:
    """Distant frontier goal: the cluster maximizing weighted size over
    distance, frontier-B clusters preferred, frontier-A lines as fallback.

    Returns the cluster cell center nearest the cluster centroid, or None
    when no frontier cells remain (exploration complete).
    """
    if lines_b is None:
        lines_b = cluster_cells(frontiers.b_mask)
    clusters = [(c, params.w_b) for c in lines_b]
    if not clusters:
        clusters = [(c, params.w_a) for c in cluster_cells(frontiers.a_mask)]
    if not clusters:
        return None
    pos = np.asarray(state.position)
    best_key = None
    best_goal = None
    for cells, w in clusters:
        centers = (cells + 0.5) * grid.resolution + np.asarray(grid.origin)
        centroid = centers.mean(axis=0)
        dist = max(float(np.linalg.norm(centroid - pos)), 0.5 * grid.resolution)
        ratio = w * len(cells) / dist
        # Snap to the member cell nearest the centroid so arriving resolves it.
        snap = centers[int(np.argmin(np.linalg.norm(centers - centroid, axis=1)))]
        key = (ratio, -snap[1], -snap[0])
        if best_key is None or key > best_key:
            best_key = key
            best_goal = (float(snap[0]), float(snap[1]))
    return best_goal


def min_jerk(
    waypoints: np.ndarray,
    start_state: MotionState,
    end_state: MotionState,
    durations: np.ndarray,
) -> PiecewiseTrajectory:
    """Piecewise quintic minimizing integrated squared jerk through waypoints.

    Solves the closed-form linear system given by waypoint interpolation,
    endpoint velocity/acceleration, and continuity through the fourth
    derivative at interior junctions (the optimality conditions of the jerk
    objective). Returns the result as Bezier segments.
    """
    waypoints = np.asarray(waypoints, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    if len(waypoints) < 2:
        raise DegenerateInputError("need at least two waypoints")
    if len(durations) != len(waypoints) - 1:
        raise DegenerateInputError("need one duration per segment")
    if (durations <= 0).any():
        raise DegenerateInputError("durations must be positive")
    n_seg = len(durations)
    n = 6 * n_seg

    def drow(seg: int, order: int, t: float) -> np.ndarray:
        row = np.zeros(n)
        for k in range(order, 6):
            row[6 * seg + k] = math.factorial(k) / math.factorial(k - order) * t ** (k - order)
        return row

    rows = []
    rhs = []
    for i in range(n_seg):
        rows.append(drow(i, 0, 0.0))
        rhs.append(waypoints[i])
        rows.append(drow(i, 0, durations[i]))
        rhs.append(waypoints[i + 1])
    rows.append(drow(0, 1, 0.0))
    rhs.append(np.asarray(start_state.vel))
    rows.append(drow(0, 2, 0.0))
    rhs.append(np.asarray(start_state.acc))
    rows.append(drow(n_seg - 1, 1, durations[-1]))
    rhs.append(np.asarray(end_state.vel))
    rows.append(drow(n_seg - 1, 2, durations[-1]))
    rhs.append(np.asarray(end_state.acc))
    for i in range(n_seg - 1):
        for order in range(1, 5):
            row = drow(i, order, durations[i]) - drow(i + 1, order, 0.0)
            rows.append(row)
            rhs.append(np.zeros(2))

    A = np.vstack(rows)
    B = np.vstack(rhs)
    try:
        coeffs = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as e:
        raise DegenerateInputError(f"singular quintic system: {e}") from None

    segments = []
    for i in range(n_seg):
        pts = power_to_bezier(coeffs[6 * i : 6 * i + 6], durations[i])
        segments.append(BezierSegment(pts, float(durations[i])))
    return PiecewiseTrajectory(segments)


def min_jerk_capped(
    waypoints: np.ndarray,
    start_state: MotionState,
    end_state: MotionState,
    durations: np.ndarray,
    v_max: float,
    max_rounds: int = 10,
) -> PiecewiseTrajectory:
    """min_jerk with durations stretched until the certified speed bound fits
    under v_max. Stretching scales the end velocity down to stay consistent."""
    durations = np.asarray(durations, dtype=np.float64)
    end = end_state
    for _ in range(max_rounds):
        traj = min_jerk(waypoints, start_state, end, durations)
        bound = math.sqrt(speed_squared_bound(traj))
        if bound <= v_max:
            return traj
        scale = max(bound / v_max * 1.05, 1.1)
        durations = durations * scale
        end = MotionState(end.pos, (end.vel[0] / scale, end.vel[1] / scale), end.acc)
    return traj
