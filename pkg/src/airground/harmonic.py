"""Harmonic-field planner for the ground vehicle.

Builds Dirichlet boundary conditions from the belief map (occupied cells and
the map border fixed at 0, each frontier-A cell fixed at minus its line's
length in meters), solves Laplace's equation over the free cells by SOR, and
extracts a gradient-descent path to a frontier. The per-sweep cell update
ordering is pluggable: conventional row-major, or a breadth-first ordering
spreading out from newly changed boundary cells, which lets incremental
(warm-started) solves converge in fewer sweeps.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import OccupancyGrid, CellState
from .sensing import FrontierLine


class HarmonicError(Exception):
    pass


class EmptyProblemError(HarmonicError):
    """No free cells and no frontier lines: nothing to solve."""


class DescentStuckError(HarmonicError):
    """Gradient descent hit a cell with no strictly smaller neighbor."""


@dataclass
class BoundaryConditions:
    """Fixed-value cells and the free-cell domain of one Laplace solve.

    Unknown non-frontier cells are excluded from both: they act as walls and
    do not conduct potential.
    """

    fixed_mask: np.ndarray  # bool (H, W)
    fixed_values: np.ndarray  # float64 (H, W), zero outside fixed_mask
    domain_mask: np.ndarray  # bool (H, W)
    frontier_mask: np.ndarray  # bool (H, W): fixed frontier-A cells (descent terminals)
    resolution: float

    @property
    def has_value(self) -> np.ndarray:
        return self.fixed_mask | self.domain_mask

    def domain_cells(self) -> np.ndarray:
        """(N, 2) domain cells in row-major order."""
        ys, xs = np.nonzero(self.domain_mask)
        return np.column_stack([xs, ys])


@dataclass
class HarmonicField:
    values: np.ndarray  # float64 (H, W); meaningful on bc.has_value only
    bc: BoundaryConditions
    converged: bool
    iterations: int  # full sweeps performed


@dataclass(frozen=True)
class SorParams:
    omega: float = 1.8
    tolerance: float = 1e-4  # max absolute update per sweep
    max_sweeps: int = 10000

    def __post_init__(self):
        if not 0 < self.omega < 2:
            raise HarmonicError("SOR relaxation factor must lie in (0, 2)")


@dataclass(frozen=True)
class RowMajor:
    pass


@dataclass(frozen=True, eq=False)
class Spreading:
    seeds: np.ndarray  # (N, 2) fixed cells newly created or changed since last solve


UpdateOrdering = RowMajor | Spreading


def build_boundary(belief: OccupancyGrid, lines: list[FrontierLine]) -> BoundaryConditions:
    """Dirichlet boundary for the current belief.

    Occupied cells and the map border are fixed at 0; each frontier-A cell at
    the negative of its line's length (border cells keep 0). Free cells form
    the domain.
    """
    h, w = belief.cells.shape
    occ = belief.cells == CellState.OCCUPIED
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True

    fixed = occ | border
    values = np.zeros((h, w), dtype=np.float64)
    frontier = np.zeros((h, w), dtype=bool)
    for line in lines:
        xs, ys = line.cells[:, 0], line.cells[:, 1]
        keep = ~fixed[ys, xs]
        values[ys[keep], xs[keep]] = -line.length
        frontier[ys[keep], xs[keep]] = True
    fixed |= frontier

    domain = (belief.cells == CellState.FREE) & ~fixed
    if not domain.any() and not frontier.any():
        raise EmptyProblemError("no free cells and no frontier lines")
    return BoundaryConditions(fixed, values, domain, frontier, belief.resolution)


@njit(cache=True)
def _bfs_hops(domain, seeds_r, seeds_c):
    """4-adjacency hop distance from the seed set, walking domain cells only.

    Returns -1 for unreached cells. Seeds themselves get 0 (they are usually
    fixed cells outside the domain)."""
    h, w = domain.shape
    dist = np.full((h, w), -1, dtype=np.int32)
    cap = h * w + seeds_r.size
    qr = np.empty(cap, dtype=np.int32)
    qc = np.empty(cap, dtype=np.int32)
    tail = 0
    for k in range(seeds_r.size):
        r, c = seeds_r[k], seeds_c[k]
        if 0 <= r < h and 0 <= c < w and dist[r, c] < 0:
            dist[r, c] = 0
            qr[tail] = r
            qc[tail] = c
            tail += 1
    head = 0
    while head < tail:
        r = qr[head]
        c = qc[head]
        head += 1
        d = dist[r, c] + 1
        for i in range(4):
            if i == 0:
                nr, nc = r + 1, c
            elif i == 1:
                nr, nc = r - 1, c
            elif i == 2:
                nr, nc = r, c + 1
            else:
                nr, nc = r, c - 1
            if 0 <= nr < h and 0 <= nc < w and domain[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = d
                qr[tail] = nr
                qc[tail] = nc
                tail += 1
    return dist


def spreading_order(bc: BoundaryConditions, seeds: np.ndarray) -> np.ndarray:
    """Domain cells ordered by BFS hop distance from the seed cells.

    Ties break row-major; domain cells unreachable from the seeds are
    appended in row-major order. Returns an (N, 2) permutation of the domain.
    """
    seeds = np.asarray(seeds)
    if seeds.size == 0:
        raise HarmonicError("spreading order needs at least one seed cell")
    dist = _bfs_hops(
        bc.domain_mask,
        seeds[:, 1].astype(np.int32),
        seeds[:, 0].astype(np.int32),
    )
    ys, xs = np.nonzero(bc.domain_mask)
    d = dist[ys, xs].astype(np.int64)
    d[d < 0] = np.iinfo(np.int64).max  # unreached go last, row-major among themselves
    flat = ys.astype(np.int64) * bc.domain_mask.shape[1] + xs
    order = np.lexsort((flat, d))
    return np.column_stack([xs[order], ys[order]])


@njit(cache=True)
def _sor_sweep(values, has_value, order_r, order_c, omega):
    """One Gauss-Seidel sweep with relaxation; returns the max |update|."""
    h, w = values.shape
    max_delta = 0.0
    for k in range(order_r.size):
        r = order_r[k]
        c = order_c[k]
        s = 0.0
        n = 0
        if r + 1 < h and has_value[r + 1, c]:
            s += values[r + 1, c]
            n += 1
        if r - 1 >= 0 and has_value[r - 1, c]:
            s += values[r - 1, c]
            n += 1
        if c + 1 < w and has_value[r, c + 1]:
            s += values[r, c + 1]
            n += 1
        if c - 1 >= 0 and has_value[r, c - 1]:
            s += values[r, c - 1]
            n += 1
        if n == 0:
            continue
        v_new = (1.0 - omega) * values[r, c] + omega * (s / n)
        d = abs(v_new - values[r, c])
        if d > max_delta:
            max_delta = d
        values[r, c] = v_new
    return max_delta


def _ordering_cells(bc: BoundaryConditions, ordering: UpdateOrdering) -> np.ndarray:
    if isinstance(ordering, Spreading) and ordering.seeds.size > 0:
        return spreading_order(bc, ordering.seeds)
    return bc.domain_cells()


def solve_sor(
    prev: HarmonicField | None,
    bc: BoundaryConditions,
    params: SorParams = SorParams(),
    ordering: UpdateOrdering = RowMajor(),
) -> HarmonicField:
    """Solve the discrete Laplace problem by SOR.

    Each sweep updates every domain cell once, in the given ordering, with
    v <- (1-omega) v + omega * mean(participating 4-neighbors). Sweeping
    stops when the largest update falls below ``params.tolerance``; the
    returned field carries the sweep count and a converged flag.

    ``prev`` (if given) warm-starts cells it has values for; remaining domain
    cells initialize to the mean of the fixed values, which makes a constant
    boundary solve exactly in one sweep.
    """
    values = bc.fixed_values.copy()
    if bc.fixed_mask.any():
        init = float(bc.fixed_values[bc.fixed_mask].mean())
    else:
        init = 0.0
    values[bc.domain_mask] = init
    if prev is not None:
        carry = bc.domain_mask & prev.bc.has_value
        values[carry] = prev.values[carry]

    order = _ordering_cells(bc, ordering)
    if len(order) == 0:
        return HarmonicField(values, bc, True, 0)
    order_r = order[:, 1].astype(np.int32)
    order_c = order[:, 0].astype(np.int32)
    has_value = bc.has_value

    converged = False
    sweeps = 0
    while sweeps < params.max_sweeps:
        delta = _sor_sweep(values, has_value, order_r, order_c, params.omega)
        sweeps += 1
        if delta < params.tolerance:
            converged = True
            break
    return HarmonicField(values, bc, converged, sweeps)


@dataclass(frozen=True)
class SorStep:
    """One incremental boundary problem from a recorded run."""

    bc: BoundaryConditions
    seeds: np.ndarray  # fixed cells newly created or changed since the previous step


@dataclass(frozen=True)
class OrderingComparison:
    rowmajor_sweeps: int
    spreading_sweeps: int

    @property
    def ratio(self) -> float:
        if self.spreading_sweeps == 0:
            return 1.0
        return self.rowmajor_sweeps / self.spreading_sweeps


def count_sweeps_comparison(
    bc_sequence: list[SorStep],
    params: SorParams = SorParams(),
    warm: HarmonicField | None = None,
) -> OrderingComparison:
    """Replay a recorded sequence of incremental boundary problems under both
    update orderings and total the sweeps each needed.

    Each lane chains its own warm starts (``warm`` seeds both lanes, e.g. the
    solution preceding the first incremental step). Steps with empty seed
    sets fall back to row-major in the spreading lane.
    """
    field_rm = warm
    field_sp = warm
    total_rm = 0
    total_sp = 0
    for step in bc_sequence:
        field_rm = solve_sor(field_rm, step.bc, params, RowMajor())
        total_rm += field_rm.iterations
        if step.seeds.size > 0:
            ordering: UpdateOrdering = Spreading(step.seeds)
        else:
            ordering = RowMajor()
        field_sp = solve_sor(field_sp, step.bc, params, ordering)
        total_sp += field_sp.iterations
    return OrderingComparison(total_rm, total_sp)


def changed_fixed_cells(prev: BoundaryConditions | None, bc: BoundaryConditions) -> np.ndarray:
    """Fixed cells newly created or whose value changed since ``prev``.

    With no previous problem every fixed cell counts as new. Used as the
    seed set for the spreading ordering.
    """
    if prev is None:
        changed = bc.fixed_mask
    else:
        changed = bc.fixed_mask & (
            ~prev.fixed_mask | (bc.fixed_values != prev.fixed_values)
        )
    ys, xs = np.nonzero(changed)
    return np.column_stack([xs, ys])


_DIAG_STEPS = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
_ORTHO_STEPS = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def descend_path(field: HarmonicField, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Steepest-descent path over the discrete field, from a domain cell to a
    fixed frontier-A cell.

    Each step moves to the 8-neighbor (domain or fixed-frontier) with the
    strictly smallest value, ties broken by smallest row-major index.
    Diagonal steps are taken only when at least one of the two adjacent
    orthogonal cells is itself steppable, so the path cannot slip through a
    sealed corner. Raises DescentStuckError at a local minimum that is not a
    frontier cell (degenerate field, e.g. unconverged or identically zero).
    """
    bc = field.bc
    h, w = bc.domain_mask.shape
    cx, cy = start
    if not bc.domain_mask[cy, cx]:
        raise HarmonicError(f"descent start {start} not in the solve domain")
    path = [(cx, cy)]
    steppable = bc.domain_mask | bc.frontier_mask
    for _ in range(int(bc.domain_mask.sum()) + 1):
        if bc.frontier_mask[cy, cx]:
            return path
        here = field.values[cy, cx]
        best = None
        best_key = None
        for dx, dy in _ORTHO_STEPS + _DIAG_STEPS:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < w and 0 <= ny < h) or not steppable[ny, nx]:
                continue
            if dx != 0 and dy != 0:
                # No slipping between two diagonally touching walls.
                if not (steppable[cy, nx] or steppable[ny, cx]):
                    continue
            v = field.values[ny, nx]
            if v >= here:
                continue
            key = (v, ny * w + nx)
            if best_key is None or key < best_key:
                best = (nx, ny)
                best_key = key
        if best is None:
            raise DescentStuckError(f"no strictly smaller neighbor at {(cx, cy)}")
        cx, cy = best
        path.append((cx, cy))
    raise DescentStuckError("descent exceeded the domain size without reaching a frontier")


def gradient_at(field: HarmonicField, cell: tuple[int, int]) -> tuple[float, float]:
    """Central-difference gradient at a domain cell, for visualization export.

    Falls back to a one-sided difference when a neighbor carries no value.
    """
    cx, cy = cell
    bc = field.bc
    h, w = bc.domain_mask.shape
    res = bc.resolution
    v = field.values

    def axis(dplus: tuple[int, int], dminus: tuple[int, int]) -> float:
        px, py = cx + dplus[0], cy + dplus[1]
        mx, my = cx + dminus[0], cy + dminus[1]
        has_p = 0 <= px < w and 0 <= py < h and bc.has_value[py, px]
        has_m = 0 <= mx < w and 0 <= my < h and bc.has_value[my, mx]
        if has_p and has_m:
            return (v[py, px] - v[my, mx]) / (2 * res)
        if has_p:
            return (v[py, px] - v[cy, cx]) / res
        if has_m:
            return (v[cy, cx] - v[my, mx]) / res
        return 0.0

    return (axis((1, 0), (-1, 0)), axis((0, 1), (0, -1)))


def export_field_csv(field: HarmonicField) -> str:
    """Field snapshot for visualization tooling: cell_x,cell_y,value,grad_x,grad_y."""
    buf = io.StringIO()
    buf.write("cell_x,cell_y,value,grad_x,grad_y\n")
    ys, xs = np.nonzero(field.bc.domain_mask)
    for cx, cy in zip(xs, ys):
        gx, gy = gradient_at(field, (int(cx), int(cy)))
        buf.write(f"{cx},{cy},{field.values[cy, cx]:.9g},{gx:.9g},{gy:.9g}\n")
    return buf.getvalue()
