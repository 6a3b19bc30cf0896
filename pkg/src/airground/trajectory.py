"""Piecewise polynomial trajectories in Bernstein (Bezier) form.

Both vehicle planners emit this representation: the curve of each segment
lies in the convex hull of its control points, so box containment of the
control points certifies containment of the whole segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np


class TrajectoryError(Exception):
    pass


@dataclass(frozen=True)
class MotionState:
    """Planar position / velocity / acceleration boundary state."""

    pos: tuple[float, float]
    vel: tuple[float, float] = (0.0, 0.0)
    acc: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def at_rest(cls, pos: tuple[float, float]) -> "MotionState":
        return cls(pos=(float(pos[0]), float(pos[1])))


@dataclass
class BezierSegment:
    control_points: np.ndarray  # (degree + 1, 2)
    duration: float

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.duration <= 0:
            raise TrajectoryError("segment duration must be positive")
        if self.control_points.ndim != 2 or self.control_points.shape[1] != 2:
            raise TrajectoryError("control points must be an (n+1, 2) array")

    @property
    def degree(self) -> int:
        return len(self.control_points) - 1


@dataclass(frozen=True)
class TrajectorySample:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    clamped: bool = False


@dataclass
class PiecewiseTrajectory:
    segments: list[BezierSegment]

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].control_points[0]

    @property
    def end(self) -> np.ndarray:
        return self.segments[-1].control_points[-1]


def bernstein_matrix(degree: int, u: np.ndarray) -> np.ndarray:
    """Rows of Bernstein basis values B_k^degree(u) for each parameter in u."""
    u = np.asarray(u, dtype=np.float64)
    k = np.arange(degree + 1)
    binom = np.array([comb(degree, i) for i in k], dtype=np.float64)
    return binom * np.power.outer(u, k) * np.power.outer(1.0 - u, degree - k)


def hodograph(points: np.ndarray, duration: float) -> np.ndarray:
    """Control points of the time-derivative Bezier (one degree lower)."""
    n = len(points) - 1
    return n * np.diff(points, axis=0) / duration


def _locate(traj: PiecewiseTrajectory, t: float) -> tuple[int, float, bool]:
    """Segment index and local time for a global time, clamping out-of-range t."""
    clamped = False
    if t < 0:
        t, clamped = 0.0, True
    total = traj.total_duration
    if t > total:
        t, clamped = total, True
    acc = 0.0
    for i, seg in enumerate(traj.segments):
        if t <= acc + seg.duration or i == len(traj.segments) - 1:
            return i, min(t - acc, seg.duration), clamped
        acc += seg.duration
    raise TrajectoryError("unreachable")


def sample(traj: PiecewiseTrajectory, t: float) -> TrajectorySample:
    """Evaluate position, velocity, acceleration at time t (clamped to the
    trajectory's time range, with a flag when clamping occurred)."""
    i, local, clamped = _locate(traj, t)
    seg = traj.segments[i]
    u = np.array([local / seg.duration])
    p = seg.control_points
    v = hodograph(p, seg.duration)
    a = hodograph(v, seg.duration)
    pos = (bernstein_matrix(seg.degree, u) @ p)[0]
    vel = (bernstein_matrix(seg.degree - 1, u) @ v)[0]
    acc = (bernstein_matrix(seg.degree - 2, u) @ a)[0]
    return TrajectorySample(pos, vel, acc, clamped)


def sample_many(traj: PiecewiseTrajectory, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sampling; returns (pos, vel, acc) arrays of shape (len(ts), 2)."""
    ts = np.asarray(ts, dtype=np.float64)
    pos = np.empty((len(ts), 2))
    vel = np.empty((len(ts), 2))
    acc = np.empty((len(ts), 2))
    starts = np.cumsum([0.0] + [s.duration for s in traj.segments])
    idx = np.clip(np.searchsorted(starts[1:-1], ts, side="right"), 0, len(traj.segments) - 1)
    for i, seg in enumerate(traj.segments):
        m = idx == i
        if not m.any():
            continue
        local = np.clip(ts[m] - starts[i], 0.0, seg.duration)
        u = local / seg.duration
        p = seg.control_points
        v = hodograph(p, seg.duration)
        a = hodograph(v, seg.duration)
        pos[m] = bernstein_matrix(seg.degree, u) @ p
        vel[m] = bernstein_matrix(seg.degree - 1, u) @ v
        acc[m] = bernstein_matrix(seg.degree - 2, u) @ a
    return pos, vel, acc


def power_to_bezier(coeffs: np.ndarray, duration: float) -> np.ndarray:
    """Convert power-basis coefficients in local time t to Bezier control points.

    ``coeffs`` is (degree + 1, dims) with p(t) = sum_k coeffs[k] t^k for
    t in [0, duration].
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = len(coeffs) - 1
    # Rescale to the unit parameter u = t / duration.
    scaled = coeffs * (duration ** np.arange(n + 1))[:, None]
    points = np.zeros_like(scaled)
    for j in range(n + 1):
        for k in range(j + 1):
            points[j] += comb(j, k) / comb(n, k) * scaled[k]
    return points


def bezier_to_power(points: np.ndarray, duration: float) -> np.ndarray:
    """Inverse of power_to_bezier: coefficients of p(t) in local time t."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points) - 1
    coeffs = np.zeros_like(points)
    for k in range(n + 1):
        for i in range(k + 1):
            coeffs[k] += (-1.0) ** (k - i) * comb(k, i) * points[i]
        coeffs[k] *= comb(n, k)
    return coeffs / (duration ** np.arange(n + 1))[:, None]


def speed_squared_bound(traj: PiecewiseTrajectory) -> float:
    """Certified upper bound on max squared speed along the trajectory.

    The squared-speed curve of each segment is itself a Bernstein polynomial
    (degree 2(n-1)); its largest coefficient bounds its maximum.
    """
    bound = 0.0
    for seg in traj.segments:
        v = hodograph(seg.control_points, seg.duration)
        m = len(v) - 1
        for k in range(2 * m + 1):
            coef = 0.0
            for i in range(max(0, k - m), min(m, k) + 1):
                w = comb(m, i) * comb(m, k - i) / comb(2 * m, k)
                coef += w * float(v[i] @ v[k - i])
            bound = max(bound, coef)
    return bound


def export_trajectory_csv(traj: PiecewiseTrajectory, rate: float = 100.0) -> str:
    """CSV rows ``t,x,y,vx,vy,ax,ay`` sampled at ``rate`` Hz, endpoint included."""
    total = traj.total_duration
    n = max(int(np.floor(total * rate)), 0)
    ts = np.arange(n + 1) / rate
    if ts[-1] < total - 1e-12:
        ts = np.append(ts, total)
    pos, vel, acc = sample_many(traj, ts)
    lines = ["t,x,y,vx,vy,ax,ay"]
    for t, p, v, a in zip(ts, pos, vel, acc):
        lines.append(
            f"{t:.6g},{p[0]:.9g},{p[1]:.9g},{v[0]:.9g},{v[1]:.9g},{a[0]:.9g},{a[1]:.9g}"
        )
    return "\n".join(lines) + "\n"
