"""A ball bouncing elastically inside a random convex quadrilateral room.

The simulator is event driven: the ball moves in straight segments between
wall contacts, and positions are sampled at fixed arc-length spacing by
interpolating inside segments. Everything here is a pure function of the
inputs and the supplied random generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from ..datasets import TaskDataset

FAMILY = "bounce"
BALL_RADIUS = 0.075
SPACING = 0.1
MAX_REJECTIONS = 10000


class GeneratorError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    pass


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def is_strictly_convex(vertices) -> bool:
    """Counter-clockwise and every turn strictly left."""
    v = np.asarray(vertices, dtype=np.float64)
    k = len(v)
    return k >= 3 and all(_cross(v[i], v[(i + 1) % k], v[(i + 2) % k]) > 0 for i in range(k))


def canonical_order(vertices) -> np.ndarray:
    """Sort by angle about the centroid (CCW), starting at the lowest (y, then x) vertex."""
    v = np.asarray(vertices, dtype=np.float64)
    c = v.mean(axis=0)
    v = v[np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]), kind="stable")]
    start = min(range(len(v)), key=lambda i: (v[i, 1], v[i, 0]))
    return np.roll(v, -start, axis=0)


def _edge_lines(v: np.ndarray):
    """Inward unit normals and offsets: inside means ``n . p - d >= 0``."""
    lines = []
    pts = [(float(x), float(y)) for x, y in v]
    k = len(pts)
    for i in range(k):
        a, b = pts[i], pts[(i + 1) % k]
        ex, ey = b[0] - a[0], b[1] - a[1]
        length = math.hypot(ex, ey)
        nx, ny = -ey / length, ex / length
        lines.append((nx, ny, nx * a[0] + ny * a[1], length, ex / length, ey / length))
    return lines


def inradius(vertices) -> float:
    """Radius of the largest disk inside a convex polygon (Chebyshev radius).

    The optimum of the underlying linear program sits where three edge
    constraints are tight, so all triples are enumerated.
    """
    v = np.asarray(vertices, dtype=np.float64)
    lines = _edge_lines(v)
    best = 0.0
    k = len(lines)
    for i in range(k):
        for j in range(i + 1, k):
            for m in range(j + 1, k):
                A = np.array([[lines[q][0], lines[q][1], -1.0] for q in (i, j, m)])
                d = np.array([lines[q][2] for q in (i, j, m)])
                if abs(np.linalg.det(A)) < 1e-14:
                    continue
                cx, cy, r = np.linalg.solve(A, d)
                if r <= best:
                    continue
                if all(ln[0] * cx + ln[1] * cy - ln[2] >= r - 1e-12 for ln in lines):
                    best = float(r)
    return best


@dataclass(frozen=True)
class PolygonRoom:
    vertices: np.ndarray  # (4, 2), canonical counter-clockwise order
    room_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_lines", _edge_lines(v))

    @classmethod
    def from_points(cls, points, room_id: int = 0) -> "PolygonRoom":
        return cls(canonical_order(points), room_id)

    def is_valid(self, radius: float = BALL_RADIUS) -> bool:
        v = self.vertices
        return (
            is_strictly_convex(v)
            and bool(((v >= 0) & (v <= 1)).all())
            and inradius(v) > radius
        )

    def clearance(self, p) -> float:
        """Signed distance from ``p`` to the nearest wall line (positive inside)."""
        return min(n[0] * p[0] + n[1] * p[1] - n[2] for n in self._lines)

    def clearances(self, points) -> np.ndarray:
        """:meth:`clearance` for each row of an ``(m, 2)`` array."""
        P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        L = np.array([line[:3] for line in self._lines])
        return np.min(P @ L[:, :2].T - L[:, 2], axis=1)

    def contains_ball(self, p, radius: float = BALL_RADIUS, tol: float = 0.0) -> bool:
        return self.clearance(p) >= radius - tol

    def eroded(self, radius: float = BALL_RADIUS) -> np.ndarray:
        """Vertices of the region where a ball of ``radius`` fits (half-plane clipping)."""
        poly = [tuple(p) for p in self.vertices]
        for nx, ny, d, *_ in self._lines:
            out = []
            for k in range(len(poly)):
                a, b = poly[k], poly[(k + 1) % len(poly)]
                fa = nx * a[0] + ny * a[1] - d - radius
                fb = nx * b[0] + ny * b[1] - d - radius
                if fa >= 0:
                    out.append(a)
                if (fa >= 0) != (fb >= 0):
                    t = fa / (fa - fb)
                    out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
            poly = out
            if not poly:
                break
        return np.array(poly).reshape(-1, 2)

    def nearest_vertex_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        d = np.linalg.norm(pts[:, None, :] - self.vertices[None, :, :], axis=2)
        return d.min(axis=1)

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def hidden_params(self) -> np.ndarray:
        return self.vertices.reshape(-1).copy()


def gen_room(rng: np.random.Generator, room_id: int = 0, radius: float = BALL_RADIUS) -> PolygonRoom:
    for _ in range(MAX_REJECTIONS):
        room = PolygonRoom.from_points(rng.uniform(0.0, 1.0, size=(4, 2)), room_id)
        if is_strictly_convex(room.vertices) and inradius(room.vertices) > radius:
            return room
    raise GeneratorError(f"no valid room after {MAX_REJECTIONS} draws")


@dataclass(frozen=True)
class BallState:
    position: tuple[float, float]
    velocity: tuple[float, float]


def random_state(rng: np.random.Generator, room: PolygonRoom, speed: float = 1.0,
                 radius: float = BALL_RADIUS) -> BallState:
    """Center uniform over the eroded room, direction uniform on the circle."""
    inner = room.eroded(radius)
    if len(inner) < 3:
        raise GeneratorError("the ball does not fit in this room")
    lo, hi = inner.min(axis=0), inner.max(axis=0)
    for _ in range(MAX_REJECTIONS):
        p = rng.uniform(lo, hi)
        if room.contains_ball(p, radius):
            break
    else:
        raise GeneratorError("could not place the ball inside the room")
    a = rng.uniform(0.0, 2 * math.pi)
    return BallState((float(p[0]), float(p[1])), (speed * math.cos(a), speed * math.sin(a)))


@dataclass(frozen=True)
class WallEvent:
    arc: float
    position: tuple[float, float]
    v_before: tuple[float, float]
    v_after: tuple[float, float]
    normal: tuple[float, float]
    wall: int  # edge index; vertices are encoded as -(index + 1)


@dataclass
class Trajectory:
    samples: np.ndarray  # (K, 2) positions at arc length 0, spacing, 2*spacing, ...
    room_id: int
    spacing: float
    events: list[WallEvent] = field(default_factory=list, repr=False)
    final: Optional[BallState] = None
    path_length: float = 0.0


@njit(cache=True)
def _vertex_hit(px, py, vx, vy, qx, qy, r):
    """Earliest t >= 0 at which the circle touches point q while approaching it."""
    dx, dy = px - qx, py - qy
    b = dx * vx + dy * vy
    if b >= 0:
        return np.inf
    a = vx * vx + vy * vy
    c = dx * dx + dy * dy - r * r
    disc = b * b - a * c
    if disc < 0:
        return np.inf
    return max((-b - math.sqrt(disc)) / a, 0.0)


def _grow(buf, n):
    if n < buf.shape[0]:
        return buf
    out = np.empty((2 * buf.shape[0], buf.shape[1]))
    out[: buf.shape[0]] = buf
    return out


_grow = njit(cache=True)(_grow)

# event rows: arc, position (2), velocity before (2), after (2), normal (2), wall
_EVENT_COLS = 10


@njit(cache=True)
def _event_loop(lines, verts, px, py, vx, vy, path_length, spacing, radius, max_events, keep_events):
    """Straight segments between contacts; returns samples, event rows,
    final state, arc length and a status (0 ok, 1 stalled)."""
    speed = math.hypot(vx, vy)
    n_walls = lines.shape[0]
    samples = np.empty((64, 2))
    events = np.empty((16 if keep_events else 1, _EVENT_COLS))
    n_samples = 0
    n_events = 0
    arc = 0.0
    k = 0
    stalled = 0
    stall_advance = 0.0
    status = 0
    while True:
        t_hit = np.inf
        wall, hx, hy = 0, 0.0, 0.0
        found = False
        for i in range(n_walls):
            nx, ny, d, length, tx, ty = lines[i, 0], lines[i, 1], lines[i, 2], lines[i, 3], lines[i, 4], lines[i, 5]
            nv = nx * vx + ny * vy
            if nv >= 0:
                continue
            gap = nx * px + ny * py - d - radius
            t = max(gap, 0.0) / -nv
            if t >= t_hit:
                continue
            # contact point must project inside the wall segment
            cx, cy = px + vx * t, py + vy * t
            along = (cx - verts[i, 0]) * tx + (cy - verts[i, 1]) * ty
            if 0.0 <= along <= length:
                t_hit, wall, hx, hy, found = t, i, nx, ny, True
            else:
                for j in (i, (i + 1) % n_walls):
                    qx, qy = verts[j, 0], verts[j, 1]
                    tv = _vertex_hit(px, py, vx, vy, qx, qy, radius)
                    if tv < t_hit:
                        ex, ey = px + vx * tv - qx, py + vy * tv - qy
                        norm = math.hypot(ex, ey)
                        t_hit, wall, hx, hy, found = tv, -(j + 1), ex / norm, ey / norm, True

        t_end = (path_length - arc) / speed
        seg = min(t_hit, t_end)
        arc_after = arc + speed * seg if seg < t_end else path_length
        while True:
            target = k * spacing
            if target > arc_after + 1e-12:
                break
            dt = min(max((target - arc) / speed, 0.0), seg)
            samples = _grow(samples, n_samples)
            samples[n_samples, 0] = px + vx * dt
            samples[n_samples, 1] = py + vy * dt
            n_samples += 1
            k += 1
        px, py = px + vx * seg, py + vy * seg
        advance = speed * seg
        arc = arc_after
        if t_end <= t_hit or not found:
            break

        dot = vx * hx + vy * hy
        nvx, nvy = vx - 2.0 * dot * hx, vy - 2.0 * dot * hy
        if keep_events:
            events = _grow(events, n_events)
            row = events[n_events]
            row[0], row[1], row[2] = arc, px, py
            row[3], row[4], row[5], row[6] = vx, vy, nvx, nvy
            row[7], row[8], row[9] = hx, hy, wall
        vx, vy = nvx, nvy
        n_events += 1

        if advance < 1e-12:
            stalled += 1
            stall_advance += advance
            if stalled >= 3 and stall_advance < 1e-12:
                status = 1
                break
        else:
            stalled, stall_advance = 0, 0.0
        if max_events >= 0 and n_events >= max_events:
            break
    n_kept = n_events if keep_events else 0
    final = np.array([px, py, vx, vy])
    return samples[:n_samples].copy(), events[:n_kept].copy(), final, arc, status


def simulate(room: PolygonRoom, s0: BallState, path_length: float, spacing: float = SPACING,
             radius: float = BALL_RADIUS, max_events: Optional[int] = None,
             keep_events: bool = True) -> Trajectory:
    """Sample the ball's center every ``spacing`` of arc length up to ``path_length``.

    With ``max_events`` set, the run also stops right after that many wall
    contacts (used for long conservation runs).
    """
    px, py = map(float, s0.position)
    vx, vy = map(float, s0.velocity)
    if math.hypot(vx, vy) <= 0:
        raise SimulationError("ball speed must be positive")
    if not room.contains_ball((px, py), radius, tol=1e-9):
        raise SimulationError(f"initial position {s0.position} is outside the eroded room")
    lines = np.array(room._lines, dtype=np.float64)
    samples, ev, final, arc, status = _event_loop(
        lines, room.vertices, px, py, vx, vy, float(path_length), float(spacing), float(radius),
        -1 if max_events is None else int(max_events), bool(keep_events))
    fx, fy, fvx, fvy = (float(x) for x in final)
    if status == 1:
        raise SimulationError(
            f"no progress over repeated contacts at position ({fx!r}, {fy!r}), "
            f"velocity ({fvx!r}, {fvy!r}), room {room.vertices.tolist()}"
        )
    events = [WallEvent(r[0], (r[1], r[2]), (r[3], r[4]), (r[5], r[6]), (r[7], r[8]), int(r[9]))
              for r in ev.tolist()]
    return Trajectory(samples, room.room_id, spacing, events, BallState((fx, fy), (fvx, fvy)), arc)


def trajectory_path_between(traj: Trajectory, a: int, b: int) -> float:
    """Arc length traveled between samples ``a`` and ``b`` (via the event log)."""
    positions = [traj.samples[a]]
    lo, hi = a * traj.spacing, b * traj.spacing
    positions += [np.array(e.position) for e in traj.events if lo < e.arc < hi]
    positions.append(traj.samples[b])
    return float(sum(np.linalg.norm(q - p) for p, q in zip(positions[:-1], positions[1:])))


WINDOW = 3


def windows(samples: np.ndarray, width: int = WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows: ``width`` consecutive positions in, next position out."""
    n = len(samples) - width
    X = np.stack([samples[i : i + width].reshape(-1) for i in range(n)])
    Y = samples[width:].copy()
    return X, Y


def gen_bounce_dataset(rng: np.random.Generator, steps: int = 20, n_trajectories: int = 10,
                       task_id: int = 0, seed: int = 0, room: Optional[PolygonRoom] = None,
                       speed: float = 1.0) -> TaskDataset:
    """One room, several trajectories of ``steps`` samples each, cut into windows.

    Rows alternate between the train split (even row index) and the test
    split (odd).
    """
    if steps < WINDOW + 1:
        raise ValueError(f"need at least {WINDOW + 1} samples per trajectory, got {steps}")
    room = room if room is not None else gen_room(rng, task_id)
    xs, ys = [], []
    for _ in range(n_trajectories):
        traj = simulate(room, random_state(rng, room, speed), (steps - 1) * SPACING, keep_events=False)
        X, Y = windows(traj.samples[:steps])
        xs.append(X)
        ys.append(Y)
    X, Y = np.concatenate(xs), np.concatenate(ys)
    rows = np.arange(X.shape[0])
    return TaskDataset(X, Y, rows[0::2], rows[1::2], FAMILY, task_id, seed, room.hidden_params())


def room_of(dataset: TaskDataset) -> PolygonRoom:
    return PolygonRoom(dataset.oracle_params().reshape(-1, 2), dataset.task_id)


def task_rng(seed: int, task_id: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1000 + stream, task_id]))


def bounce_ensemble(seed: int, count: int, stream: int = 0, **kw) -> list[TaskDataset]:
    return [gen_bounce_dataset(task_rng(seed, t, stream), task_id=t, seed=seed, **kw) for t in range(count)]


# -- closed-loop rollouts ---------------------------------------------------------

@dataclass
class RolloutResult:
    distances: np.ndarray  # (K,)
    errors: np.ndarray     # (n_starts, K) Euclidean error per start and distance

    @property
    def curve(self) -> np.ndarray:
        return self.errors.mean(axis=0)


def rollout_eval(predictor: Callable[[np.ndarray], np.ndarray], room: PolygonRoom,
                 starts: Sequence[BallState], horizon: float = 1.0,
                 spacing: float = SPACING) -> RolloutResult:
    """Feed the predictor its own outputs and measure drift from the true path.

    ``predictor`` maps an ``M x 6`` batch of windows to ``M x 2`` positions.
    The first window comes from the simulator; distance 0.1 is the first
    prediction.
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if isinstance(starts, BallState):
        starts = [starts]
    n_steps = int(round(horizon / spacing))
    truth = np.stack([
        simulate(room, s, (WINDOW - 1 + n_steps) * spacing, spacing, keep_events=False).samples[: WINDOW + n_steps]
        for s in starts
    ])
    window = truth[:, :WINDOW, :].copy()
    errors = np.zeros((len(starts), n_steps))
    for step in range(n_steps):
        pred = np.asarray(predictor(window.reshape(len(starts), -1)), dtype=np.float64).reshape(-1, 2)
        errors[:, step] = np.linalg.norm(pred - truth[:, WINDOW + step, :], axis=1)
        window = np.concatenate([window[:, 1:, :], pred[:, None, :]], axis=1)
    return RolloutResult(spacing * np.arange(1, n_steps + 1), errors)
