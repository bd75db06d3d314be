"""Scripted expert demonstrations: grid A* + line-of-sight smoothing + pursuit tracking."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControllerGains, position_controller
from .env import (
    MazeSpec,
    goal_reached,
    point_feasible,
    points_feasible,
    sample_goal,
    sample_start,
    segment_feasible,
    step_contact,
)
from .errors import (
    FormatError,
    GoalNotReached,
    InfeasibleEndpoint,
    NoPath,
    RegionBlockedError,
    TooShort,
)
from .trajectory import Trajectory

DATASET_FORMAT = "cdrb-dataset"
DATASET_VERSION = 1

EXPERT_GAINS = ControllerGains(kp=9.0, kd=3.0)
CLEARANCE = 0.25
GRID_RES = 50
LOOKAHEAD = 0.7
SETTLE_RADIUS = 0.1
# demos end at rest so terminal-state padding is dynamically consistent and matches
# the zero-velocity goal that planners pin
SETTLE_SPEED = 0.05
STEP_CAP = 400


# ---------------------------------------------------------------------------
# grid search


@dataclass
class OccupancyGrid:
    free: np.ndarray  # bool, indexed [ix, iy]
    xmin: float
    ymin: float
    dx: float
    dy: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.free.shape

    def center(self, ix: int, iy: int) -> np.ndarray:
        return np.array([self.xmin + (ix + 0.5) * self.dx, self.ymin + (iy + 0.5) * self.dy])

    def cell(self, p) -> tuple[int, int]:
        nx, ny = self.free.shape
        ix = min(max(int((p[0] - self.xmin) / self.dx), 0), nx - 1)
        iy = min(max(int((p[1] - self.ymin) / self.dy), 0), ny - 1)
        return ix, iy


def build_occupancy_grid(maze: MazeSpec, resolution: int | tuple[int, int] = GRID_RES) -> OccupancyGrid:
    """Grid whose cells are free iff their centre is feasible."""
    nx, ny = (resolution, resolution) if isinstance(resolution, int) else resolution
    if nx < 8 or ny < 8:
        raise ValueError("grid resolution must be at least 8 per axis")
    b = maze.bounds
    dx, dy = (b.xmax - b.xmin) / nx, (b.ymax - b.ymin) / ny
    xs = b.xmin + (np.arange(nx) + 0.5) * dx
    ys = b.ymin + (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    free = points_feasible(np.stack([gx, gy], axis=-1), maze)
    return OccupancyGrid(free, b.xmin, b.ymin, dx, dy)


_MOVES = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def grid_neighbors(free: np.ndarray, node: tuple[int, int]):
    """8-connected moves; diagonals may not cut a blocked corner."""
    nx, ny = free.shape
    i, j = node
    for di, dj in _MOVES:
        u, v = i + di, j + dj
        if not (0 <= u < nx and 0 <= v < ny) or not free[u, v]:
            continue
        if di and dj and not (free[i + di, j] and free[i, j + dj]):
            continue
        yield (u, v), di, dj


def astar_path(grid: OccupancyGrid, start, goal) -> list[np.ndarray]:
    """Shortest 8-connected path between the cells containing ``start`` and ``goal``.

    Returns cell-centre waypoints including both endpoint cells.
    """
    s, g = grid.cell(start), grid.cell(goal)
    if not grid.free[s] or not grid.free[g]:
        raise InfeasibleEndpoint(f"endpoint cell blocked: start={s} goal={g}")
    if s == g:
        return [grid.center(*s)]

    def h(n):
        return math.hypot((n[0] - g[0]) * grid.dx, (n[1] - g[1]) * grid.dy)

    g_cost = {s: 0.0}
    parent = {}
    heap = [(h(s), s[0], s[1])]
    closed = set()
    while heap:
        _, i, j = heapq.heappop(heap)
        node = (i, j)
        if node in closed:
            continue
        if node == g:
            break
        closed.add(node)
        for nb, di, dj in grid_neighbors(grid.free, node):
            if nb in closed:
                continue
            cost = g_cost[node] + math.hypot(di * grid.dx, dj * grid.dy)
            if cost < g_cost.get(nb, math.inf):
                g_cost[nb] = cost
                parent[nb] = node
                heapq.heappush(heap, (cost + h(nb), nb[0], nb[1]))
    else:
        raise NoPath(f"no path from cell {s} to cell {g}")
    path = [g]
    while path[-1] != s:
        path.append(parent[path[-1]])
    return [grid.center(*n) for n in reversed(path)]


def path_cost(points) -> float:
    pts = np.asarray(points, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1))) if len(pts) > 1 else 0.0


def shortcut(points: list[np.ndarray], maze: MazeSpec) -> list[np.ndarray]:
    """Greedy line-of-sight smoothing: from each anchor jump to the farthest visible point."""
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not segment_feasible(points[i], points[j], maze):
            j -= 1
        out.append(points[j])
        i = j
    return out


# ---------------------------------------------------------------------------
# demonstrations


def plan_expert_path(maze: MazeSpec, start_pos, goal, clearance: float = CLEARANCE) -> list[np.ndarray]:
    """Smoothed waypoint path from ``start_pos`` to ``goal`` keeping ``clearance`` from walls."""
    padded = maze.inflated(clearance)
    grid = _grid_cache(padded)
    cells = astar_path(grid, start_pos, goal)
    pts = [np.asarray(start_pos[:2], dtype=float)] + cells[1:-1] + [np.asarray(goal[:2], dtype=float)]
    # endpoints may sit inside the clearance band; only the real maze must hold there
    check = padded if point_feasible(pts[0], padded) and point_feasible(pts[-1], padded) else maze
    return shortcut(pts, check)


_GRIDS: dict = {}


def _grid_cache(maze: MazeSpec) -> OccupancyGrid:
    key = (maze.bounds, maze.obstacles)
    if key not in _GRIDS:
        _GRIDS[key] = build_occupancy_grid(maze, GRID_RES)
    return _GRIDS[key]


def _pursuit_target(path: np.ndarray, cum: np.ndarray, pos: np.ndarray, seg: int, lookahead: float):
    """Project ``pos`` on the polyline from segment ``seg`` onward; return carrot point and segment."""
    best_d, best_seg, best_s = math.inf, seg, cum[seg]
    for k in range(seg, min(seg + 3, len(path) - 1)):
        a, b = path[k], path[k + 1]
        ab = b - a
        L2 = float(ab @ ab)
        u = 0.0 if L2 == 0 else min(max(float((pos - a) @ ab) / L2, 0.0), 1.0)
        d = float(np.hypot(*(a + u * ab - pos)))
        if d < best_d - 1e-12:
            best_d, best_seg, best_s = d, k, cum[k] + u * math.sqrt(L2)
    s_target = min(best_s + lookahead, cum[-1])
    k = int(np.searchsorted(cum, s_target, side="right") - 1)
    k = min(k, len(path) - 2)
    seglen = cum[k + 1] - cum[k]
    u = 0.0 if seglen == 0 else (s_target - cum[k]) / seglen
    return path[k] + u * (path[k + 1] - path[k]), best_seg


def generate_demo(
    maze: MazeSpec,
    start,
    goal,
    rng: np.random.Generator | None = None,
    gains: ControllerGains = EXPERT_GAINS,
    settle_radius: float = SETTLE_RADIUS,
    step_cap: int = STEP_CAP,
    settle_speed: float = SETTLE_SPEED,
) -> Trajectory:
    """Drive from ``start`` to ``goal`` with the position controller chasing a pursuit carrot.

    The demo ends once the agent is within ``settle_radius`` of the goal and
    slower than ``settle_speed``. ``rng`` (optional) jitters the lookahead so
    demonstrations vary in speed profile.
    Raises :class:`GoalNotReached` if the step cap is hit or the agent collides.
    """
    s = np.asarray(start, dtype=float).copy()
    goal = np.asarray(goal, dtype=float)[:2]
    if goal_reached(s, goal, settle_radius) and np.hypot(*s[2:4]) <= settle_speed:
        return Trajectory(s[None, :], np.zeros((0, 2)))
    path = np.stack(plan_expert_path(maze, s[:2], goal))
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])
    lookahead = LOOKAHEAD if rng is None else LOOKAHEAD * rng.uniform(0.8, 1.2)
    states, actions = [s], []
    seg = 0
    for _ in range(step_cap):
        carrot, seg = _pursuit_target(path, cum, s[:2], seg, lookahead)
        a = position_controller(s, carrot, gains, maze.max_action)
        s, clamped = step_contact(s, a, maze)
        if clamped:
            raise GoalNotReached("expert collided with an obstacle")
        states.append(s)
        actions.append(a)
        if goal_reached(s, goal, settle_radius) and np.hypot(*s[2:4]) <= settle_speed:
            return Trajectory(np.stack(states), np.stack(actions))
    raise GoalNotReached(f"goal {goal.tolist()} not reached within {step_cap} steps")


def pad_trajectory(traj: Trajectory, length: int) -> Trajectory:
    """Repeat the terminal state (with zero actions) until ``length`` states."""
    extra = length - len(traj)
    if extra <= 0:
        return traj
    states = np.concatenate([traj.states, np.repeat(traj.states[-1:], extra, axis=0)])
    actions = None
    if traj.actions is not None:
        actions = np.concatenate([traj.actions.reshape(-1, 2), np.zeros((extra, 2))])
    return Trajectory(states, actions)


def crop_trajectory(traj: Trajectory, H: int, rng: np.random.Generator) -> Trajectory:
    if len(traj) < H + 1:
        raise TooShort(f"trajectory has {len(traj)} states, need {H + 1}")
    i0 = int(rng.integers(len(traj) - H))
    actions = None if traj.actions is None else traj.actions[i0 : i0 + H].copy()
    return Trajectory(traj.states[i0 : i0 + H + 1].copy(), actions)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DemoDataset:
    trajectories: list[Trajectory]
    maze_id: str
    horizon: int
    state_min: np.ndarray = field(default=None)
    state_max: np.ndarray = field(default=None)
    action_min: np.ndarray | None = None
    action_max: np.ndarray | None = None

    def __post_init__(self):
        if self.state_min is None or self.state_max is None:
            self.recompute_normalization()

    def recompute_normalization(self):
        S = self.all_states()
        self.state_min, self.state_max = _bounds(S)
        A = self.all_actions()
        if A is not None:
            self.action_min, self.action_max = _bounds(A)

    def all_states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories])

    def all_actions(self) -> np.ndarray | None:
        if not self.trajectories or any(t.actions is None for t in self.trajectories):
            return None
        return np.concatenate([t.actions for t in self.trajectories])

    @property
    def state_array(self) -> np.ndarray:
        """(n, H + 1, d) stacked states."""
        return np.stack([t.states for t in self.trajectories])

    def __len__(self) -> int:
        return len(self.trajectories)


def _bounds(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = X.min(axis=0), X.max(axis=0)
    # constant dimensions get a unit-wide box so normalisation stays finite
    flat = hi <= lo
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    return lo, hi


def demo_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_episode_demo(maze: MazeSpec, seed: int, index: int, max_attempts: int = 50) -> Trajectory:
    """Sample start/goal from the ``(seed, index)`` stream and return a successful demo.

    Failed expert runs are discarded and redrawn from the same stream.
    """
    rng = demo_rng(seed, index)
    for _ in range(max_attempts):
        start = sample_start(maze, rng)
        goal = sample_goal(maze, rng)
        try:
            return generate_demo(maze, start, goal, rng)
        except (GoalNotReached, NoPath, InfeasibleEndpoint):
            continue
    raise RegionBlockedError(f"expert failed {max_attempts} times for demo {index}")


def generate_dataset(maze: MazeSpec, n: int, H: int, seed: int) -> DemoDataset:
    """``n`` successful demos padded to at least ``H + 1`` states and cropped to exactly that."""
    if n < 1:
        raise ValueError("n must be at least 1")
    trajs = []
    for i in range(n):
        demo = generate_episode_demo(maze, seed, i)
        crop_rng = np.random.default_rng([seed, i, 1])
        trajs.append(crop_trajectory(pad_trajectory(demo, H + 1), H, crop_rng))
    return DemoDataset(trajs, maze.name, H)


def collect_demos(maze: MazeSpec, n: int, seed: int) -> list[Trajectory]:
    """Full-length (uncropped) demos for the same streams :func:`generate_dataset` uses."""
    return [generate_episode_demo(maze, seed, i) for i in range(n)]


# ---------------------------------------------------------------------------
# serialisation


def _floats(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def save_dataset(ds: DemoDataset, path: str | Path) -> None:
    """Line-delimited JSON: one header record, then one record per trajectory."""
    d = ds.trajectories[0].states.shape[1]
    has_actions = ds.all_actions() is not None
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "record": "header",
        "maze_id": ds.maze_id,
        "horizon": ds.horizon,
        "count": len(ds),
        "state_dim": d,
        "action_dim": 2 if has_actions else 0,
        "state_min": _floats(ds.state_min),
        "state_max": _floats(ds.state_max),
    }
    if has_actions:
        header["action_min"] = _floats(ds.action_min)
        header["action_max"] = _floats(ds.action_max)
    lines = [json.dumps(header)]
    for t in ds.trajectories:
        rec = {"record": "trajectory", "maze_id": ds.maze_id, "horizon": t.horizon, "states": _floats(t.states)}
        if t.actions is not None:
            rec["actions"] = _floats(t.actions)
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> DemoDataset:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc
    try:
        header = json.loads(lines[0])
        if header.get("format") != DATASET_FORMAT or header.get("record") != "header":
            raise FormatError(f"{path} is not a dataset file")
        if header.get("version") != DATASET_VERSION:
            raise FormatError(f"dataset version {header.get('version')} unsupported")
        d, H = int(header["state_dim"]), int(header["horizon"])
        ad = int(header.get("action_dim", 0))
        trajs = []
        for line in lines[1:]:
            rec = json.loads(line)
            states = np.array(rec["states"], dtype=float).reshape(-1, d)
            actions = np.array(rec["actions"], dtype=float).reshape(-1, ad) if "actions" in rec else None
            trajs.append(Trajectory(states, actions))
        if len(trajs) != int(header["count"]):
            raise FormatError(f"{path}: expected {header['count']} trajectories, found {len(trajs)}")
        return DemoDataset(
            trajs,
            header["maze_id"],
            H,
            np.array(header["state_min"]),
            np.array(header["state_max"]),
            np.array(header["action_min"]) if "action_min" in header else None,
            np.array(header["action_max"]) if "action_max" in header else None,
        )
    except (IndexError, KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"corrupt dataset {path}: {exc}") from exc
