"""2D point-mass maze world.

States are float arrays ``[x, y, vx, vy]``; actions are force vectors ``[fx, fy]``.
Obstacles are closed axis-aligned rectangles, so a point on an obstacle edge is
infeasible. The world box itself is closed: its boundary is feasible.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InfeasibleStateError, RegionBlockedError

SKIN = 1e-4


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError(f"non-finite rectangle {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ConfigError(f"degenerate rectangle {vals}")

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class MazeSpec:
    name: str
    bounds: Rect
    obstacles: tuple[Rect, ...]
    goals: tuple[tuple[float, float], ...]
    goal_radius: float
    start_regions: tuple[Rect, ...]
    dt: float = 0.1
    decay: float = 0.95
    max_action: float = 2.0
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.validate:
            validate_maze(self)

    @property
    def obstacle_array(self) -> np.ndarray:
        """(n_obstacles, 4) array of ``[xmin, ymin, xmax, ymax]``."""
        if not self.obstacles:
            return np.zeros((0, 4))
        return np.array([o.as_list() for o in self.obstacles], dtype=float)

    @property
    def goal_array(self) -> np.ndarray:
        return np.array(self.goals, dtype=float).reshape(-1, 2)

    def inflated(self, margin: float) -> "MazeSpec":
        """Copy with every obstacle grown by ``margin`` and the world box shrunk by it.

        Used for planning with clearance; connectivity is not re-validated.
        """
        b = self.bounds
        obstacles = tuple(
            Rect(o.xmin - margin, o.ymin - margin, o.xmax + margin, o.ymax + margin)
            for o in self.obstacles
        )
        return MazeSpec(
            name=f"{self.name}+{margin:g}",
            bounds=Rect(b.xmin + margin, b.ymin + margin, b.xmax - margin, b.ymax - margin),
            obstacles=obstacles,
            goals=self.goals,
            goal_radius=self.goal_radius,
            start_regions=self.start_regions,
            dt=self.dt,
            decay=self.decay,
            max_action=self.max_action,
            validate=False,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bounds": self.bounds.as_list(),
            "obstacles": [o.as_list() for o in self.obstacles],
            "goals": [list(g) for g in self.goals],
            "goal_radius": self.goal_radius,
            "start_regions": [r.as_list() for r in self.start_regions],
            "dt": self.dt,
            "decay": self.decay,
            "max_action": self.max_action,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MazeSpec":
        try:
            return cls(
                name=str(d["name"]),
                bounds=Rect(*map(float, d.get("bounds", [0.0, 0.0, 10.0, 10.0]))),
                obstacles=tuple(Rect(*map(float, o)) for o in d.get("obstacles", [])),
                goals=tuple((float(g[0]), float(g[1])) for g in d["goals"]),
                goal_radius=float(d.get("goal_radius", 0.5)),
                start_regions=tuple(Rect(*map(float, r)) for r in d["start_regions"]),
                dt=float(d.get("dt", 0.1)),
                decay=float(d.get("decay", 0.95)),
                max_action=float(d.get("max_action", 2.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad maze description: {exc}") from exc


# ---------------------------------------------------------------------------
# feasibility


def point_feasible(p, maze: MazeSpec) -> bool:
    x, y = float(p[0]), float(p[1])
    b = maze.bounds
    if not (b.xmin <= x <= b.xmax and b.ymin <= y <= b.ymax):
        return False
    for o in maze.obstacles:
        if o.xmin <= x <= o.xmax and o.ymin <= y <= o.ymax:
            return False
    return True


def points_feasible(points: np.ndarray, maze: MazeSpec) -> np.ndarray:
    """Vectorised :func:`point_feasible` over an ``(..., 2+)`` array."""
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    b = maze.bounds
    ok = (x >= b.xmin) & (x <= b.xmax) & (y >= b.ymin) & (y <= b.ymax)
    for o in maze.obstacles:
        ok &= ~((x >= o.xmin) & (x <= o.xmax) & (y >= o.ymin) & (y <= o.ymax))
    return ok


def _slab_interval(a, d, lo, hi):
    """Parameter interval of ``a + t d`` inside the closed slab ``[lo, hi]``."""
    if d == 0.0:
        if lo <= a <= hi:
            return -np.inf, np.inf
        return np.inf, -np.inf
    t0 = (lo - a) / d
    t1 = (hi - a) / d
    return (t0, t1) if t0 <= t1 else (t1, t0)


def segment_hits_rect(a, b, rect: Rect) -> tuple[bool, float, int]:
    """Exact closed segment vs closed rectangle test.

    Returns ``(hit, t_entry, axis)`` where ``t_entry`` in [0, 1] is the first
    parameter on the segment inside the rectangle and ``axis`` is the axis whose
    face is crossed on entry (-1 if ``a`` is already inside).
    """
    ax, ay = float(a[0]), float(a[1])
    dx, dy = float(b[0]) - ax, float(b[1]) - ay
    tx0, tx1 = _slab_interval(ax, dx, rect.xmin, rect.xmax)
    ty0, ty1 = _slab_interval(ay, dy, rect.ymin, rect.ymax)
    t_in = max(tx0, ty0, 0.0)
    t_out = min(tx1, ty1, 1.0)
    if t_in > t_out:
        return False, np.inf, -1
    if t_in == 0.0 and tx0 <= 0.0 and ty0 <= 0.0:
        axis = -1
    else:
        axis = 0 if tx0 >= ty0 else 1
    return True, t_in, axis


def segment_feasible(a, b, maze: MazeSpec) -> bool:
    """True iff the closed segment ab stays in the world box and touches no obstacle."""
    # the world box is convex, so endpoint containment suffices
    bd = maze.bounds
    for p in (a, b):
        if not (bd.xmin <= p[0] <= bd.xmax and bd.ymin <= p[1] <= bd.ymax):
            return False
    for o in maze.obstacles:
        if segment_hits_rect(a, b, o)[0]:
            return False
    return True


def segments_feasible(a: np.ndarray, b: np.ndarray, maze: MazeSpec) -> np.ndarray:
    """Vectorised :func:`segment_feasible` for ``(n, 2)`` endpoint arrays."""
    a = np.asarray(a, dtype=float)[..., :2].reshape(-1, 2)
    b = np.asarray(b, dtype=float)[..., :2].reshape(-1, 2)
    ok = points_feasible(a, maze) & points_feasible(b, maze)
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        for o in maze.obstacles:
            lo = np.array([o.xmin, o.ymin])
            hi = np.array([o.xmax, o.ymax])
            t0 = (lo - a) / d
            t1 = (hi - a) / d
            tmin = np.minimum(t0, t1)
            tmax = np.maximum(t0, t1)
            zero = d == 0.0
            inside = (a >= lo) & (a <= hi)
            tmin = np.where(zero, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(zero, np.where(inside, np.inf, -np.inf), tmax)
            t_in = np.maximum(np.maximum(tmin[:, 0], tmin[:, 1]), 0.0)
            t_out = np.minimum(np.minimum(tmax[:, 0], tmax[:, 1]), 1.0)
            ok &= ~(t_in <= t_out)
    return ok


# ---------------------------------------------------------------------------
# dynamics


def clamp_action(a, maze: MazeSpec) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=float), -maze.max_action, maze.max_action)


def step(s: np.ndarray, a: np.ndarray, maze: MazeSpec) -> np.ndarray:
    """Advance one semi-implicit Euler step and return the next state."""
    return step_contact(s, a, maze)[0]


def step_contact(s: np.ndarray, a: np.ndarray, maze: MazeSpec) -> tuple[np.ndarray, bool]:
    """Like :func:`step` but also reports whether a collision clamp happened.

    When the motion segment would leave the
    free space the agent stops just short of the first contact point and the
    velocity component along the blocked axis is zeroed.
    """
    s = np.asarray(s, dtype=float)
    pos = s[:2]
    if not point_feasible(pos, maze):
        raise InfeasibleStateError(f"state position {pos.tolist()} is infeasible")
    force = clamp_action(a, maze)
    vel = maze.decay * s[2:4] + maze.dt * force
    new_pos = pos + maze.dt * vel
    if segment_feasible(pos, new_pos, maze):
        return np.concatenate([new_pos, vel]), False

    delta = new_pos - pos
    t_hit, axis = _first_contact(pos, delta, maze)
    length = float(np.hypot(*delta))
    back = max(0.0, t_hit - SKIN / length) if length > 0 else 0.0
    cand = pos + back * delta
    vel = vel.copy()
    if axis >= 0:
        vel[axis] = 0.0
    else:
        vel[:] = 0.0
    if not segment_feasible(pos, cand, maze):
        cand = pos.copy()
    return np.concatenate([cand, vel]), True


def _first_contact(pos: np.ndarray, delta: np.ndarray, maze: MazeSpec) -> tuple[float, int]:
    end = pos + delta
    best_t, best_axis = 1.0, -1
    bd = maze.bounds
    for k, (lo, hi) in enumerate(((bd.xmin, bd.xmax), (bd.ymin, bd.ymax))):
        if end[k] > hi:
            t = (hi - pos[k]) / delta[k]
        elif end[k] < lo:
            t = (lo - pos[k]) / delta[k]
        else:
            continue
        if t < best_t:
            best_t, best_axis = t, k
    for o in maze.obstacles:
        hit, t, axis = segment_hits_rect(pos, end, o)
        if hit and t < best_t:
            best_t, best_axis = t, axis
    return best_t, best_axis


def goal_reached(s, goal, radius: float) -> bool:
    diff = np.asarray(s, dtype=float)[:2] - np.asarray(goal, dtype=float)[:2]
    return bool(np.hypot(diff[0], diff[1]) <= radius)


# ---------------------------------------------------------------------------
# sampling


def sample_start(maze: MazeSpec, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
    """Uniform feasible start with zero velocity, drawn from a random start region."""
    for _ in range(max_tries):
        region = maze.start_regions[rng.integers(len(maze.start_regions))]
        p = np.array([rng.uniform(region.xmin, region.xmax), rng.uniform(region.ymin, region.ymax)])
        if point_feasible(p, maze):
            return np.array([p[0], p[1], 0.0, 0.0])
    raise RegionBlockedError(f"no feasible start found in {max_tries} draws")


def sample_goal(maze: MazeSpec, rng: np.random.Generator) -> np.ndarray:
    return maze.goal_array[rng.integers(len(maze.goals))].copy()


# ---------------------------------------------------------------------------
# validation


def flood_fill(free: np.ndarray, seed: tuple[int, int]) -> np.ndarray:
    """4-connected reachable set on a boolean grid indexed ``[ix, iy]``."""
    seen = np.zeros_like(free, dtype=bool)
    if not free[seed]:
        return seen
    seen[seed] = True
    queue = deque([seed])
    nx, ny = free.shape
    while queue:
        i, j = queue.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            u, v = i + di, j + dj
            if 0 <= u < nx and 0 <= v < ny and free[u, v] and not seen[u, v]:
                seen[u, v] = True
                queue.append((u, v))
    return seen


def cell_of(p, bounds: Rect, res: int) -> tuple[int, int]:
    fx = (p[0] - bounds.xmin) / (bounds.xmax - bounds.xmin)
    fy = (p[1] - bounds.ymin) / (bounds.ymax - bounds.ymin)
    return min(int(fx * res), res - 1), min(int(fy * res), res - 1)


def validate_maze(maze: MazeSpec, res: int = 200) -> None:
    b = maze.bounds
    for o in maze.obstacles:
        if not (b.xmin < o.xmin and o.xmax < b.xmax and b.ymin < o.ymin and o.ymax < b.ymax):
            raise ConfigError(f"obstacle {o.as_list()} not strictly inside world bounds")
    if not maze.goals:
        raise ConfigError("maze needs at least one goal")
    if not maze.start_regions:
        raise ConfigError("maze needs at least one start region")
    if not (maze.goal_radius > 0 and maze.dt > 0 and maze.max_action > 0):
        raise ConfigError("goal_radius, dt and max_action must be positive")
    for g in maze.goals:
        if not point_feasible(g, maze):
            raise ConfigError(f"goal {g} is infeasible")

    xs = b.xmin + (np.arange(res) + 0.5) * (b.xmax - b.xmin) / res
    ys = b.ymin + (np.arange(res) + 0.5) * (b.ymax - b.ymin) / res
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    free = points_feasible(np.stack([gx, gy], axis=-1), maze)
    reach = None
    for g in maze.goals:
        cell = cell_of(g, b, res)
        if not free[cell]:
            raise ConfigError(f"goal {g} lies in a blocked grid cell")
        r = flood_fill(free, cell)
        if reach is None:
            reach = r
        elif not np.array_equal(reach, r):
            raise ConfigError("goals are not mutually connected")
    for region in maze.start_regions:
        cx, cy = region.center
        inside = (gx >= region.xmin) & (gx <= region.xmax) & (gy >= region.ymin) & (gy <= region.ymax)
        if not (inside & free).any():
            raise ConfigError(f"start region {region.as_list()} fully blocked")
        if not (inside & free & reach).any():
            raise ConfigError(f"start region {region.as_list()} is disconnected from the goals")


# ---------------------------------------------------------------------------
# presets


def cross_maze(passage: float = 1.5, name: str = "maze", **kw) -> MazeSpec:
    """Centre room enclosed by four L-shaped walls with a gap mid-way along each side.

    Starts are drawn inside the room; goals sit near the four corners.
    """
    lo, hi, t = 2.5, 7.5, 0.5
    c, g = 5.0, passage / 2
    obstacles = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            # corner arm along x, then arm along y
            x_edge = (lo, lo + t) if sx < 0 else (hi - t, hi)
            y_edge = (lo, lo + t) if sy < 0 else (hi - t, hi)
            xs = (lo, c - g) if sx < 0 else (c + g, hi)
            ys = (lo, c - g) if sy < 0 else (c + g, hi)
            obstacles.append(Rect(xs[0], y_edge[0], xs[1], y_edge[1]))
            obstacles.append(Rect(x_edge[0], ys[0], x_edge[1], ys[1]))
    defaults = dict(
        name=name,
        bounds=Rect(0.0, 0.0, 10.0, 10.0),
        obstacles=tuple(obstacles),
        goals=((1.0, 1.0), (1.0, 9.0), (9.0, 1.0), (9.0, 9.0)),
        goal_radius=0.5,
        start_regions=(Rect(3.5, 3.5, 6.5, 6.5),),
    )
    defaults.update(kw)
    return MazeSpec(**defaults)


def empty_maze(**kw) -> MazeSpec:
    defaults = dict(
        name="empty",
        bounds=Rect(0.0, 0.0, 10.0, 10.0),
        obstacles=(),
        goals=((8.0, 8.0),),
        goal_radius=0.5,
        start_regions=(Rect(1.0, 1.0, 3.0, 3.0),),
    )
    defaults.update(kw)
    return MazeSpec(**defaults)


PRESETS = {
    "maze": lambda: cross_maze(1.5, name="maze"),
    "maze_tight": lambda: cross_maze(0.75, name="maze_tight"),
    "empty": empty_maze,
}


def load_maze(name_or_path: str | Path) -> MazeSpec:
    """Preset name or path to a JSON maze description (schema in README)."""
    key = str(name_or_path)
    if key in PRESETS:
        return PRESETS[key]()
    path = Path(key)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"unknown maze preset or missing file: {key}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed maze file {key}: {exc}") from exc
    return MazeSpec.from_dict(data)


def save_maze(maze: MazeSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(maze.to_dict(), indent=2) + "\n")


def rollout(s0, actions: Sequence, maze: MazeSpec) -> np.ndarray:
    states = [np.asarray(s0, dtype=float)]
    for a in actions:
        states.append(step(states[-1], a, maze))
    return np.stack(states)
