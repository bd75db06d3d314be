"""Plan metrics, paired benchmark episodes and report tables."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import ControllerGains, execute_plan
from .env import MazeSpec, points_feasible, sample_goal, sample_start, segments_feasible
from .errors import CDRBError, NonPositiveReference
from .expert import generate_demo
from .trajectory import Trajectory

EPISODE_STREAM = 104_729
PLAN_STREAM = 130_363
REPORT_FORMAT = "cdrb-eval-report"


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def plan_feasibility(plan, maze: MazeSpec) -> tuple[float, float]:
    """(fraction of feasible plan positions, fraction of feasible consecutive segments)."""
    P = np.asarray(plan.states if isinstance(plan, Trajectory) else plan, dtype=float)[:, :2]
    if len(P) == 0:
        raise ValueError("empty plan")
    point_frac = float(np.mean(points_feasible(P, maze)))
    if len(P) < 2:
        return point_frac, point_frac
    seg_frac = float(np.mean(segments_feasible(P[:-1], P[1:], maze)))
    return point_frac, seg_frac


def path_length(plan) -> float:
    P = np.asarray(plan.states if isinstance(plan, Trajectory) else plan, dtype=float)[:, :2]
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))


def normalized_path_length(plan, reference_length: float) -> float:
    if not reference_length > 0:
        raise NonPositiveReference(f"reference length must be positive, got {reference_length}")
    return path_length(plan) / reference_length


def make_episodes(maze: MazeSpec, seed: int, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Start/goal pairs that depend only on ``(maze, seed)``."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([EPISODE_STREAM, seed, i])
        out.append((sample_start(maze, rng), sample_goal(maze, rng)))
    return out


@dataclass
class EpisodeRecord:
    seed: int
    episode: int
    start: list[float]
    goal: list[float]
    success: bool
    anytime_success: bool = False
    collisions: int = 0
    steps_used: int = 0
    point_feasibility: float = 0.0
    segment_feasibility: float = 0.0
    path_length: float = math.nan
    reference_length: float = math.nan
    normalized_path_length: float = math.nan
    error: str | None = None


@dataclass
class EvalReport:
    method: str
    maze_id: str
    n_episodes: int
    seeds: list[int]
    success_rate: float
    success_std: float
    success_by_seed: list[float]
    anytime_success_rate: float
    plan_point_feasibility: float
    plan_segment_feasibility: float
    normalized_path_length: float
    records: list[EpisodeRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, method: str, maze_id: str, seeds: list[int], n_episodes: int, records: list[EpisodeRecord]):
        by_seed = [_mean([r.success for r in records if r.seed == s]) for s in seeds]
        npl = [r.normalized_path_length for r in records if math.isfinite(r.normalized_path_length)]
        return cls(
            method=method,
            maze_id=maze_id,
            n_episodes=n_episodes,
            seeds=list(seeds),
            success_rate=_mean([r.success for r in records]),
            success_std=float(np.std(by_seed)),
            success_by_seed=by_seed,
            anytime_success_rate=_mean([r.anytime_success for r in records]),
            plan_point_feasibility=_mean([r.point_feasibility for r in records]),
            plan_segment_feasibility=_mean([r.segment_feasibility for r in records]),
            normalized_path_length=_mean(npl),
            records=records,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d.pop("format", None)
        d["records"] = [EpisodeRecord(**r) for r in d.get("records", [])]
        return cls(**d)


def reference_lengths(maze: MazeSpec, episodes) -> list[float]:
    out = []
    for s, g in episodes:
        try:
            out.append(path_length(generate_demo(maze, s, g).states))
        except CDRBError:
            out.append(math.nan)
    return out


def evaluate_plans(
    maze: MazeSpec,
    plans,
    episodes,
    seed: int,
    gains: ControllerGains,
    goal_radius: float,
    step_cap: int,
    references: list[float] | None = None,
) -> list[EpisodeRecord]:
    records = []
    for i, ((s, g), plan) in enumerate(zip(episodes, plans)):
        base = dict(seed=seed, episode=i, start=[float(v) for v in s], goal=[float(v) for v in g])
        if isinstance(plan, Exception):
            records.append(EpisodeRecord(success=False, error=f"{type(plan).__name__}: {plan}", **base))
            continue
        traj = Trajectory(np.asarray(plan))
        pf, sf = plan_feasibility(traj, maze)
        res = execute_plan(maze, traj, gains, g, goal_radius, step_cap)
        length = path_length(traj)
        ref = references[i] if references is not None else math.nan
        npl = length / ref if ref > 0 else math.nan
        records.append(
            EpisodeRecord(
                success=res.success,
                anytime_success=res.anytime_success,
                collisions=res.collisions,
                steps_used=res.steps_used,
                point_feasibility=pf,
                segment_feasibility=sf,
                path_length=length,
                reference_length=ref,
                normalized_path_length=npl,
                **base,
            )
        )
    return records


def run_benchmark(
    methods,
    maze: MazeSpec,
    n_episodes: int,
    seeds,
    gains: ControllerGains = ControllerGains(),
    goal_radius: float | None = None,
    step_cap: int = 640,
    with_reference: bool = True,
) -> list[EvalReport]:
    """Plan and execute the same episodes with every method; one report per method."""
    radius = maze.goal_radius if goal_radius is None else goal_radius
    seeds = list(seeds)
    per_method: dict[str, list[EpisodeRecord]] = {m.name: [] for m in methods}
    for seed in seeds:
        episodes = make_episodes(maze, seed, n_episodes)
        refs = reference_lengths(maze, episodes) if with_reference else None
        starts = np.stack([s for s, _ in episodes])
        goals = np.stack([g for _, g in episodes])
        for m in methods:
            rng = np.random.default_rng([PLAN_STREAM, seed])
            try:
                plans = m.plan_batch(starts, goals, rng)
            except CDRBError as exc:
                plans = [exc] * n_episodes
            per_method[m.name] += evaluate_plans(maze, plans, episodes, seed, gains, radius, step_cap, refs)
    return [EvalReport.from_records(m.name, maze.name, seeds, n_episodes, per_method[m.name]) for m in methods]


# ---------------------------------------------------------------------------
# output


def format_table(reports: list[EvalReport], label: str = "method") -> str:
    header = f"{label:<24} {'success %':>16} {'anytime %':>10} {'point feas':>10} {'seg feas':>10} {'norm len':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.method:<24} {100 * r.success_rate:>8.2f} ±{100 * r.success_std:>6.2f} "
            f"{100 * r.anytime_success_rate:>10.2f} {r.plan_point_feasibility:>10.4f} "
            f"{r.plan_segment_feasibility:>10.4f} {r.normalized_path_length:>9.3f}"
        )
    return "\n".join(lines)


def save_reports(reports: list[EvalReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=1) + "\n")


def load_reports(path: str | Path) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(Path(path).read_text())]


def shared_success_path_lengths(a: EvalReport, b: EvalReport) -> tuple[float, float, int]:
    """Mean normalised path length of both methods over episodes both executed successfully."""
    key = lambda r: (r.seed, r.episode)  # noqa: E731
    rb = {key(r): r for r in b.records}
    pairs = [
        (r.normalized_path_length, rb[key(r)].normalized_path_length)
        for r in a.records
        if r.success and key(r) in rb and rb[key(r)].success
        and math.isfinite(r.normalized_path_length) and math.isfinite(rb[key(r)].normalized_path_length)
    ]
    if not pairs:
        return math.nan, math.nan, 0
    arr = np.array(pairs)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean()), len(pairs)
