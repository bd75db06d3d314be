"""Position controller and plan execution."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .env import MazeSpec, goal_reached, step_contact
from .errors import ConfigError
from .trajectory import Trajectory

CAPTURE_RADIUS = 0.15
WAYPOINT_BUDGET = 10


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 20.0
    kd: float = 4.0

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ConfigError("controller gains must be non-negative")
        if self.kp == 0 and self.kd == 0:
            raise ConfigError("controller gains cannot both be zero")


@dataclass
class ExecutionResult:
    executed: Trajectory
    success: bool
    anytime_success: bool
    collisions: int
    steps_used: int

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("executed")
        return d


def position_controller(s_cur, s_next, gains: ControllerGains, max_action: float | None = None) -> np.ndarray:
    """PD force towards the next planned position, damped on current velocity."""
    s_cur = np.asarray(s_cur, dtype=float)
    s_next = np.asarray(s_next, dtype=float)
    force = gains.kp * (s_next[:2] - s_cur[:2]) - gains.kd * s_cur[2:4]
    if max_action is not None:
        force = np.clip(force, -max_action, max_action)
    return force


def execute_plan(
    maze: MazeSpec,
    plan: Trajectory,
    gains: ControllerGains,
    goal,
    goal_radius: float,
    step_cap: int,
    capture_radius: float = CAPTURE_RADIUS,
    waypoint_budget: int = WAYPOINT_BUDGET,
) -> ExecutionResult:
    """Track the plan's waypoints in order from its first state.

    A waypoint is passed once the agent is within ``capture_radius`` of it or
    has spent ``waypoint_budget`` steps on it. Success is judged on the final
    executed state.
    """
    waypoints = plan.states
    if len(waypoints) < 2:
        raise ValueError("plan needs at least two states")
    s = np.asarray(waypoints[0], dtype=float).copy()
    states, actions = [s], []
    collisions = 0
    anytime = goal_reached(s, goal, goal_radius)
    if anytime:
        return ExecutionResult(Trajectory(np.stack(states)), True, True, 0, 0)

    i, spent = 1, 0
    n = len(waypoints)
    while i < n and len(actions) < step_cap:
        a = position_controller(s, waypoints[i], gains, maze.max_action)
        s, clamped = step_contact(s, a, maze)
        states.append(s)
        actions.append(a)
        collisions += int(clamped)
        spent += 1
        anytime = anytime or goal_reached(s, goal, goal_radius)
        while i < n and (
            spent >= waypoint_budget or np.hypot(*(waypoints[i][:2] - s[:2])) <= capture_radius
        ):
            i += 1
            spent = 0
    executed = Trajectory(np.stack(states), np.stack(actions) if actions else None)
    return ExecutionResult(
        executed=executed,
        success=goal_reached(s, goal, goal_radius),
        anytime_success=anytime,
        collisions=collisions,
        steps_used=len(actions),
    )
