"""Sparse-reward point-mass tasks with scripted experts.

Both tasks use kinematic velocity control: the action in [-1, 1]^2 is a
velocity command scaled by ``max_speed`` and integrated with ``dt``. Reward
is 1 on the step the success predicate first holds (which also ends the
episode) and 0 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sigent.errors import ConfigError, ContractError, ValidationError


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    max_episode_steps: int
    goal_tolerance: float
    seed: int = 0


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return bool(self.info.get("success", False))


# the scripted expert is deliberately slow and takes a curved approach
EXPERT_SPEED = 0.6
EXPERT_DETOUR = 0.8


def _detour(pos: np.ndarray, target: np.ndarray, bend: float) -> np.ndarray:
    """A waypoint offset sideways from ``target`` by ``bend`` times the remaining distance.

    Steering at it traces a curve that closes in on ``target`` without any
    controller memory.
    """
    d = target - pos
    return target + bend * np.array([-d[1], d[0]])


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    return v if n <= limit or n == 0.0 else v * (limit / n)


class PointEnv:
    """Shared plumbing: seeding, step cap, action validation."""

    name = "point"
    dt = 0.05
    max_speed = 1.0
    arena = 1.2

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self._state: np.ndarray | None = None
        self._t = 0
        self._done = True

    @property
    def state_dim(self) -> int:
        return self.spec.state_dim

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    @property
    def max_episode_steps(self) -> int:
        return self.spec.max_episode_steps

    @property
    def state(self) -> np.ndarray:
        if self._state is None:
            raise ContractError("call reset() first")
        return self._state.copy()

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else self.rng
        self._state = self._initial_state(rng)
        self._t = 0
        self._done = False
        return self._state.copy()

    def reset_to(self, state) -> np.ndarray:
        """Start an episode from an explicit state (tests, expert audits)."""
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.state_dim,):
            raise ValidationError(f"state must have shape ({self.state_dim},)")
        self._state = state.copy()
        self._t = 0
        self._done = False
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._done:
            raise ContractError("episode is finished; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise ValidationError(f"action must have shape ({self.action_dim},), got {action.shape}")
        if not np.all(np.isfinite(action)) or np.any(np.abs(action) > 1.0):
            raise ValidationError(f"action outside [-1, 1]^{self.action_dim}: {action}")
        self._state = self._advance(self._state, action)
        self._t += 1
        success = self._success(self._state)
        done = success or self._t >= self.max_episode_steps
        self._done = done
        return StepResult(
            next_state=self._state.copy(),
            reward=1.0 if success else 0.0,
            done=done,
            info={"success": success, "truncated": done and not success, "t": self._t},
        )

    def _move_agent(self, pos: np.ndarray, action: np.ndarray) -> np.ndarray:
        vel = self.max_speed * action
        return np.clip(pos + self.dt * vel, -self.arena, self.arena)

    # subclasses fill these in
    def _initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _advance(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _success(self, state: np.ndarray) -> bool:
        raise NotImplementedError

    def expert_action(self, state: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def fast_action(self, state: np.ndarray) -> np.ndarray:
        """Full-speed straight-line controller used as the expert's yardstick."""
        raise NotImplementedError


class PointReach(PointEnv):
    """Drive a point to a goal disc.

    State is (agent x, agent y, goal x, goal y); the agent starts at the
    origin and the goal is uniform in ``goal_box``.
    """

    name = "point-reach"
    goal_box = ((0.3, 0.7), (-0.3, 0.3))

    def __init__(self, seed: int = 0, max_episode_steps: int = 200, goal_tolerance: float = 0.08):
        super().__init__(EnvSpec(4, 2, max_episode_steps, goal_tolerance, seed))

    def _initial_state(self, rng):
        (x0, x1), (y0, y1) = self.goal_box
        goal = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        return np.concatenate([np.zeros(2), goal])

    def _advance(self, state, action):
        out = state.copy()
        out[:2] = self._move_agent(state[:2], action)
        return out

    def _success(self, state):
        return float(np.hypot(*(state[:2] - state[2:4]))) < self.spec.goal_tolerance

    def expert_action(self, state):
        state = np.asarray(state, dtype=np.float64)
        target = _detour(state[:2], state[2:4], EXPERT_DETOUR)
        return np.clip(_clip_norm(20.0 * (target - state[:2]), EXPERT_SPEED), -1, 1)

    def fast_action(self, state):
        state = np.asarray(state, dtype=np.float64)
        return np.clip(_clip_norm(20.0 * (state[2:4] - state[:2]), 1.0), -1, 1)


class PointPush(PointEnv):
    """Push a cube into a fixed goal disc.

    State is (agent x, agent y, cube x, cube y, goal x, goal y). The agent
    starts at the origin; the cube spawns uniformly in ``cube_box``. When the
    agent ends a move inside the cube's contact disc while moving toward the
    cube, the cube is carried along by the agent's displacement.
    """

    name = "point-push"
    cube_box = ((0.3, 0.4), (-0.1, 0.1))
    goal = (0.85, 0.0)
    contact_radius = 0.12

    def __init__(self, seed: int = 0, max_episode_steps: int = 400, goal_tolerance: float = 0.12):
        super().__init__(EnvSpec(6, 2, max_episode_steps, goal_tolerance, seed))

    def _initial_state(self, rng):
        (x0, x1), (y0, y1) = self.cube_box
        cube = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        return np.concatenate([np.zeros(2), cube, np.asarray(self.goal, dtype=np.float64)])

    def _advance(self, state, action):
        out = state.copy()
        agent = self._move_agent(state[:2], action)
        cube = state[2:4]
        moved = agent - state[:2]
        offset = cube - agent
        if float(np.hypot(offset[0], offset[1])) < self.contact_radius and float(moved @ (cube - state[:2])) > 0:
            # moving into the cube carries it along with the agent
            cube = np.clip(cube + moved, -self.arena, self.arena)
        out[:2] = agent
        out[2:4] = cube
        return out

    def _success(self, state):
        return float(np.hypot(*(state[2:4] - state[4:6]))) < self.spec.goal_tolerance

    def _push_controller(self, state, speed, detour):
        agent, cube, goal = state[:2], state[2:4], state[4:6]
        to_goal = goal - cube
        u = to_goal / max(float(np.hypot(*to_goal)), 1e-12)
        rel = agent - cube
        along = float(rel @ u)
        lateral = float(np.hypot(*(rel - along * u)))
        if along < 0 and lateral < 0.5 * self.contact_radius:
            # lined up behind the cube: carry it so that it lands on the goal
            return _clip_norm(20.0 * (goal + rel - agent), speed)
        behind = cube - 2.0 * self.contact_radius * u
        if along > -self.contact_radius:
            # beside or ahead of the cube: swing wide around it first
            side = rel - along * u
            n = float(np.hypot(*side))
            side = side / n if n > 1e-9 else np.array([-u[1], u[0]])
            behind = cube + 2.0 * self.contact_radius * (side - u)
        return _clip_norm(20.0 * (_detour(agent, behind, detour) - agent), speed)

    def expert_action(self, state):
        state = np.asarray(state, dtype=np.float64)
        return np.clip(self._push_controller(state, EXPERT_SPEED, EXPERT_DETOUR), -1, 1)

    def fast_action(self, state):
        state = np.asarray(state, dtype=np.float64)
        return np.clip(self._push_controller(state, 1.0, 0.0), -1, 1)


REGISTRY: dict[str, Callable[..., PointEnv]] = {
    PointReach.name: PointReach,
    PointPush.name: PointPush,
}


def make_env(name: str, seed: int = 0) -> PointEnv:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown env {name!r}; registered: {', '.join(sorted(REGISTRY))}") from None
    return factory(seed=seed)


def scripted_expert(env: PointEnv, state) -> np.ndarray:
    return env.expert_action(np.asarray(state, dtype=np.float64))


def rollout(env: PointEnv, act: Callable[[np.ndarray], np.ndarray], state0=None, rng=None) -> list:
    """Run one episode; returns the list of (state, action, StepResult)."""
    s = env.reset(rng) if state0 is None else env.reset_to(state0)
    out = []
    while True:
        a = np.asarray(act(s), dtype=np.float64)
        res = env.step(a)
        out.append((s, a, res))
        s = res.next_state
        if res.done:
            return out
