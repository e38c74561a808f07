"""Toy constrained MDPs with a binary cost signal.

Both environments follow the strict setting: a step whose cost is positive
ends the episode immediately.  Each instance is a small single-threaded
state machine; all randomness comes from the generator passed to ``reset``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EnvUsageError(RuntimeError):
    """Raised when an environment is driven outside its protocol."""


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    max_episode_steps: int

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("action bounds must match action_dim")
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ValueError("each action bound needs lo < hi")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=float)

    def clip(self, action) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=float), self.low, self.high)


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    cost: float
    terminated: bool
    truncated: bool
    reached_goal: bool = False


class _Env:
    spec: EnvSpec

    def __init__(self):
        self._state = None
        self._t = 0
        self._done = True

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    @property
    def elapsed(self) -> int:
        return self._t

    @property
    def remaining(self) -> int:
        return self.spec.max_episode_steps - self._t

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = self._start_state(rng)
        self._t = 0
        self._done = False
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._state is None:
            raise EnvUsageError(f"{self.spec.name}: step() called before reset()")
        if self._done:
            raise EnvUsageError(f"{self.spec.name}: step() called on a finished episode; call reset()")
        action = self.spec.clip(action)
        if action.shape != (self.spec.action_dim,):
            raise EnvUsageError(f"action must have shape ({self.spec.action_dim},)")
        nxt, reward, violated, goal = self._transition(self._state, action)
        self._t += 1
        self._state = nxt
        cost = 1.0 if violated else 0.0
        terminated = violated or goal
        truncated = (not terminated) and self._t >= self.spec.max_episode_steps
        self._done = terminated or truncated
        return StepResult(nxt.copy(), float(reward), cost, terminated, truncated, goal and not violated)

    def describe(self) -> dict:
        """Parameters needed to rebuild this environment."""
        raise NotImplementedError

    def _start_state(self, rng):
        raise NotImplementedError

    def _transition(self, state, action):
        raise NotImplementedError


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def contains(self, pos) -> bool:
        return float(np.hypot(pos[0] - self.center[0], pos[1] - self.center[1])) <= self.radius


DEFAULT_HAZARDS = (
    Circle((-0.15, -0.15), 0.15),
    Circle((-0.60, 0.30), 0.15),
    Circle((0.30, -0.60), 0.15),
)


class HazardWorld2D(_Env):
    """Point mass in [-1, 1]^2 moving by bounded displacements.

    Reward per step is ``-reward_scale * |pos - goal|`` plus ``goal_bonus`` on
    entering the goal circle, which ends the episode without a violation.
    Entering any hazard circle costs 1 and ends the episode.
    """

    def __init__(self, hazards=DEFAULT_HAZARDS, goal=Circle((0.70, 0.70), 0.10),
                 start_low=(-1.0, -1.0), start_high=(-0.8, -0.8),
                 max_step=0.1, reward_scale=0.1, goal_bonus=10.0, max_episode_steps=100):
        super().__init__()
        self.hazards = tuple(hazards)
        self.goal = goal
        self.start_low = np.asarray(start_low, dtype=float)
        self.start_high = np.asarray(start_high, dtype=float)
        self.reward_scale = float(reward_scale)
        self.goal_bonus = float(goal_bonus)
        self.spec = EnvSpec("HazardWorld2D", 2, 2, (-max_step, -max_step), (max_step, max_step),
                            int(max_episode_steps))
        for h in self.hazards:
            gap = np.hypot(h.center[0] - goal.center[0], h.center[1] - goal.center[1])
            if gap <= h.radius + goal.radius:
                raise ValueError(f"hazard {h} overlaps the goal region")

    def _start_state(self, rng):
        return rng.uniform(self.start_low, self.start_high)

    def in_hazard(self, pos) -> bool:
        return any(h.contains(pos) for h in self.hazards)

    def goal_distance(self, pos) -> float:
        return float(np.hypot(pos[0] - self.goal.center[0], pos[1] - self.goal.center[1]))

    def _transition(self, state, action):
        nxt = np.clip(state + action, -1.0, 1.0)
        violated = self.in_hazard(nxt)
        goal = (not violated) and self.goal.contains(nxt)
        reward = -self.reward_scale * self.goal_distance(nxt)
        if goal:
            reward += self.goal_bonus
        return nxt, reward, violated, goal

    def describe(self) -> dict:
        return {
            "name": self.spec.name,
            "hazards": [[list(h.center), h.radius] for h in self.hazards],
            "goal": [list(self.goal.center), self.goal.radius],
            "start_low": self.start_low.tolist(),
            "start_high": self.start_high.tolist(),
            "max_step": self.spec.action_high[0],
            "reward_scale": self.reward_scale,
            "goal_bonus": self.goal_bonus,
            "max_episode_steps": self.spec.max_episode_steps,
        }


class CliffCorridor(_Env):
    """A corridor of ``n_cells`` cells flanked by cliffs.

    The observation is ``(cell / (n_cells - 1), lateral offset)``.  The first
    action component moves one cell forward (> 0.5) or back (< -0.5); the
    second shifts the lateral offset.  A fixed per-cell crosswind pushes the
    agent sideways, and leaving the path (``|offset| > half_width``) means
    falling off the cliff.  A forward move pays +1 and a backward move -1;
    reaching the last cell ends the episode.
    """

    def __init__(self, n_cells=20, half_width=0.12, wind=0.06, max_episode_steps=60):
        super().__init__()
        self.n_cells = int(n_cells)
        self.half_width = float(half_width)
        self.wind_strength = float(wind)
        self.wind = wind * np.sin(1.7 * np.arange(self.n_cells))
        self.spec = EnvSpec("CliffCorridor", 2, 2, (-1.0, -0.1), (1.0, 0.1), int(max_episode_steps))

    def cell_of(self, state) -> int:
        return int(round(state[0] * (self.n_cells - 1)))

    def _start_state(self, rng):
        return np.zeros(2)

    def _transition(self, state, action):
        cell = self.cell_of(state)
        offset = state[1] + action[1] + self.wind[cell]
        if action[0] > 0.5:
            cell = min(cell + 1, self.n_cells - 1)
        elif action[0] < -0.5:
            cell = max(cell - 1, 0)
        nxt = np.array([cell / (self.n_cells - 1), offset])
        violated = abs(offset) > self.half_width
        reward = float(cell - self.cell_of(state))
        goal = (not violated) and cell == self.n_cells - 1
        return nxt, reward, violated, goal

    def describe(self) -> dict:
        return {
            "name": self.spec.name,
            "n_cells": self.n_cells,
            "half_width": self.half_width,
            "wind": self.wind_strength,
            "max_episode_steps": self.spec.max_episode_steps,
        }


ENVIRONMENTS = {"HazardWorld2D": HazardWorld2D, "CliffCorridor": CliffCorridor}


def make_env(name: str, **kwargs) -> _Env:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**kwargs)
