"""Scripted demonstrators and the offline demonstration dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import CliffCorridor, HazardWorld2D, make_env

ENDINGS = ("goal", "violation", "truncation")


@dataclass
class Trajectory:
    """One episode: ``states[t]`` is the state in which ``actions[t]`` was taken."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    ended_by: str

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.costs = np.asarray(self.costs, dtype=float)
        n = len(self.rewards)
        if n < 1:
            raise ValueError("a trajectory needs at least one step")
        if not (len(self.states) == len(self.actions) == len(self.costs) == n):
            raise ValueError("states, actions, rewards and costs must have equal length")
        if self.ended_by not in ENDINGS:
            raise ValueError(f"ended_by must be one of {ENDINGS}")
        if np.any(self.costs[:-1] > 0):
            raise ValueError("only the final step may carry a cost")

    def __len__(self):
        return len(self.rewards)

    @property
    def violated(self) -> bool:
        return bool(self.costs[-1] > 0)


@dataclass
class DemoDataset:
    trajectories: list
    env_name: str
    controller: str
    seed: int
    env_params: dict = field(default_factory=dict)
    noise_scale: float = 0.0

    def __len__(self):
        return len(self.trajectories)

    def stats(self) -> dict:
        lengths = [len(t) for t in self.trajectories]
        return {
            "n_trajectories": len(self.trajectories),
            "violation_fraction": float(np.mean([t.violated for t in self.trajectories])),
            "goal_fraction": float(np.mean([t.ended_by == "goal" for t in self.trajectories])),
            "mean_length": float(np.mean(lengths)),
            "n_steps": int(np.sum(lengths)),
        }

    def all_states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories])


def detour_waypoints(env: HazardWorld2D, pos, margin=0.06):
    """Waypoints that skirt every hazard lying close to the start-goal line.

    Each such hazard is passed on whichever side of its center ``pos`` is
    on, through two waypoints ``radius + margin`` off its center line.
    Demonstrations that start near that line therefore split both ways.
    """
    start = 0.5 * (env.start_low + env.start_high)
    goal = np.asarray(env.goal.center)
    u = (goal - start) / np.linalg.norm(goal - start)
    normal = np.array([-u[1], u[0]])
    hazards = sorted(env.hazards, key=lambda h: float((np.asarray(h.center) - start) @ u))
    points = []
    for h in hazards:
        c = np.asarray(h.center)
        if abs(normal @ (c - start)) >= h.radius + margin:
            continue
        side = np.sign(normal @ (np.asarray(pos) - c)) or 1.0
        offset = side * (h.radius + margin) * normal
        points += [c - h.radius * u + offset, c + h.radius * u + offset]
    points.append(goal)
    return np.array(points), u


def hazard_controller(env: HazardWorld2D, state, rng, noise_scale, margin=0.06) -> np.ndarray:
    """Head for the next detour waypoint (finally the goal), plus Gaussian noise.

    A waypoint counts as passed once it is less than half a step ahead along
    the start-goal direction; near the goal the step shrinks to land on it.
    """
    pos = np.asarray(state, dtype=float)
    points, u = detour_waypoints(env, pos, margin)
    goal = points[-1]
    step = env.spec.action_high[0]
    target = goal
    for p in points[:-1]:
        if (p - pos) @ u > 0.5 * step:
            target = p
            break
    delta = target - pos
    dist = np.linalg.norm(delta)
    goal_dist = np.linalg.norm(goal - pos)
    if goal_dist < 1e-12 or dist < 1e-12:
        action = np.zeros(2)
    else:
        action = delta / dist * (min(step, goal_dist) if target is goal else step)
    if noise_scale > 0:
        action = action + rng.normal(0.0, noise_scale, size=2)
    return env.spec.clip(action)


def corridor_controller(env: CliffCorridor, state, rng, noise_scale) -> np.ndarray:
    """Walk forward while cancelling the crosswind."""
    cell = env.cell_of(state)
    if cell >= env.n_cells - 1:
        action = np.zeros(2)
    else:
        action = np.array([1.0, -(state[1] + env.wind[cell])])
    if noise_scale > 0:
        action = action + rng.normal(0.0, noise_scale, size=2)
    return env.spec.clip(action)


CONTROLLERS = {"HazardWorld2D": ("waypoint_detour", hazard_controller),
               "CliffCorridor": ("wind_compensator", corridor_controller)}


def scripted_controller(env, state, rng, noise_scale):
    """Dispatch to the scripted controller that matches ``env``."""
    _, fn = CONTROLLERS[env.spec.name]
    return fn(env, state, rng, noise_scale)


def rollout(env, policy, rng) -> Trajectory:
    """Run ``policy(state) -> action`` until the episode ends."""
    state = env.reset(rng)
    states, actions, rewards, costs = [], [], [], []
    while True:
        action = env.spec.clip(policy(state))
        res = env.step(action)
        states.append(state)
        actions.append(action)
        rewards.append(res.reward)
        costs.append(res.cost)
        state = res.next_state
        if res.terminated or res.truncated:
            ended = "violation" if res.cost > 0 else ("goal" if res.terminated else "truncation")
            return Trajectory(np.array(states), np.array(actions), rewards, costs, ended)


def generate_demonstrations(env, n_trajectories: int, rng: np.random.Generator,
                            noise_scale: float = 0.05, controller: str | None = None,
                            seed: int = 0) -> DemoDataset:
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    name, fn = CONTROLLERS[env.spec.name]
    if controller is not None and controller != name:
        raise ValueError(f"controller {controller!r} does not drive {env.spec.name}")
    trajs = [rollout(env, lambda s: fn(env, s, rng, noise_scale), rng) for _ in range(n_trajectories)]
    return DemoDataset(trajs, env.spec.name, name, seed, env.describe(), noise_scale)


# -- JSON-lines persistence -------------------------------------------------

def save_demos(dataset: DemoDataset, path) -> None:
    path = Path(path)
    header = {"env": dataset.env_name, "controller": dataset.controller, "seed": dataset.seed,
              "noise_scale": dataset.noise_scale, "env_params": dataset.env_params,
              "stats": dataset.stats()}
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in dataset.trajectories:
            fh.write(json.dumps({"states": t.states.tolist(), "actions": t.actions.tolist(),
                                 "rewards": t.rewards.tolist(), "costs": t.costs.tolist(),
                                 "ended_by": t.ended_by}) + "\n")


def load_demos(path) -> DemoDataset:
    with Path(path).open() as fh:
        header = json.loads(fh.readline())
        trajs = []
        for line in fh:
            if line.strip():
                r = json.loads(line)
                trajs.append(Trajectory(r["states"], r["actions"], r["rewards"], r["costs"], r["ended_by"]))
    if not trajs:
        raise ValueError(f"{path}: no trajectories")
    return DemoDataset(trajs, header["env"], header["controller"], header["seed"],
                       header.get("env_params", {}), header.get("noise_scale", 0.0))


def env_from_demos(dataset: DemoDataset):
    return make_env(dataset.env_name)
