"""Reward-versus-violation metrics computed from per-episode run logs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

METRIC_COLUMNS = ("env_step", "episode", "episode_reward", "episode_len", "violated", "cum_violations")


def write_metrics_csv(log, path) -> None:
    """One row per episode; floats are written with ``repr`` so files are reproducible."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in log:
            w.writerow([row["env_step"], row["episode"], repr(float(row["episode_reward"])),
                        row["episode_len"], int(row["violated"]), row["cum_violations"]])


def read_metrics_csv(path) -> list:
    out = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            out.append({"env_step": int(r["env_step"]), "episode": int(r["episode"]),
                        "episode_reward": float(r["episode_reward"]),
                        "episode_len": int(r["episode_len"]), "violated": int(r["violated"]),
                        "cum_violations": int(r["cum_violations"])})
    validate_log(out)
    return out


def validate_log(log) -> None:
    steps = [r["env_step"] for r in log]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("env_step must be strictly increasing")
    if any(r["violated"] not in (0, 1) for r in log):
        raise ValueError("violated must be 0 or 1")


def ptr(log, total_timesteps) -> float:
    """Per-timestep reward: summed episode rewards over the step budget."""
    if total_timesteps < 1:
        raise ValueError("total_timesteps must be >= 1")
    return float(sum(r["episode_reward"] for r in log)) / total_timesteps


def violations(log) -> int:
    return int(sum(r["violated"] for r in log))


def ptr_over_violations(log, total_timesteps):
    """``(PtR / #V, zero_violation_flag)``; with no violations the divisor is 1."""
    v = violations(log)
    value = ptr(log, total_timesteps)
    if v == 0:
        return value, True
    return value / v, False


def reward_vs_violations_curve(log, window=10) -> np.ndarray:
    """Rows of (cumulative violations, trailing mean episode reward), one per episode."""
    if not log:
        raise ValueError("empty run log")
    rewards = np.array([r["episode_reward"] for r in log], dtype=float)
    cum_v = np.cumsum([r["violated"] for r in log])
    csum = np.concatenate([[0.0], np.cumsum(rewards)])
    idx = np.arange(1, len(rewards) + 1)
    lo = np.maximum(idx - window, 0)
    avg = (csum[idx] - csum[lo]) / (idx - lo)
    return np.column_stack([cum_v, avg])


def step_curves(log, window=10) -> np.ndarray:
    """Rows of (env_step, trailing mean episode reward, cumulative violations)."""
    rv = reward_vs_violations_curve(log, window)
    steps = np.array([r["env_step"] for r in log], dtype=float)
    return np.column_stack([steps, rv[:, 1], rv[:, 0]])


def aggregate_seeds(curves, n_grid=100):
    """Interpolate (x, y) curves onto a shared grid and take pointwise mean/std.

    The grid spans the x-range common to all curves; repeated x values keep
    their last y.
    """
    if not curves:
        raise ValueError("need at least one curve")
    prepared = []
    for c in curves:
        c = np.asarray(c, dtype=float)
        x, y = c[:, 0], c[:, 1]
        # keep the last y at each repeated x so np.interp sees increasing xs
        keep = np.append(x[1:] != x[:-1], True)
        prepared.append((x[keep], y[keep]))
    lo = max(x[0] for x, _ in prepared)
    hi = min(x[-1] for x, _ in prepared)
    grid = np.linspace(lo, hi, n_grid) if hi > lo else np.array([lo])
    ys = np.array([np.interp(grid, x, y) for x, y in prepared])
    return grid, ys.mean(axis=0), ys.std(axis=0)


def write_curve_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def table_row(method, env, log, total_timesteps) -> dict:
    """Summary entry in the PtR/#V (x 1e3) reporting convention."""
    ratio, zero_v = ptr_over_violations(log, total_timesteps)
    return {"method": method, "env": env, "ptr": ptr(log, total_timesteps),
            "violations": violations(log), "ptr_over_v": ratio,
            "ptr_over_v_times_1e3": ratio * 1e3, "zero_violations": zero_v}
