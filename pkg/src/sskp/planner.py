"""Risk planning: cross-entropy refinement of a diagonal Gaussian over skills.

Each iteration samples ``n_samples`` skills, keeps the ``top_k`` with the
lowest predicted risk and refits the mean and per-dimension variance on them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import DiagGaussian, NumericalError


INIT_MODES = ("policy_samples", "prior_moments")


@dataclass(frozen=True)
class PlannerConfig:
    n_samples: int = 512
    top_k: int = 64
    n_iterations: int = 6
    variance_floor: float = 1e-4
    init: str = "policy_samples"  # or "prior_moments"

    def __post_init__(self):
        if not 1 <= self.top_k <= self.n_samples:
            raise ValueError("need 1 <= top_k <= n_samples")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"unknown init {self.init!r}")


def refit_distribution(skills, variance_floor=1e-4) -> DiagGaussian:
    """Mean and population variance (divisor k) of the given skills, floored."""
    skills = np.asarray(skills, dtype=float)
    if skills.ndim != 2 or len(skills) == 0:
        raise ValueError("refit needs a non-empty (k, dim) array of skills")
    mean = skills.mean(axis=0)
    var = ((skills - mean) ** 2).mean(axis=0)
    return DiagGaussian(mean, np.maximum(var, variance_floor))


def lowest_k(scores, k) -> np.ndarray:
    """Indices of the k lowest scores; exact ties go to the lower index."""
    return np.argsort(scores, kind="stable")[:k]


def _scores(risk_fn, state, z):
    p = np.asarray(risk_fn(state, z), dtype=float)
    if not np.all(np.isfinite(p)):
        raise NumericalError("risk predictor returned non-finite values during planning")
    return p


def initial_distribution(proposal: DiagGaussian, config: PlannerConfig, rng,
                         prior_dist: DiagGaussian | None = None) -> DiagGaussian:
    """Moments of N_s proposal draws, or the skill prior's own moments."""
    if config.init == "prior_moments":
        if prior_dist is None:
            raise ValueError("init 'prior_moments' needs the skill prior's distribution")
        return DiagGaussian(prior_dist.mean, np.maximum(prior_dist.var, config.variance_floor))
    return refit_distribution(proposal.sample(rng, config.n_samples), config.variance_floor)


def risk_planning(proposal: DiagGaussian, risk_fn, state, config: PlannerConfig, rng,
                  trace=False, prior_dist: DiagGaussian | None = None):
    """Plan one skill for ``state``.

    ``proposal`` is the policy's distribution at ``state``; ``risk_fn(state,
    skills)`` returns one risk per skill row.  ``prior_dist`` is only read when
    ``config.init`` is ``"prior_moments"``.  With ``trace=True`` also returns
    the mean risk of fresh samples from each distribution 0..n_iterations and
    the sequence of refitted distributions.
    """
    dist = initial_distribution(proposal, config, rng, prior_dist)
    dists = [dist]
    mean_risk = []
    for _ in range(config.n_iterations):
        z = dist.sample(rng, config.n_samples)
        p = _scores(risk_fn, state, z)
        mean_risk.append(float(p.mean()))
        dist = refit_distribution(z[lowest_k(p, config.top_k)], config.variance_floor)
        dists.append(dist)
    skill = dist.sample(rng)
    if not trace:
        return skill
    z = dist.sample(rng, config.n_samples)
    mean_risk.append(float(_scores(risk_fn, state, z).mean()))
    return skill, {"mean_risk": np.array(mean_risk), "distributions": dists}


def naive_planning(proposal: DiagGaussian, risk_fn, state, n_samples, rng):
    """Best of ``n_samples`` proposal draws by predicted risk, single pass."""
    z = proposal.sample(rng, n_samples)
    p = _scores(risk_fn, state, z)
    return z[lowest_k(p, 1)[0]]


def planning_diagnostics(risk_fn, proposal_fn, states, config: PlannerConfig, rng):
    """Per-iteration change in mean predicted risk, averaged across states.

    Returns a dict with ``iteration``, ``mean_delta_p`` and ``std_delta_p``
    (each of length n_iterations + 1) plus the per-state ``deltas`` matrix.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if len(states) == 0:
        raise ValueError("diagnostics need at least one state")
    deltas = []
    for s in states:
        # the diagnostic proposal is the skill prior, so it also serves "prior_moments"
        g = proposal_fn(s)
        _, tr = risk_planning(g, risk_fn, s, config, rng, trace=True, prior_dist=g)
        deltas.append(tr["mean_risk"] - tr["mean_risk"][0])
    deltas = np.array(deltas)
    return {"iteration": np.arange(config.n_iterations + 1),
            "mean_delta_p": deltas.mean(axis=0),
            "std_delta_p": deltas.std(axis=0),
            "deltas": deltas}


def write_diagnostics_csv(diag, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_delta_p", "std_delta_p"])
        for i, m, s in zip(diag["iteration"], diag["mean_delta_p"], diag["std_delta_p"]):
            w.writerow([int(i), repr(float(m)), repr(float(s))])
