"""
Iterative planning on an analytic objective
===========================================

The planner only sees scores, so any function of the skill can stand in for
the risk predictor. Here the score is a sigmoid bowl centred at 0.5 in every
coordinate, and the proposal is a standard normal.
"""
import numpy as np

from sskp.nn import DiagGaussian
from sskp.planner import PlannerConfig, naive_planning, risk_planning

z_star = np.full(10, 0.5)


def bowl(state, z):
    z = np.atleast_2d(z)
    return 1.0 / (1.0 + np.exp(-(np.sum((z - z_star) ** 2, axis=1) - 1.0)))


proposal = DiagGaussian(np.zeros(10), np.ones(10))
cfg = PlannerConfig()
rng = np.random.default_rng(0)

skill, trace = risk_planning(proposal, bowl, None, cfg, rng, trace=True)
for i, (p, g) in enumerate(zip(trace["mean_risk"], trace["distributions"])):
    print(f"iteration {i}: mean score {p:.4f}, distance of mean to optimum "
          f"{np.linalg.norm(g.mean - z_star):.3f}, mean variance {g.var.mean():.4f}")

# one-shot selection from the same number of samples, for comparison
single = naive_planning(proposal, bowl, None, cfg.n_samples, rng)
print(f"iterative pick scores {bowl(None, skill)[0]:.4f}; single pass picks {bowl(None, single)[0]:.4f}")

# how the final mean compares with plain random search
random_scores = bowl(None, rng.standard_normal((10 ** 6, 10)))
final = bowl(None, trace["distributions"][-1].mean)[0]
print(f"final mean scores {final:.4f}; best random sample of 1e6 scores {random_scores.min():.4f}")
