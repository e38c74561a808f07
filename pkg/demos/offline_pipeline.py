"""
Offline stage on HazardWorld2D
==============================

Scripted demonstrations, a latent skill model, PU data and a risk predictor,
then a look at how much the iterative planner lowers predicted risk.
Runs in well under a minute.
"""
import numpy as np

from sskp.config import stage_rng
from sskp.demo import generate_demonstrations
from sskp.env import HazardWorld2D
from sskp.planner import PlannerConfig, planning_diagnostics
from sskp.risk import RiskConfig, assemble_pu_data, train_risk_predictor
from sskp.skills import SkillConfig, explained_variance, extract_windows, prior, train_skill_model

SEED = 0
env = HazardWorld2D()
print(env.describe())

# demonstrations from the waypoint controller; some of them clip a hazard
demos = generate_demonstrations(env, 300, stage_rng(SEED, "demos"))
print("demos:", demos.stats())

# skill model over 10-step action windows
skill_cfg = SkillConfig()
model, log = train_skill_model(demos.trajectories, env.spec, skill_cfg, stage_rng(SEED, "skills"))
_, windows = extract_windows(demos.trajectories, skill_cfg.horizon)
print(f"skills: final recon {log[-1]['recon']:.4f}, "
      f"explained variance {explained_variance(model, windows):.3f}")

# each demo step becomes a (state, skill) pair, positive if a violation follows within the horizon
rng = stage_rng(SEED, "risk")
pu = assemble_pu_data(demos.trajectories, model, skill_cfg.horizon, rng)
predictor, _, risk_log = train_risk_predictor(pu, RiskConfig(), rng)
print(f"PU data: {pu.n_positive} positive, {pu.n_unlabeled} unlabeled, "
      f"class prior {predictor.lam:.3f}, final loss {risk_log[-1]['loss']:.4f}")

# mean risk change per planning iteration over 100 demo states
diag_rng = stage_rng(SEED, "diagnose")
states = demos.all_states()
states = states[diag_rng.choice(len(states), 100, replace=False)]
diag = planning_diagnostics(predictor, lambda s: prior(model, s), states, PlannerConfig(), diag_rng)
for i, (m, s) in enumerate(zip(diag["mean_delta_p"], diag["std_delta_p"])):
    print(f"iteration {i}: mean change {m:+.4f} (std {s:.4f})")
print("states with lower final risk:", int(np.sum(diag["deltas"][:, -1] < 0)), "of 100")
