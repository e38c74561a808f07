"""
Online learning with and without risk-aware planning
====================================================

A short version of the three-way ablation: the full method, a single-pass
planner, and no planner at all. The CLI runs the full-length version
(``sskp train-online``); this script keeps everything in memory and uses
5 000 environment steps so it finishes in about a minute.
"""
import dataclasses

from sskp import metrics
from sskp.agent import MODES, OnlineConfig, train_online
from sskp.config import stage_rng
from sskp.demo import generate_demonstrations
from sskp.env import HazardWorld2D
from sskp.risk import RiskConfig, assemble_pu_data, train_risk_predictor
from sskp.skills import SkillConfig, train_skill_model

SEED, STEPS = 0, 5000
env = HazardWorld2D()
demos = generate_demonstrations(env, 300, stage_rng(SEED, "demos"))
model, _ = train_skill_model(demos.trajectories, env.spec, SkillConfig(), stage_rng(SEED, "skills"))
rng = stage_rng(SEED, "risk")
pu = assemble_pu_data(demos.trajectories, model, model.horizon, rng)
predictor, _, _ = train_risk_predictor(pu, RiskConfig(), rng)

print(f"{'mode':<14}{'episodes':>9}{'violations':>11}{'last-10 reward':>16}{'PtR/#V x1e3':>13}")
for mode in MODES:
    cfg = dataclasses.replace(OnlineConfig(), mode=mode, total_timesteps=STEPS)
    result = train_online(env, model, cfg, stage_rng(SEED, "online"), predictor, pu)
    row = metrics.table_row(mode, env.spec.name, result.log, STEPS)
    trailing = metrics.reward_vs_violations_curve(result.log, 10)[-1, 1]
    print(f"{mode:<14}{len(result.log):>9}{metrics.violations(result.log):>11}"
          f"{trailing:>16.3f}{row['ptr_over_v_times_1e3']:>13.4f}")
