"""Command-line pipeline: ``sskp <command> [--config PATH] [--seed N ...] [--out DIR]``.

Stages talk to each other only through files under ``--out``::

    seed_<n>/demos.jsonl            gen-demos
    seed_<n>/skills.npz             train-skills
    seed_<n>/pu_data.jsonl          train-risk
    seed_<n>/risk.npz               train-risk
    seed_<n>/<mode>/metrics.csv     train-online (plus summary.json, checkpoints)
    seed_<n>/planning_diagnostics.csv   diagnose-planning (plus planning_summary.json)
    seed_<n>/<mode>/evaluation.json evaluate (plus curve CSVs)
    report.json, curves/            report

Exit codes: 0 success, 2 config error, 3 missing or mismatched artifact,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics
from .agent import MODES, CheckpointMismatch, mode_slug, save_policy, train_online, uses_predictor
from .config import ConfigError, RunConfig, load_config, stage_rng, validate
from .demo import env_from_demos, generate_demonstrations, load_demos, save_demos
from .env import make_env
from .nn import NumericalError
from .planner import planning_diagnostics, write_diagnostics_csv
from .risk import PUDataset, RiskPredictor, assemble_pu_data, train_risk_predictor
from .skills import SkillModel, prior, train_skill_model

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERICAL = 0, 2, 3, 4


class MissingArtifact(FileNotFoundError):
    pass


class RunPaths:
    def __init__(self, out, seed):
        self.root = Path(out)
        self.seed_dir = self.root / f"seed_{seed}"
        self.demos = self.seed_dir / "demos.jsonl"
        self.skills = self.seed_dir / "skills.npz"
        self.pu_data = self.seed_dir / "pu_data.jsonl"
        self.risk = self.seed_dir / "risk.npz"
        self.diagnostics = self.seed_dir / "planning_diagnostics.csv"

    def run_dir(self, mode) -> Path:
        return self.seed_dir / mode_slug(mode)

    def metrics(self, mode) -> Path:
        return self.run_dir(mode) / "metrics.csv"


def _need(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"missing artifact {path} (run `sskp {stage}` first)")
    return path


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_demos(paths: RunPaths, cfg: RunConfig):
    ds = load_demos(_need(paths.demos, "gen-demos"))
    if ds.env_name != cfg.env:
        raise ConfigError(f"demos in {paths.demos} are for {ds.env_name}, config says", ["env"])
    return ds


def _load_skills(paths: RunPaths, env, cfg: RunConfig) -> SkillModel:
    model = SkillModel.load(_need(paths.skills, "train-skills"))
    if (model.state_dim, model.action_dim) != (env.spec.state_dim, env.spec.action_dim):
        raise CheckpointMismatch(f"{paths.skills} was trained for different state/action sizes")
    if (model.horizon, model.skill_dim) != (cfg.skills.horizon, cfg.skills.skill_dim):
        raise CheckpointMismatch(f"{paths.skills} has horizon/skill_dim "
                                 f"{model.horizon}/{model.skill_dim}, config asks for "
                                 f"{cfg.skills.horizon}/{cfg.skills.skill_dim}")
    return model


# -- stages -------------------------------------------------------------------------

def gen_demos(cfg: RunConfig, seed, paths: RunPaths):
    env = make_env(cfg.env)
    ds = generate_demonstrations(env, cfg.demo.n_trajectories, stage_rng(seed, "demos"),
                                 cfg.demo.noise_scale, seed=seed)
    paths.seed_dir.mkdir(parents=True, exist_ok=True)
    save_demos(ds, paths.demos)
    return ds.stats()


def train_skills(cfg: RunConfig, seed, paths: RunPaths):
    ds = _load_demos(paths, cfg)
    env = env_from_demos(ds)
    model, log = train_skill_model(ds.trajectories, env.spec, cfg.skills, stage_rng(seed, "skills"))
    model.save(paths.skills, {"seed": seed, "config": cfg.to_dict()})
    return log[-1]


def train_risk(cfg: RunConfig, seed, paths: RunPaths):
    ds = _load_demos(paths, cfg)
    model = _load_skills(paths, env_from_demos(ds), cfg)
    rng = stage_rng(seed, "risk")
    pu = assemble_pu_data(ds.trajectories, model, model.horizon, rng)
    predictor, _, log = train_risk_predictor(pu, cfg.risk, rng)
    pu.save(paths.pu_data)
    predictor.save(paths.risk)
    return {"n_positive": pu.n_positive, "n_unlabeled": pu.n_unlabeled, "lam": predictor.lam,
            "final_loss": log[-1]["loss"]}


def train_online_stage(cfg: RunConfig, seed, paths: RunPaths, modes):
    env = make_env(cfg.env)
    model = _load_skills(paths, env, cfg)
    out = {}
    for mode in modes:
        predictor = pu = None
        if uses_predictor(mode):
            predictor = RiskPredictor.load(_need(paths.risk, "train-risk"))
            pu = PUDataset.load(_need(paths.pu_data, "train-risk"))
        run_dir = paths.run_dir(mode)
        run_dir.mkdir(parents=True, exist_ok=True)

        def checkpoint(step, policy, pred, run_dir=run_dir):
            save_policy(run_dir / f"policy_{step}.npz", policy, {"env_step": step})
            if pred is not None:
                pred.save(run_dir / f"risk_{step}.npz")

        t0 = time.perf_counter()
        result = train_online(env, model, cfg.online_config(mode), stage_rng(seed, "online"),
                              predictor, pu, checkpoint)
        metrics.write_metrics_csv(result.log, paths.metrics(mode))
        save_policy(run_dir / "policy_final.npz", result.policy)
        if result.predictor is not None:
            result.predictor.save(run_dir / "risk_final.npz")
        T = cfg.online.total_timesteps
        row = metrics.table_row(mode, cfg.env, result.log, T)
        summary = {**result.summary, "seed": seed, "env": cfg.env, "env_params": env.describe(),
                   "ptr": row["ptr"], "ptr_over_v": row["ptr_over_v"],
                   "ptr_over_v_times_1e3": row["ptr_over_v_times_1e3"],
                   "zero_violations": row["zero_violations"], "config": cfg.to_dict()}
        _write_json(run_dir / "summary.json", summary)
        # wall time is kept apart so the summary stays reproducible
        _write_json(run_dir / "timing.json", {"wall_time_s": time.perf_counter() - t0})
        out[mode] = {k: summary[k] for k in ("episodes", "violations", "ptr")}
    return out


def diagnose(cfg: RunConfig, seed, paths: RunPaths):
    ds = _load_demos(paths, cfg)
    model = _load_skills(paths, env_from_demos(ds), cfg)
    predictor = RiskPredictor.load(_need(paths.risk, "train-risk"))
    rng = stage_rng(seed, "diagnose")
    states = ds.all_states()
    states = states[rng.choice(len(states), size=cfg.diagnose.n_states, replace=False)]
    diag = planning_diagnostics(predictor, lambda s: prior(model, s), states, cfg.planner, rng)
    write_diagnostics_csv(diag, paths.diagnostics)
    final = diag["deltas"][:, -1]
    summary = {"states_with_drop": int(np.sum(final < 0)), "n_states": len(final),
               "mean_final_delta": float(diag["mean_delta_p"][-1])}
    _write_json(paths.seed_dir / "planning_summary.json", summary)
    return summary


def evaluate(cfg: RunConfig, seed, paths: RunPaths, modes):
    out = {}
    for mode in modes:
        log = metrics.read_metrics_csv(_need(paths.metrics(mode), "train-online"))
        run_dir = paths.run_dir(mode)
        row = metrics.table_row(mode, cfg.env, log, cfg.online.total_timesteps)
        rv = metrics.reward_vs_violations_curve(log, cfg.window)
        row.update(seed=seed, episodes=len(log), final_window_reward=float(rv[-1, 1]))
        metrics.write_curve_csv(run_dir / "reward_vs_violations.csv",
                                ["cum_violations", "avg_episode_reward"], rv)
        metrics.write_curve_csv(run_dir / "step_curves.csv",
                                ["env_step", "avg_episode_reward", "cum_violations"],
                                metrics.step_curves(log, cfg.window))
        _write_json(run_dir / "evaluation.json", row)
        out[mode] = row
    return out


def report(cfg: RunConfig, seeds, out_dir, modes):
    rows, curves = [], {m: {"rv": [], "reward": [], "viol": []} for m in modes}
    for seed in seeds:
        paths = RunPaths(out_dir, seed)
        for mode in modes:
            log = metrics.read_metrics_csv(_need(paths.metrics(mode), "train-online"))
            row = metrics.table_row(mode, cfg.env, log, cfg.online.total_timesteps)
            row["seed"] = seed
            rows.append(row)
            sc = metrics.step_curves(log, cfg.window)
            curves[mode]["rv"].append(metrics.reward_vs_violations_curve(log, cfg.window))
            curves[mode]["reward"].append(sc[:, [0, 1]])
            curves[mode]["viol"].append(sc[:, [0, 2]])
    curve_dir = Path(out_dir) / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    table = []
    for mode in modes:
        vals = np.array([r["ptr_over_v_times_1e3"] for r in rows if r["method"] == mode])
        table.append({"method": mode, "env": cfg.env, "ptr_over_v_times_1e3": float(vals.mean()),
                      "std": float(vals.std()), "n_seeds": len(vals)})
        slug = mode_slug(mode)
        for name, header in (("rv", ["cum_violations", "mean_reward", "std_reward"]),
                             ("reward", ["env_step", "mean_reward", "std_reward"]),
                             ("viol", ["env_step", "mean_cum_violations", "std_cum_violations"])):
            grid, mean, std = metrics.aggregate_seeds(curves[mode][name])
            fname = {"rv": "reward_vs_violations", "reward": "reward_vs_steps",
                     "viol": "violations_vs_steps"}[name]
            metrics.write_curve_csv(curve_dir / f"{slug}_{fname}.csv", header,
                                    np.column_stack([grid, mean, std]))
    result = {"env": cfg.env, "seeds": list(seeds), "table": table, "runs": rows,
              "config": cfg.to_dict()}
    _write_json(Path(out_dir) / "report.json", result)
    return table


# -- entry point --------------------------------------------------------------------

COMMANDS = ("gen-demos", "train-skills", "train-risk", "train-online", "diagnose-planning",
            "evaluate", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, action="append", dest="seeds",
                        help="root seed (repeatable); defaults to the config's seeds")
    common.add_argument("--mode", choices=MODES, help="run only this online mode")
    common.add_argument("--out", type=Path, default=Path("runs"), help="artifact directory")
    common.add_argument("--env", help="environment name override")
    parser = argparse.ArgumentParser(prog="sskp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _resolve_config(args) -> RunConfig:
    if args.config is not None:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError:
            raise ConfigError("config file not found", [str(args.config)]) from None
    else:
        cfg = RunConfig()
    if args.env is not None:
        cfg = dataclasses.replace(cfg, env=args.env)
        validate(cfg)
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        seeds = tuple(args.seeds) if args.seeds else cfg.seeds
        if any(s < 0 for s in seeds):
            raise ConfigError("seeds must be non-negative", ["--seed"])
        modes = (args.mode,) if args.mode else cfg.modes
        if args.command == "report":
            result = report(cfg, seeds, args.out, modes)
            print(json.dumps(result, indent=2))
            return EXIT_OK
        for seed in seeds:
            paths = RunPaths(args.out, seed)
            if args.command == "gen-demos":
                info = gen_demos(cfg, seed, paths)
            elif args.command == "train-skills":
                info = train_skills(cfg, seed, paths)
            elif args.command == "train-risk":
                info = train_risk(cfg, seed, paths)
            elif args.command == "train-online":
                info = train_online_stage(cfg, seed, paths, modes)
            elif args.command == "diagnose-planning":
                info = diagnose(cfg, seed, paths)
            else:
                info = evaluate(cfg, seed, paths, modes)
            print(json.dumps({"command": args.command, "seed": seed, **info}, default=float))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, CheckpointMismatch) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
