"""Online safe policy learning with risk-planned skills and a KL-regularized SAC."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import planner as plan
from .nn import (Adam, DiagGaussian, Mlp, gaussian_head, join_head_grad, kl_diag,
                 kl_diag_grads, save_networks, split_gaussian)
from .risk import PUDataset, RiskPredictor, estimate_class_prior, update_predictor
from .skills import SkillModel, decode, prior

MODES = ("SSkP", "SSkP-NP", "SSkP-w/o-RP")


class CheckpointMismatch(ValueError):
    pass


def mode_slug(mode: str) -> str:
    return mode.replace("/", "")


def uses_predictor(mode: str) -> bool:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    return mode != "SSkP-w/o-RP"


@dataclass
class SkillTransition:
    state: np.ndarray
    skill: np.ndarray
    reward: float
    next_state: np.ndarray
    violated: bool
    steps_executed: int
    terminal: bool = False  # violation or goal: no bootstrap
    truncated: bool = False


class ReplayBuffer:
    """Fixed-capacity FIFO ring of skill transitions stored column-wise."""

    def __init__(self, capacity, state_dim, skill_dim):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.z = np.zeros((capacity, skill_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.steps = np.zeros(capacity, dtype=int)
        self.violated = np.zeros(capacity, dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.index = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, tr: SkillTransition) -> None:
        i = self.index
        self.s[i], self.z[i], self.r[i], self.s2[i] = tr.state, tr.skill, tr.reward, tr.next_state
        self.steps[i], self.violated[i], self.terminal[i] = tr.steps_executed, tr.violated, tr.terminal
        self.index = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng) -> dict:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return {"s": self.s[idx], "z": self.z[idx], "r": self.r[idx], "s2": self.s2[idx],
                "steps": self.steps[idx], "violated": self.violated[idx],
                "terminal": self.terminal[idx]}


@dataclass
class SacConfig:
    gamma: float = 0.99
    alpha: float = 0.1
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    hidden: tuple = (64, 64)
    warmup_steps: int = 1000
    buffer_capacity: int = 100_000


class SkillPolicy:
    """Gaussian skill policy with twin critics and Polyak-averaged targets.

    The policy network starts as a copy of the skill prior.
    """

    def __init__(self, prior_net: Mlp, state_dim, skill_dim, config: SacConfig, rng):
        if not 0.0 < config.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.state_dim, self.skill_dim = int(state_dim), int(skill_dim)
        self.config = config
        self.prior_net = prior_net
        self.actor = prior_net.copy()
        sizes = [self.state_dim + self.skill_dim] + list(config.hidden) + [1]
        self.q1, self.q2 = Mlp(sizes, "relu", rng), Mlp(sizes, "relu", rng)
        self.q1_target, self.q2_target = self.q1.copy(), self.q2.copy()
        self.actor_opt = Adam(self.actor.params, lr=config.lr)
        self.critic_opt = Adam(self.q1.params + self.q2.params, lr=config.lr)

    @property
    def alpha(self):
        return self.config.alpha

    @property
    def gamma(self):
        return self.config.gamma

    def distribution(self, state) -> DiagGaussian:
        g = gaussian_head(self.actor.predict(state))
        return g[0] if np.ndim(state) == 1 else g

    def networks(self) -> dict:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}


def _min_q(qa, qb, x):
    return np.minimum(qa.predict(x)[:, 0], qb.predict(x)[:, 0])


def critic_targets(policy: SkillPolicy, batch, eps_next):
    """Bootstrapped targets with the prior-KL penalty in place of entropy."""
    mu2, lv2, _ = split_gaussian(policy.actor.predict(batch["s2"]))
    z2 = mu2 + np.exp(0.5 * lv2) * eps_next
    pm, plv, _ = split_gaussian(policy.prior_net.predict(batch["s2"]))
    kl2 = kl_diag(mu2, lv2, pm, plv)
    q_next = _min_q(policy.q1_target, policy.q2_target, np.hstack([batch["s2"], z2]))
    discount = policy.gamma ** batch["steps"] * (1.0 - batch["terminal"])
    return batch["r"] + discount * (q_next - policy.alpha * kl2)


def critic_loss_and_grads(policy: SkillPolicy, batch, eps_next):
    """Sum of the two critics' mean squared TD errors and their gradients."""
    y = critic_targets(policy, batch, eps_next)
    x = np.hstack([batch["s"], batch["z"]])
    n = len(y)
    loss, grads = 0.0, []
    for q in (policy.q1, policy.q2):
        err = q.forward(x)[:, 0] - y
        loss += float(np.mean(err ** 2))
        g, _ = q.backward((2.0 * err / n)[:, None])
        grads += g
    return loss, grads


def actor_loss_and_grads(policy: SkillPolicy, states, eps):
    """alpha * KL(pi(.|s) || prior(.|s)) - min(Q1, Q2)(s, z), z reparameterized."""
    n = len(states)
    out = policy.actor.forward(states)
    mu, lv, inside = split_gaussian(out)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    x = np.hstack([states, z])
    q1 = policy.q1.forward(x)[:, 0]
    _, gx1 = policy.q1.backward(np.ones((n, 1)))
    q2 = policy.q2.forward(x)[:, 0]
    _, gx2 = policy.q2.backward(np.ones((n, 1)))
    use1 = (q1 <= q2)[:, None]
    dq_dz = np.where(use1, gx1, gx2)[:, policy.state_dim:]
    pm, plv, _ = split_gaussian(policy.prior_net.predict(states))
    kl = kl_diag(mu, lv, pm, plv)
    loss = float(np.mean(policy.alpha * kl - np.minimum(q1, q2)))
    dmu_kl, dlv_kl, _, _ = kl_diag_grads(mu, lv, pm, plv)
    dz = -dq_dz / n
    dmu = dz + policy.alpha * dmu_kl / n
    dlv = dz * eps * 0.5 * std + policy.alpha * dlv_kl / n
    grads, _ = policy.actor.backward(join_head_grad(dmu, dlv, inside))
    return loss, grads


def sac_update(policy: SkillPolicy, buffer: ReplayBuffer, batch_size, rng) -> dict:
    batch = buffer.sample(batch_size, rng)
    eps_next = rng.standard_normal((batch_size, policy.skill_dim))
    c_loss, c_grads = critic_loss_and_grads(policy, batch, eps_next)
    policy.critic_opt.step(c_grads)
    eps = rng.standard_normal((batch_size, policy.skill_dim))
    a_loss, a_grads = actor_loss_and_grads(policy, batch["s"], eps)
    policy.actor_opt.step(a_grads)
    policy.q1_target.polyak(policy.q1, policy.config.tau)
    policy.q2_target.polyak(policy.q2, policy.config.tau)
    return {"critic_loss": c_loss, "actor_loss": a_loss}


# -- acting -----------------------------------------------------------------------

def select_skill(mode, policy_dist: DiagGaussian, predictor, state, planner_config, rng,
                 prior_dist: DiagGaussian | None = None):
    """Pick the skill to execute at ``state`` according to the run mode."""
    if uses_predictor(mode) and predictor is None:
        raise ValueError(f"mode {mode} needs a risk predictor")
    if mode == "SSkP":
        return plan.risk_planning(policy_dist, predictor, state, planner_config, rng,
                                  prior_dist=prior_dist)
    if mode == "SSkP-NP":
        return plan.naive_planning(policy_dist, predictor, state, planner_config.n_samples, rng)
    return policy_dist.sample(rng)


def execute_skill(env, skill_model: SkillModel, skill, state, max_steps=None):
    """Roll the decoded action sequence out until it ends or the episode stops.

    Returns ``(transition, visited, rewards)`` where ``visited`` holds the
    interior states s_{t+1} .. s_{t'-1}.
    """
    actions = decode(skill_model, skill)
    if max_steps is not None:
        actions = actions[:max_steps]
    rewards, visited = [], []
    s = np.asarray(state, dtype=float)
    res = None
    for k, a in enumerate(actions):
        if k:
            visited.append(s)
        res = env.step(a)
        rewards.append(res.reward)
        s = res.next_state
        if res.terminated or res.truncated:
            break
    violated = res.cost > 0
    tr = SkillTransition(np.asarray(state, dtype=float), np.asarray(skill, dtype=float),
                         float(np.sum(rewards)), s, bool(violated), len(rewards),
                         terminal=bool(res.terminated), truncated=bool(res.truncated))
    return tr, visited, rewards


def collect_decision_pairs(state, skill, visited, skill_model: SkillModel, rng):
    """``(states, skills)`` for the executed decision plus prior draws at interior states."""
    states = [np.asarray(state, dtype=float)] + [np.asarray(v, dtype=float) for v in visited]
    skills = [np.asarray(skill, dtype=float)]
    if visited:
        pr = gaussian_head(skill_model.prior_net.predict(np.array(visited)))
        skills += list(pr.sample(rng))
    return np.array(states), np.array(skills)


# -- training loop ------------------------------------------------------------------

@dataclass
class OnlineConfig:
    mode: str = "SSkP"
    total_timesteps: int = 50_000
    planner: plan.PlannerConfig = field(default_factory=plan.PlannerConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    predictor_steps: int = 64
    predictor_batch: int = 256
    predictor_lr: float = 1e-3
    checkpoint_every: int = 10_000

    def __post_init__(self):
        uses_predictor(self.mode)
        if self.total_timesteps < 1:
            raise ValueError("total_timesteps must be >= 1")


@dataclass
class RunResult:
    log: list
    summary: dict
    policy: SkillPolicy
    predictor: RiskPredictor | None
    pu_data: PUDataset | None
    violated_transitions: int


def check_dims(env, skill_model: SkillModel, predictor: RiskPredictor | None):
    spec = env.spec
    if skill_model.state_dim != spec.state_dim or skill_model.action_dim != spec.action_dim:
        raise CheckpointMismatch(
            f"skill model expects state/action dims {skill_model.state_dim}/{skill_model.action_dim}, "
            f"environment {spec.name} has {spec.state_dim}/{spec.action_dim}")
    if predictor is not None and (predictor.state_dim != skill_model.state_dim
                                  or predictor.skill_dim != skill_model.skill_dim):
        raise CheckpointMismatch(
            f"risk predictor expects state/skill dims {predictor.state_dim}/{predictor.skill_dim}, "
            f"skill model has {skill_model.state_dim}/{skill_model.skill_dim}")


def train_online(env, skill_model: SkillModel, config: OnlineConfig, rng,
                 predictor: RiskPredictor | None = None, pu_data: PUDataset | None = None,
                 checkpoint_fn=None) -> RunResult:
    """Run online learning for ``config.total_timesteps`` environment steps.

    ``checkpoint_fn(env_step, policy, predictor)`` is called every
    ``config.checkpoint_every`` steps when given.
    """
    mode = config.mode
    if uses_predictor(mode):
        if predictor is None or pu_data is None:
            raise ValueError(f"mode {mode} needs a risk predictor and its PU data")
        predictor = predictor.copy()
        pu_data = pu_data.copy()
    else:
        predictor = pu_data = None
    check_dims(env, skill_model, predictor)

    env_rng, act_rng, sac_rng, pu_rng = rng.spawn(4)
    policy = SkillPolicy(skill_model.prior_net, skill_model.state_dim, skill_model.skill_dim,
                         config.sac, sac_rng)
    buffer = ReplayBuffer(config.sac.buffer_capacity, skill_model.state_dim, skill_model.skill_dim)
    pred_opt = Adam(predictor.net.params, lr=config.predictor_lr) if predictor else None

    log = []
    env_step = episode = cum_violations = violated_transitions = 0
    next_ckpt = config.checkpoint_every
    t0 = time.perf_counter()
    while env_step < config.total_timesteps:
        state = env.reset(env_rng)
        ep_reward, ep_len, ep_violated = 0.0, 0, False
        while True:
            budget = config.total_timesteps - env_step
            prior_dist = (prior(skill_model, state) if config.planner.init == "prior_moments"
                          else None)
            skill = select_skill(mode, policy.distribution(state), predictor, state,
                                 config.planner, act_rng, prior_dist)
            tr, visited, rewards = execute_skill(env, skill_model, skill, state,
                                                 min(skill_model.horizon, budget))
            buffer.add(tr)
            env_step += tr.steps_executed
            ep_len += tr.steps_executed
            ep_reward += tr.reward
            violated_transitions += tr.violated
            if predictor is not None:
                ps, pz = collect_decision_pairs(tr.state, tr.skill, visited, skill_model, pu_rng)
                pu_data.add("p" if tr.violated else "u", ps, pz)
            if env_step >= config.sac.warmup_steps and len(buffer) >= config.sac.batch_size:
                sac_update(policy, buffer, config.sac.batch_size, sac_rng)
            if checkpoint_fn is not None and env_step >= next_ckpt:
                checkpoint_fn(next_ckpt, policy, predictor)
                next_ckpt += config.checkpoint_every
            state = tr.next_state
            if tr.terminal or tr.truncated or env_step >= config.total_timesteps:
                ep_violated = tr.violated
                break
        episode += 1
        cum_violations += ep_violated
        log.append({"env_step": env_step, "episode": episode, "episode_reward": ep_reward,
                    "episode_len": ep_len, "violated": int(ep_violated),
                    "cum_violations": cum_violations,
                    "wall_time": time.perf_counter() - t0})
        if predictor is not None and pu_data.n_positive > 0:
            predictor.lam = estimate_class_prior(pu_data)
            update_predictor(predictor, pu_data, pred_opt, config.predictor_steps,
                             config.predictor_batch, pu_rng)

    summary = {"mode": mode, "total_timesteps": env_step, "episodes": episode,
               "violations": cum_violations, "total_reward": float(sum(r["episode_reward"] for r in log))}
    return RunResult(log, summary, policy, predictor, pu_data, violated_transitions)


def save_policy(path, policy: SkillPolicy, extra=None):
    meta = {"kind": "skill_policy", "state_dim": policy.state_dim, "skill_dim": policy.skill_dim,
            "sac": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(policy.config).items()}}
    if extra:
        meta.update(extra)
    save_networks(path, policy.networks(), meta)
