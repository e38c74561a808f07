import numpy as np
import pytest

from sskp import agent as ag
from sskp.agent import (CheckpointMismatch, OnlineConfig, ReplayBuffer, SacConfig, SkillPolicy,
                        SkillTransition, actor_loss_and_grads, check_dims, collect_decision_pairs,
                        critic_loss_and_grads, critic_targets, execute_skill, sac_update,
                        select_skill, train_online)
from sskp.env import Circle, HazardWorld2D
from sskp.nn import DiagGaussian, kl_diag
from sskp.planner import PlannerConfig
from sskp.risk import PUDataset, RiskPredictor
from sskp.skills import SkillModel
from conftest import max_rel_error, numeric_grad


def small_model(rng=None, horizon=10):
    return SkillModel(2, 2, [-0.1, -0.1], [0.1, 0.1], horizon=horizon, skill_dim=3, hidden=(8,),
                      rng=rng or np.random.default_rng(0))


def small_policy(seed=0, **kw):
    rng = np.random.default_rng(seed)
    model = small_model(rng)
    cfg = SacConfig(hidden=(6,), **kw)
    return SkillPolicy(model.prior_net, 2, 3, cfg, rng)


def fake_decode(actions):
    return lambda model, z: np.array(actions, dtype=float)


def test_execute_full_skill(monkeypatch):
    monkeypatch.setattr(ag, "decode", fake_decode([[0.01, 0.0]] * 10))
    env = HazardWorld2D()
    s0 = env.reset(np.random.default_rng(0))
    tr, visited, rewards = execute_skill(env, small_model(), np.zeros(3), s0)
    assert tr.steps_executed == 10 and not tr.violated and not tr.terminal
    assert len(visited) == 9
    np.testing.assert_allclose(tr.next_state, s0 + [0.1, 0.0])
    # independent replay on a fresh environment
    env2 = HazardWorld2D()
    env2.reset(np.random.default_rng(0))
    assert tr.reward == pytest.approx(sum(env2.step([0.01, 0.0]).reward for _ in range(10)))


def test_execute_stops_on_violation(monkeypatch):
    env = HazardWorld2D(hazards=[Circle((-0.72, -0.9), 0.05)], start_low=(-0.9, -0.9),
                        start_high=(-0.9, -0.9))
    s0 = env.reset(np.random.default_rng(0))
    monkeypatch.setattr(ag, "decode", fake_decode([[0.05, 0.0]] * 10))
    tr, visited, rewards = execute_skill(env, small_model(), np.zeros(3), s0)
    assert tr.violated and tr.terminal
    assert tr.steps_executed == 3 and len(rewards) == 3 and len(visited) == 2
    assert tr.reward == pytest.approx(sum(rewards))


def test_execute_respects_budget(monkeypatch):
    monkeypatch.setattr(ag, "decode", fake_decode([[0.01, 0.0]] * 10))
    env = HazardWorld2D()
    s0 = env.reset(np.random.default_rng(0))
    tr, _, _ = execute_skill(env, small_model(), np.zeros(3), s0, max_steps=4)
    assert tr.steps_executed == 4


def test_decision_pair_counts():
    rng = np.random.default_rng(0)
    m = small_model()
    s, z = np.zeros(2), np.ones(3)
    states, skills = collect_decision_pairs(s, z, [], m, rng)
    assert len(states) == 1 and np.all(skills[0] == z)
    states, skills = collect_decision_pairs(s, z, [np.full(2, 0.1 * i) for i in range(9)], m, rng)
    assert states.shape == (10, 2) and skills.shape == (10, 3)
    np.testing.assert_array_equal(skills[0], z)


def test_select_skill_modes():
    rng = np.random.default_rng(0)
    dist = DiagGaussian(np.zeros(3), np.full(3, 1e-4))
    z = select_skill("SSkP-w/o-RP", dist, None, np.zeros(2), PlannerConfig(), rng)
    assert z.shape == (3,) and np.all(np.abs(z) < 0.1)
    pred = RiskPredictor(2, 3, hidden=(4,), rng=rng)
    for mode in ("SSkP", "SSkP-NP"):
        assert select_skill(mode, dist, pred, np.zeros(2), PlannerConfig(), rng).shape == (3,)
        with pytest.raises(ValueError):
            select_skill(mode, dist, None, np.zeros(2), PlannerConfig(), rng)
    with pytest.raises(ValueError):
        select_skill("greedy", dist, pred, np.zeros(2), PlannerConfig(), rng)


def test_replay_buffer_fifo():
    buf = ReplayBuffer(3, 2, 3)
    for i in range(5):
        buf.add(SkillTransition(np.full(2, i), np.zeros(3), float(i), np.zeros(2), False, 10))
    assert len(buf) == 3
    assert sorted(buf.r[:3]) == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))


def hand_batch(pol):
    s = np.array([[0.1, 0.2], [0.3, -0.1]])
    return {"s": s, "z": np.array([[0.1, 0.0, -0.2], [0.5, 0.5, 0.5]]), "r": np.array([1.0, -2.0]),
            "s2": s[::-1].copy(), "steps": np.array([10, 3]), "violated": np.array([False, True]),
            "terminal": np.array([False, True])}


def test_terminal_transitions_do_not_bootstrap():
    pol = small_policy()
    b = hand_batch(pol)
    y = critic_targets(pol, b, np.zeros((2, 3)))
    assert y[1] == -2.0
    mu2 = pol.actor.predict(b["s2"])[:, :3]
    q = np.minimum(pol.q1_target.predict(np.hstack([b["s2"], mu2])),
                   pol.q2_target.predict(np.hstack([b["s2"], mu2])))[:, 0]
    out = pol.actor.predict(b["s2"])
    pri = pol.prior_net.predict(b["s2"])
    kl = kl_diag(out[:, :3], np.clip(out[:, 3:], -8, 4), pri[:, :3], np.clip(pri[:, 3:], -8, 4))
    assert y[0] == pytest.approx(1.0 + 0.99 ** 10 * (q[0] - 0.1 * kl[0]))


def test_critic_gradient_matches_finite_differences():
    for seed in range(5):
        pol = small_policy(seed)
        rng = np.random.default_rng(seed + 10)
        b = hand_batch(pol)
        b["s"] = rng.normal(size=(2, 2))
        eps = rng.normal(size=(2, 3))
        _, grads = critic_loss_and_grads(pol, b, eps)
        params = pol.q1.params + pol.q2.params
        f = lambda: critic_loss_and_grads(pol, b, eps)[0]
        assert max_rel_error(grads, numeric_grad(f, params)) < 1e-4


def test_actor_gradient_matches_finite_differences():
    for seed in range(5):
        pol = small_policy(seed)
        rng = np.random.default_rng(seed + 20)
        # move the actor off the prior so the KL term is active
        for p in pol.actor.params:
            p += rng.normal(scale=0.2, size=p.shape)
        s, eps = rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
        _, grads = actor_loss_and_grads(pol, s, eps)
        f = lambda: actor_loss_and_grads(pol, s, eps)[0]
        assert max_rel_error(grads, numeric_grad(f, pol.actor.params)) < 1e-4


def test_sac_update_runs_and_moves_targets():
    pol = small_policy(batch_size=4)
    buf = ReplayBuffer(10, 2, 3)
    rng = np.random.default_rng(0)
    for _ in range(6):
        buf.add(SkillTransition(rng.normal(size=2), rng.normal(size=3), 1.0, rng.normal(size=2),
                                False, 10))
    before = pol.q1_target.params[0].copy()
    out = sac_update(pol, buf, 4, rng)
    assert np.isfinite(out["critic_loss"]) and np.isfinite(out["actor_loss"])
    assert not np.array_equal(before, pol.q1_target.params[0])
    with pytest.raises(ValueError):
        sac_update(pol, buf, 8, rng)


def test_policy_starts_at_prior_and_validates_gamma():
    pol = small_policy()
    x = np.ones((1, 2))
    np.testing.assert_array_equal(pol.actor.predict(x), pol.prior_net.predict(x))
    with pytest.raises(ValueError):
        small_policy(gamma=1.0)


def offline_pair(model, rng):
    ds = PUDataset(2, 3)
    ds.add("p", rng.uniform(-1, 1, (5, 2)), rng.normal(size=(5, 3)))
    ds.add("u", rng.uniform(-1, 1, (20, 2)), rng.normal(size=(20, 3)))
    return RiskPredictor(2, 3, hidden=(8,), lam=0.2, rng=rng), ds


def quick_config(mode, T=200):
    return OnlineConfig(mode=mode, total_timesteps=T,
                        planner=PlannerConfig(n_samples=32, top_k=4, n_iterations=2),
                        sac=SacConfig(hidden=(8,), batch_size=16, warmup_steps=50),
                        predictor_steps=2, predictor_batch=16, checkpoint_every=100)


@pytest.mark.parametrize("mode", ["SSkP", "SSkP-NP", "SSkP-w/o-RP"])
def test_online_bookkeeping(mode):
    rng = np.random.default_rng(0)
    model = small_model(rng)
    pred, ds = offline_pair(model, rng)
    n0 = ds.n_positive + ds.n_unlabeled
    ckpts = []
    res = train_online(HazardWorld2D(), model, quick_config(mode), np.random.default_rng(1), pred,
                       ds, checkpoint_fn=lambda step, p, q: ckpts.append(step))
    log = res.log
    assert sum(r["episode_len"] for r in log) == 200
    assert log[-1]["env_step"] == 200
    assert log[-1]["cum_violations"] == res.violated_transitions
    assert ckpts == [100, 200]
    if mode != "SSkP-w/o-RP":
        # one pair per executed environment step, each routed to exactly one set
        assert res.pu_data.n_positive + res.pu_data.n_unlabeled == n0 + 200
        assert ds.n_positive + ds.n_unlabeled == n0  # caller's data untouched
    else:
        assert res.predictor is None


def test_online_is_deterministic():
    logs = []
    for _ in range(2):
        rng = np.random.default_rng(0)
        model = small_model(rng)
        pred, ds = offline_pair(model, rng)
        res = train_online(HazardWorld2D(), model, quick_config("SSkP"), np.random.default_rng(5),
                           pred, ds)
        logs.append([{k: v for k, v in r.items() if k != "wall_time"} for r in res.log])
    assert logs[0] == logs[1]


def test_dimension_mismatch_is_reported():
    model = SkillModel(3, 2, [-1, -1], [1, 1], skill_dim=3, hidden=(4,))
    with pytest.raises(CheckpointMismatch):
        check_dims(HazardWorld2D(), model, None)
    with pytest.raises(CheckpointMismatch):
        check_dims(HazardWorld2D(), small_model(), RiskPredictor(2, 4, hidden=(4,)))


def test_modes_needing_a_predictor():
    with pytest.raises(ValueError):
        train_online(HazardWorld2D(), small_model(), quick_config("SSkP"), np.random.default_rng(0))
    with pytest.raises(ValueError):
        OnlineConfig(mode="SSkP", total_timesteps=0)
