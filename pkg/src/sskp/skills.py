"""Latent skill model: action-sequence encoder, decoder and state-conditioned prior."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (Adam, DiagGaussian, Mlp, NumericalError, gaussian_head, join_head_grad,
                 kl_diag, kl_diag_grads, load_networks, save_networks, split_gaussian)


@dataclass
class SkillConfig:
    horizon: int = 10
    skill_dim: int = 10
    hidden: tuple = (64, 64)
    beta: float = 5e-4
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 60


class SkillModel:
    """Encoder q(z|a), decoder p(a|z) and prior q(z|s) sharing one skill space.

    Actions are rescaled to [-1, 1] per dimension before encoding and the
    decoder predicts in that space; :func:`decode` maps back and clamps.
    """

    def __init__(self, state_dim, action_dim, action_low, action_high, horizon=10,
                 skill_dim=10, hidden=(64, 64), rng=None, zero=False):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.action_dim = int(state_dim), int(action_dim)
        self.horizon, self.skill_dim = int(horizon), int(skill_dim)
        self.action_low = np.asarray(action_low, dtype=float)
        self.action_high = np.asarray(action_high, dtype=float)
        flat = self.horizon * self.action_dim
        hidden = list(hidden)
        self.encoder = Mlp([flat] + hidden + [2 * self.skill_dim], "tanh", rng, zero)
        self.decoder = Mlp([self.skill_dim] + hidden + [flat], "tanh", rng, zero)
        self.prior_net = Mlp([self.state_dim] + hidden + [2 * self.skill_dim], "tanh", rng, zero)

    @property
    def networks(self):
        return {"encoder": self.encoder, "decoder": self.decoder, "prior": self.prior_net}

    @property
    def params(self):
        return self.encoder.params + self.decoder.params + self.prior_net.params

    @property
    def _center(self):
        return 0.5 * (self.action_high + self.action_low)

    @property
    def _half(self):
        return 0.5 * (self.action_high - self.action_low)

    def normalize(self, actions) -> np.ndarray:
        """(..., H, action_dim) actions -> (..., H * action_dim) in [-1, 1] units."""
        a = (np.asarray(actions, dtype=float) - self._center) / self._half
        return a.reshape(a.shape[:-2] + (self.horizon * self.action_dim,))

    def denormalize(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=float)
        a = flat.reshape(flat.shape[:-1] + (self.horizon, self.action_dim))
        return a * self._half + self._center

    def meta(self) -> dict:
        return {"state_dim": self.state_dim, "action_dim": self.action_dim,
                "horizon": self.horizon, "skill_dim": self.skill_dim,
                "action_low": self.action_low.tolist(), "action_high": self.action_high.tolist()}

    def save(self, path, extra=None) -> None:
        meta = self.meta()
        meta["kind"] = "skill_model"
        if extra:
            meta.update(extra)
        save_networks(path, self.networks, meta)

    @classmethod
    def load(cls, path) -> "SkillModel":
        nets, meta = load_networks(path)
        if meta.get("kind") != "skill_model":
            raise ValueError(f"{path} is not a skill-model checkpoint")
        model = cls(meta["state_dim"], meta["action_dim"], meta["action_low"], meta["action_high"],
                    meta["horizon"], meta["skill_dim"], hidden=nets["encoder"].sizes[1:-1], zero=True)
        model.encoder, model.decoder, model.prior_net = nets["encoder"], nets["decoder"], nets["prior"]
        return model


def encode(model: SkillModel, actions) -> DiagGaussian:
    actions = np.asarray(actions, dtype=float)
    if actions.shape[-2:] != (model.horizon, model.action_dim):
        raise ValueError(f"expected ({model.horizon}, {model.action_dim}) action sequence, "
                         f"got {actions.shape[-2:]}")
    single = actions.ndim == 2
    g = gaussian_head(model.encoder.predict(model.normalize(actions)))
    return g[0] if single else g


def decode(model: SkillModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.skill_dim:
        raise ValueError(f"skill must have length {model.skill_dim}")
    single = z.ndim == 1
    a = np.clip(model.denormalize(model.decoder.predict(z)), model.action_low, model.action_high)
    return a[0] if single else a


def prior(model: SkillModel, state) -> DiagGaussian:
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != model.state_dim:
        raise ValueError(f"state must have length {model.state_dim}")
    g = gaussian_head(model.prior_net.predict(state))
    return g[0] if state.ndim == 1 else g


def extract_windows(trajectories, horizon):
    """All length-``horizon`` action windows with their start states."""
    states, actions = [], []
    for traj in trajectories:
        for t in range(len(traj) - horizon + 1):
            states.append(traj.states[t])
            actions.append(traj.actions[t:t + horizon])
    if not states:
        return None, None
    return np.array(states), np.array(actions)


def skill_loss(model: SkillModel, states, actions, eps, beta):
    """Loss and parameter gradients for one batch with fixed reparameterization noise.

    loss = MSE(decode(z), a) + beta * KL(q(z|a) || N(0, I))
           + KL(stopgrad q(z|a) || q(z|s)),  z = mu + sigma * eps
    """
    n = len(states)
    target = model.normalize(actions)
    enc_out = model.encoder.forward(target)
    mu_e, lv_e, in_e = split_gaussian(enc_out)
    std_e = np.exp(0.5 * lv_e)
    z = mu_e + std_e * eps
    rec = model.decoder.forward(z)
    err = rec - target
    recon = float(np.mean(err ** 2))
    zeros = np.zeros_like(mu_e)
    kl_reg = kl_diag(mu_e, lv_e, zeros, zeros)
    pr_out = model.prior_net.forward(states)
    mu_p, lv_p, in_p = split_gaussian(pr_out)
    kl_prior = kl_diag(mu_e, lv_e, mu_p, lv_p)
    loss = recon + beta * kl_reg.mean() + kl_prior.mean()

    g_dec, dz = model.decoder.backward(2.0 * err / err.size)
    dmu_r, dlv_r, _, _ = kl_diag_grads(mu_e, lv_e, zeros, zeros)
    dmu_e = dz + beta * dmu_r / n
    dlv_e = dz * eps * 0.5 * std_e + beta * dlv_r / n
    g_enc, _ = model.encoder.backward(join_head_grad(dmu_e, dlv_e, in_e))
    _, _, dmu_p, dlv_p = kl_diag_grads(mu_e, lv_e, mu_p, lv_p)
    g_pr, _ = model.prior_net.backward(join_head_grad(dmu_p / n, dlv_p / n, in_p))
    parts = {"recon": recon, "kl": float(kl_reg.mean()), "prior_kl": float(kl_prior.mean())}
    return float(loss), parts, g_enc + g_dec + g_pr


def explained_variance(model: SkillModel, actions) -> float:
    """1 - SSE/SST of decode(encode-mean(a)) over a batch of windows."""
    actions = np.asarray(actions, dtype=float)
    recon = decode(model, encode(model, actions).mean)
    sse = np.sum((recon - actions) ** 2)
    sst = np.sum((actions - actions.mean(axis=0)) ** 2)
    return float(1.0 - sse / sst)


def train_skill_model(trajectories, env_spec, config: SkillConfig, rng):
    """Fit a :class:`SkillModel` on overlapping demo windows.

    Returns ``(model, log)`` where ``log`` holds per-epoch mean losses.
    """
    states, actions = extract_windows(trajectories, config.horizon)
    if states is None:
        raise ValueError(f"no trajectory is at least {config.horizon} steps long")
    model = SkillModel(env_spec.state_dim, env_spec.action_dim, env_spec.low, env_spec.high,
                       config.horizon, config.skill_dim, config.hidden, rng)
    opt = Adam(model.params, lr=config.lr)
    n = len(states)
    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = {"loss": 0.0, "recon": 0.0, "kl": 0.0, "prior_kl": 0.0}
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            eps = rng.standard_normal((len(idx), config.skill_dim))
            loss, parts, grads = skill_loss(model, states[idx], actions[idx], eps, config.beta)
            if not np.isfinite(loss):
                raise NumericalError(f"skill loss became {loss} in epoch {epoch}")
            opt.step(grads)
            sums["loss"] += loss
            for k, v in parts.items():
                sums[k] += v
            batches += 1
        log.append({"epoch": epoch + 1, **{k: v / batches for k, v in sums.items()}})
    return model, log
