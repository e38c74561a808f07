"""PU decision data and the skill risk predictor trained with the non-negative PU loss."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Adam, Mlp, NumericalError, load_networks, log_sigmoid, save_networks, sigmoid
from .skills import SkillModel, encode, prior

LAMBDA_MIN, LAMBDA_MAX = 0.02, 0.5


class PUDataset:
    """Positive (``D^p``) and unlabeled (``D^u``) state-skill pairs.

    Pairs are appended in chunks; the concatenated arrays are built lazily.
    """

    def __init__(self, state_dim, skill_dim):
        self.state_dim, self.skill_dim = int(state_dim), int(skill_dim)
        self._chunks = {"p": [], "u": []}
        self._cat = {}

    def add(self, label, states, skills) -> None:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        skills = np.atleast_2d(np.asarray(skills, dtype=float))
        if label not in self._chunks:
            raise ValueError("label must be 'p' or 'u'")
        if states.shape[1] != self.state_dim or skills.shape[1] != self.skill_dim:
            raise ValueError("pair dimensions do not match the dataset")
        if len(states) != len(skills):
            raise ValueError("states and skills must pair up")
        if len(states):
            self._chunks[label].append(np.hstack([states, skills]))
            self._cat.pop(label, None)

    def pairs(self, label) -> np.ndarray:
        """``(n, state_dim + skill_dim)`` array of concatenated pairs."""
        if label not in self._cat:
            chunks = self._chunks[label]
            self._cat[label] = (np.vstack(chunks) if chunks
                                else np.zeros((0, self.state_dim + self.skill_dim)))
            self._chunks[label] = [self._cat[label]] if chunks else []
        return self._cat[label]

    @property
    def positives(self):
        return self.pairs("p")

    @property
    def unlabeled(self):
        return self.pairs("u")

    @property
    def n_positive(self):
        return len(self.positives)

    @property
    def n_unlabeled(self):
        return len(self.unlabeled)

    def copy(self) -> "PUDataset":
        out = PUDataset(self.state_dim, self.skill_dim)
        for label in "pu":
            out.add(label, self.pairs(label)[:, :self.state_dim], self.pairs(label)[:, self.state_dim:])
        return out

    def save(self, path) -> None:
        d = self.state_dim
        with Path(path).open("w") as fh:
            fh.write(json.dumps({"state_dim": self.state_dim, "skill_dim": self.skill_dim}) + "\n")
            for label in "pu":
                for row in self.pairs(label):
                    fh.write(json.dumps({"state": row[:d].tolist(), "skill": row[d:].tolist(),
                                         "label": label}) + "\n")

    @classmethod
    def load(cls, path) -> "PUDataset":
        with Path(path).open() as fh:
            header = json.loads(fh.readline())
            ds = cls(header["state_dim"], header["skill_dim"])
            rows = {"p": ([], []), "u": ([], [])}
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    rows[r["label"]][0].append(r["state"])
                    rows[r["label"]][1].append(r["skill"])
        for label, (s, z) in rows.items():
            if s:
                ds.add(label, s, z)
        return ds


def label_positive(traj_len, violated, t, horizon) -> bool:
    """A violation lands in steps t .. t+H-1 (it can only be the last step)."""
    return bool(violated) and traj_len - 1 <= t + horizon - 1


def assemble_pu_data(trajectories, skill_model: SkillModel, horizon, rng) -> PUDataset:
    """One decision pair per demo step.

    The skill is the encoder mean of ``a[t:t+H]`` when the window fits in the
    trajectory, otherwise a draw from the prior at ``s_t``.
    """
    if skill_model is None:
        raise ValueError("assembling PU data needs a trained skill model")
    if not trajectories:
        raise ValueError("no demonstrations")
    ds = PUDataset(skill_model.state_dim, skill_model.skill_dim)
    for traj in trajectories:
        n = len(traj)
        skills = np.empty((n, skill_model.skill_dim))
        n_full = max(n - horizon + 1, 0)
        if n_full:
            windows = np.stack([traj.actions[t:t + horizon] for t in range(n_full)])
            skills[:n_full] = encode(skill_model, windows).mean
        if n_full < n:
            skills[n_full:] = prior(skill_model, traj.states[n_full:]).sample(rng)
        pos = np.array([label_positive(n, traj.violated, t, horizon) for t in range(n)])
        ds.add("p", traj.states[pos], skills[pos])
        ds.add("u", traj.states[~pos], skills[~pos])
    return ds


def estimate_class_prior(ds: PUDataset, lo=LAMBDA_MIN, hi=LAMBDA_MAX) -> float:
    """Observed positive fraction, clamped to ``[lo, hi]``."""
    if ds.n_positive == 0:
        raise ValueError("class prior needs at least one positive pair")
    frac = ds.n_positive / (ds.n_positive + ds.n_unlabeled)
    return float(np.clip(frac, lo, hi))


class RiskPredictor:
    """P(c=1 | s, z) as a sigmoid over an MLP on the concatenated pair."""

    def __init__(self, state_dim, skill_dim, hidden=(64, 64, 64), lam=0.1, xi=0.0,
                 rng=None, zero=False):
        if not 0.0 <= lam < 1.0:
            raise ValueError("class prior must lie in [0, 1)")
        if xi < 0:
            raise ValueError("slack must be non-negative")
        self.state_dim, self.skill_dim = int(state_dim), int(skill_dim)
        self.net = Mlp([self.state_dim + self.skill_dim] + list(hidden) + [1], "tanh", rng, zero)
        self.lam, self.xi = float(lam), float(xi)

    def logits(self, x) -> np.ndarray:
        return self.net.predict(x)[:, 0]

    def __call__(self, state, skills) -> np.ndarray:
        """Risk of each skill row at one shared ``state`` (or row-aligned states)."""
        skills = np.atleast_2d(skills)
        state = np.asarray(state, dtype=float)
        states = np.broadcast_to(state, (len(skills), self.state_dim))
        return sigmoid(self.logits(np.hstack([states, skills])))

    def copy(self) -> "RiskPredictor":
        out = RiskPredictor.__new__(RiskPredictor)
        out.state_dim, out.skill_dim = self.state_dim, self.skill_dim
        out.net, out.lam, out.xi = self.net.copy(), self.lam, self.xi
        return out

    def save(self, path) -> None:
        save_networks(path, {"risk": self.net},
                      {"kind": "risk_predictor", "lam": self.lam, "xi": self.xi,
                       "state_dim": self.state_dim, "skill_dim": self.skill_dim})

    @classmethod
    def load(cls, path) -> "RiskPredictor":
        nets, meta = load_networks(path)
        if meta.get("kind") != "risk_predictor":
            raise ValueError(f"{path} is not a risk-predictor checkpoint")
        out = cls(meta["state_dim"], meta["skill_dim"], lam=meta["lam"], xi=meta["xi"], zero=True)
        out.net = nets["risk"]
        return out


def predict_risk(predictor: RiskPredictor, state, skill):
    p = predictor(state, skill)
    return float(p[0]) if np.ndim(skill) == 1 else p


def _nonempty(x, what):
    if len(x) == 0:
        raise ValueError(f"{what} batch is empty")


def positive_loss(probs) -> float:
    """-mean log P over a batch of predicted positive-class probabilities."""
    probs = np.asarray(probs, dtype=float)
    _nonempty(probs, "positive")
    return float(-np.mean(np.log(probs)))


def negative_loss(probs) -> float:
    """-mean log(1 - P): the loss of calling every example negative."""
    probs = np.asarray(probs, dtype=float)
    _nonempty(probs, "negative")
    return float(-np.mean(np.log1p(-probs)))


def pu_terms(logit_p, logit_u):
    """The three empirical risks from logits, computed stably."""
    l1_p = -np.mean(log_sigmoid(logit_p))
    l0_p = -np.mean(log_sigmoid(-logit_p))
    l0_u = -np.mean(log_sigmoid(-logit_u))
    return float(l1_p), float(l0_p), float(l0_u)


def pu_loss_and_grads(predictor: RiskPredictor, xp, xu):
    """Non-negative PU loss and its parameter gradients.

    loss = lam * L1(P) + max(-xi, L0(U) - lam * L0(P)).  When the max is
    clamped only the first term back-propagates.
    """
    _nonempty(xp, "positive")
    _nonempty(xu, "unlabeled")
    lam, xi = predictor.lam, predictor.xi
    n_p, n_u = len(xp), len(xu)
    logits = predictor.net.forward(np.vstack([xp, xu]))[:, 0]
    lp, lu = logits[:n_p], logits[n_p:]
    l1_p, l0_p, l0_u = pu_terms(lp, lu)
    neg_risk = l0_u - lam * l0_p
    clamped = neg_risk < -xi
    loss = lam * l1_p + (-xi if clamped else neg_risk)
    sp, su = sigmoid(lp), sigmoid(lu)
    g = np.empty(n_p + n_u)
    g[:n_p] = lam * (sp - 1.0) / n_p
    g[n_p:] = 0.0
    if not clamped:
        g[:n_p] -= lam * sp / n_p
        g[n_p:] = su / n_u
    grads, _ = predictor.net.backward(g[:, None])
    info = {"loss": loss, "l1_p": l1_p, "l0_p": l0_p, "l0_u": l0_u, "neg_risk": neg_risk,
            "second_term": -xi if clamped else neg_risk, "clamped": bool(clamped)}
    return loss, grads, info


def pu_loss(predictor: RiskPredictor, xp, xu) -> float:
    lp, lu = predictor.logits(xp), predictor.logits(xu)
    _nonempty(lp, "positive")
    _nonempty(lu, "unlabeled")
    l1_p, l0_p, l0_u = pu_terms(lp, lu)
    return predictor.lam * l1_p + max(-predictor.xi, l0_u - predictor.lam * l0_p)


def _draw(rng, n_avail, n):
    return rng.choice(n_avail, size=n, replace=n_avail < n)


def update_predictor(predictor: RiskPredictor, ds: PUDataset, optimizer: Adam, n_steps,
                     batch_size, rng, log=None) -> float:
    """``n_steps`` Adam steps on minibatches with equal positive/unlabeled counts."""
    xp, xu = ds.positives, ds.unlabeled
    _nonempty(xp, "positive")
    _nonempty(xu, "unlabeled")
    half = max(batch_size // 2, 1)
    loss = float("nan")
    for _ in range(n_steps):
        ip, iu = _draw(rng, len(xp), half), _draw(rng, len(xu), half)
        loss, grads, info = pu_loss_and_grads(predictor, xp[ip], xu[iu])
        if not np.isfinite(loss):
            raise NumericalError(f"PU loss became {loss}")
        optimizer.step(grads)
        if log is not None:
            log.append(info)
    return loss


@dataclass
class RiskConfig:
    hidden: tuple = (64, 64, 64)
    xi: float = 0.0
    lam: float | None = None  # None: estimate from the data
    lr: float = 1e-3
    batch_size: int = 256
    steps: int = 2000


def train_risk_predictor(ds: PUDataset, config: RiskConfig, rng):
    lam = estimate_class_prior(ds) if config.lam is None else config.lam
    predictor = RiskPredictor(ds.state_dim, ds.skill_dim, config.hidden, lam, config.xi, rng)
    opt = Adam(predictor.net.params, lr=config.lr)
    log = []
    update_predictor(predictor, ds, opt, config.steps, config.batch_size, rng, log)
    return predictor, opt, log
