"""Small numpy multilayer perceptrons with manual backprop and Adam.

Networks work on row-major batches: inputs are ``(batch, in_dim)``.  A
Gaussian head is just an MLP whose output is split into a mean half and a
log-variance half; see :func:`split_gaussian`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
LOGVAR_MIN, LOGVAR_MAX = -8.0, 4.0


class NumericalError(FloatingPointError):
    """A loss or gradient stopped being finite."""


def _act(name):
    if name == "tanh":
        return np.tanh, lambda h: 1.0 - h * h
    if name == "relu":
        return (lambda x: np.maximum(x, 0.0)), (lambda h: (h > 0).astype(h.dtype))
    if name == "identity":
        return (lambda x: x), (lambda h: np.ones_like(h))
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Fully connected network; hidden layers share one activation, output is linear."""

    def __init__(self, sizes, activation="tanh", rng=None, zero=False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        self.activation = activation
        self._f, self._df = _act(activation)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            if zero:
                w, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
            else:
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
            self.params += [w, b]
        self._cache = None

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[-1]}")
        return x

    def predict(self, x) -> np.ndarray:
        """Forward pass without caching; safe on a shared snapshot."""
        h = self._check(x)
        n = len(self.params) // 2
        for i in range(n):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n - 1:
                h = self._f(h)
        return h

    def forward(self, x) -> np.ndarray:
        h = self._check(x)
        acts = [h]
        n = len(self.params) // 2
        for i in range(n):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n - 1:
                h = self._f(h)
            acts.append(h)
        self._cache = acts
        return h

    def backward(self, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. params and input.

        Consumes the cache left by the last :meth:`forward`.
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward()")
        acts, self._cache = self._cache, None
        g = np.asarray(grad_out, dtype=float).reshape(acts[-1].shape)
        n = len(self.params) // 2
        grads = [None] * len(self.params)
        for i in reversed(range(n)):
            if i < n - 1:
                g = g * self._df(acts[i + 1])
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.activation = self.activation
        other._f, other._df = self._f, self._df
        other.params = [p.copy() for p in self.params]
        other._cache = None
        return other

    def load_from(self, other: "Mlp") -> None:
        if other.sizes != self.sizes:
            raise ValueError(f"shape mismatch {other.sizes} vs {self.sizes}")
        for p, q in zip(self.params, other.params):
            p[...] = q

    def polyak(self, source: "Mlp", tau: float) -> None:
        for p, q in zip(self.params, source.params):
            p *= 1.0 - tau
            p += tau * q


class Adam:
    """Bias-corrected Adam acting in place on a list of arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        for g, p in zip(grads, self.params):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient; update aborted")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for g, p, m, v in zip(grads, self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- activations used by heads and losses --------------------------------------

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


# -- diagonal Gaussians ---------------------------------------------------------

@dataclass
class DiagGaussian:
    """Batched diagonal Gaussian; ``mean`` and ``var`` share a shape."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and variance shapes differ")
        if np.any(self.var <= 0):
            raise ValueError("variance must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def sample(self, rng, n=None) -> np.ndarray:
        shape = self.mean.shape if n is None else (n,) + self.mean.shape
        return self.mean + self.std * rng.standard_normal(shape)

    def __getitem__(self, idx) -> "DiagGaussian":
        return DiagGaussian(self.mean[idx], self.var[idx])


def split_gaussian(out):
    """Split raw head output into (mean, clamped log-variance, clamp mask)."""
    d = out.shape[-1] // 2
    mean, raw = out[..., :d], out[..., d:]
    logvar = np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)
    inside = (raw >= LOGVAR_MIN) & (raw <= LOGVAR_MAX)
    return mean, logvar, inside


def gaussian_head(out) -> DiagGaussian:
    mean, logvar, _ = split_gaussian(out)
    return DiagGaussian(mean, np.exp(logvar))


def join_head_grad(dmean, dlogvar, inside):
    """Gradient w.r.t. the raw head output, zero where the clamp is active."""
    return np.concatenate([dmean, dlogvar * inside], axis=-1)


def kl_diag(mean_p, logvar_p, mean_q, logvar_q):
    """KL(p || q) per row, summed over dimensions."""
    var_p, var_q = np.exp(logvar_p), np.exp(logvar_q)
    t = 0.5 * (logvar_q - logvar_p) + (var_p + (mean_p - mean_q) ** 2) / (2.0 * var_q) - 0.5
    return t.sum(axis=-1)


def kl_diag_grads(mean_p, logvar_p, mean_q, logvar_q):
    """Partial derivatives of :func:`kl_diag` w.r.t. each argument."""
    var_p, var_q = np.exp(logvar_p), np.exp(logvar_q)
    diff = mean_p - mean_q
    d_mean_p = diff / var_q
    d_logvar_p = -0.5 + 0.5 * var_p / var_q
    d_mean_q = -d_mean_p
    d_logvar_q = 0.5 - (var_p + diff ** 2) / (2.0 * var_q)
    return d_mean_p, d_logvar_p, d_mean_q, d_logvar_q


def kl_gaussians(p: DiagGaussian, q: DiagGaussian):
    return kl_diag(p.mean, np.log(p.var), q.mean, np.log(q.var))


# -- checkpoints ----------------------------------------------------------------

def save_networks(path, networks: dict, meta: dict | None = None) -> None:
    """Write named networks to one ``.npz``; reload with :func:`load_networks`."""
    arrays = {"__version__": np.array(CHECKPOINT_VERSION)}
    for name, net in networks.items():
        if "/" in name:
            raise ValueError("network names may not contain '/'")
        arrays[f"{name}/__sizes__"] = np.array(net.sizes)
        arrays[f"{name}/__activation__"] = np.array(net.activation)
        for i, p in enumerate(net.params):
            arrays[f"{name}/{i}"] = p
    if meta is not None:
        arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_networks(path):
    """Return ``(networks, meta)`` from a checkpoint written by :func:`save_networks`."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        meta = json.loads(str(data["__meta__"])) if "__meta__" in data.files else {}
        names = sorted({k.split("/")[0] for k in data.files if "/" in k})
        nets = {}
        for name in names:
            sizes = data[f"{name}/__sizes__"].tolist()
            net = Mlp(sizes, str(data[f"{name}/__activation__"]), zero=True)
            for i in range(len(net.params)):
                net.params[i] = data[f"{name}/{i}"].copy()
            nets[name] = net
    return nets, meta
