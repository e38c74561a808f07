"""Run configuration: flat ``key = value`` files with dotted sections, plus seeding.

Example::

    env = HazardWorld2D
    seeds = 0, 1, 2
    planner.n_samples = 512
    online.total_timesteps = 50000
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import MODES, OnlineConfig, SacConfig
from .env import ENVIRONMENTS
from .planner import PlannerConfig
from .risk import RiskConfig
from .skills import SkillConfig

# Stage ids for splitting the root seed; fixed so artifacts stay reproducible.
STAGES = {"demos": 0, "skills": 1, "risk": 2, "online": 3, "diagnose": 4, "evaluate": 5}


class ConfigError(ValueError):
    """Bad config file; ``keys`` names the offending entries."""

    def __init__(self, message, keys=()):
        self.keys = tuple(keys)
        super().__init__(message + (f": {', '.join(self.keys)}" if self.keys else ""))


def stage_rng(root_seed: int, stage: str) -> np.random.Generator:
    """Independent generator for one pipeline stage of one root seed."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if not 0 <= int(root_seed) < 2 ** 64:
        raise ValueError("root seed must fit in 64 unsigned bits")
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=(STAGES[stage],)))


@dataclass
class DemoConfig:
    n_trajectories: int = 300
    noise_scale: float = 0.05


@dataclass
class DiagnoseConfig:
    n_states: int = 100


@dataclass
class RunConfig:
    env: str = "HazardWorld2D"
    seeds: tuple = (0, 1, 2)
    modes: tuple = MODES
    window: int = 10
    demo: DemoConfig = field(default_factory=DemoConfig)
    skills: SkillConfig = field(default_factory=SkillConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)

    def online_config(self, mode) -> OnlineConfig:
        return dataclasses.replace(self.online, mode=mode, planner=self.planner, sac=self.sac)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_text(self) -> str:
        """Round-trips through :func:`parse_config`."""
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in flatten(self.to_dict()).items())


_SECTIONS = ("demo", "skills", "risk", "planner", "sac", "online", "diagnose")
# online.mode/planner/sac are set per run, not from the file
_SKIP = {"online.mode", "online.planner", "online.sac"}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (tuple, list)):
        return [_plain(v) for v in x]
    return x


def flatten(d, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = prefix + k
        if key in _SKIP:
            continue
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _fmt(v) -> str:
    if isinstance(v, list):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "auto"
    return repr(v) if isinstance(v, float) else str(v)


def _convert(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(raw)
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        kind = type(default[0]) if default else str
        return tuple(kind(s) for s in items)
    if default is None or isinstance(default, float):
        if raw.lower() in ("auto", "none"):
            if default is None:
                return None
            raise ValueError(raw)
        return float(raw)
    if isinstance(default, int):
        return int(raw)
    return raw


def read_pairs(text: str) -> dict:
    """Raw ``key -> string`` mapping from flat config text."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config ({exc.__class__.__name__})") from None
    return dict(parser["root"])


def parse_config(text: str) -> RunConfig:
    """Build a :class:`RunConfig` from flat text; unknown or malformed keys raise."""
    pairs = read_pairs(text)
    base = RunConfig()
    defaults = flatten(dataclasses.asdict(base))
    unknown = sorted(k for k in pairs if k not in defaults)
    if unknown:
        raise ConfigError("unknown config keys", unknown)
    values, bad = {}, []
    for key, raw in pairs.items():
        try:
            values[key] = _convert(raw, defaults[key])
        except (TypeError, ValueError):
            bad.append(key)
    if bad:
        raise ConfigError("malformed values", sorted(bad))
    return _assemble(base, values)


def _assemble(base: RunConfig, values: dict) -> RunConfig:
    top, nested = {}, {s: {} for s in _SECTIONS}
    for key, v in values.items():
        head, _, rest = key.partition(".")
        (nested[head].__setitem__(rest, v) if rest else top.__setitem__(head, v))
    try:
        parts = {s: dataclasses.replace(getattr(base, s), **kw) for s, kw in nested.items()}
        cfg = dataclasses.replace(base, **top, **parts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid values ({exc})", sorted(values)) from None
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Raise :class:`ConfigError` naming every out-of-range key."""
    bad = []
    if cfg.env not in ENVIRONMENTS:
        bad.append("env")
    if not cfg.seeds or any(s < 0 for s in cfg.seeds):
        bad.append("seeds")
    if not cfg.modes or any(m not in MODES for m in cfg.modes):
        bad.append("modes")
    if cfg.window < 1:
        bad.append("window")
    if cfg.demo.n_trajectories < 1:
        bad.append("demo.n_trajectories")
    if cfg.demo.noise_scale < 0:
        bad.append("demo.noise_scale")
    if cfg.online.total_timesteps < 1:
        bad.append("online.total_timesteps")
    if cfg.skills.horizon < 1 or cfg.skills.skill_dim < 1:
        bad.append("skills.horizon/skill_dim")
    if cfg.risk.lam is not None and not 0 < cfg.risk.lam < 1:
        bad.append("risk.lam")
    if not 0 < cfg.sac.gamma < 1:
        bad.append("sac.gamma")
    if cfg.diagnose.n_states < 1:
        bad.append("diagnose.n_states")
    if bad:
        raise ConfigError("invalid values", bad)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    return parse_config(path.read_text())
