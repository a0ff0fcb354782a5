"""Run configuration: ``key = value`` files with ``[section]`` headers, overridden by flags."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from typing import Optional

COMMANDS = ("params", "profile1d", "evolve1d", "evolve2d", "streamfn", "verify", "report")
LEVELS = ("quick", "full")
MODES_2D = ("physical", "rescaled")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    command: Optional[str] = None
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    out: str = "runs/out"
    seed: Optional[int] = None
    level: str = "quick"
    # grids
    grid_n1d: Optional[int] = None
    grid_nr: int = 128
    grid_nz: int = 128
    grid_box: float = 50.0
    # solvers
    tol: float = 1e-10
    max_iter: int = 400
    relax: float = 0.5
    # evolution
    dt: Optional[float] = None
    steps: Optional[int] = None
    mode: str = "physical"
    output_every: int = 1
    # report
    epsilons: tuple = (0.1, 0.05, 0.02)
    sources: list = field(default_factory=list, repr=False)

    def epsilon_value(self) -> Optional[float]:
        if self.epsilon is not None:
            return self.epsilon
        if self.alpha is not None:
            return 1.0 / 3.0 - self.alpha
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("sources")
        d["epsilons"] = list(self.epsilons)
        return d


# (section, key) in files -> attribute; flags use section.key, or key for [run]
_KEYS = {
    ("run", "command"): ("command", str),
    ("run", "alpha"): ("alpha", float),
    ("run", "epsilon"): ("epsilon", float),
    ("run", "out"): ("out", str),
    ("run", "seed"): ("seed", int),
    ("run", "level"): ("level", str),
    ("grid", "n1d"): ("grid_n1d", int),
    ("grid", "nr"): ("grid_nr", int),
    ("grid", "nz"): ("grid_nz", int),
    ("grid", "box"): ("grid_box", float),
    ("solver", "tol"): ("tol", float),
    ("solver", "max_iter"): ("max_iter", int),
    ("solver", "relax"): ("relax", float),
    ("evolution", "dt"): ("dt", float),
    ("evolution", "steps"): ("steps", int),
    ("evolution", "mode"): ("mode", str),
    ("evolution", "output_every"): ("output_every", int),
    ("report", "epsilons"): ("epsilons", "floats"),
}


def _convert(raw: str, kind):
    if kind == "floats":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    return kind(raw)


def read_file(path) -> dict:
    """Parse a config file into {attribute: raw string}; keys before any header belong to [run]."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[run]\n" + text)
    out, problems = {}, []
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            if (sec, key) not in _KEYS:
                problems.append(f"unknown key {sec}.{key}")
                continue
            out[_KEYS[(sec, key)][0]] = raw
    if problems:
        raise ConfigError(problems)
    return out


def flag_names():
    """{attribute: flag spellings}: --key for every key outside [grid], plus --section.key."""
    out = {}
    for (sec, key), (attr, _) in _KEYS.items():
        flags = [f"--{key}"] if sec != "grid" else []
        if sec != "run":
            flags.append(f"--{sec}.{key}")
        out[attr] = flags
    return out


def resolve(file_values: dict, flag_values: dict) -> RunConfig:
    """Merge file and flag values (flags win), convert types and validate everything."""
    kinds = {attr: kind for (attr, kind) in _KEYS.values()}
    merged = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    cfg = RunConfig()
    problems = []
    for attr, raw in merged.items():
        try:
            setattr(cfg, attr, _convert(str(raw), kinds[attr]))
        except (TypeError, ValueError):
            problems.append(f"{attr}: cannot read {raw!r} as {getattr(kinds[attr], '__name__', kinds[attr])}")
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig):
    problems = []
    if cfg.command not in COMMANDS:
        problems.append(f"command must be one of {', '.join(COMMANDS)}")
    needs_param = cfg.command in ("params", "profile1d", "evolve1d", "evolve2d", "streamfn")
    if cfg.alpha is not None and cfg.epsilon is not None:
        problems.append("give exactly one of alpha and epsilon, not both")
    elif needs_param and cfg.alpha is None and cfg.epsilon is None:
        problems.append("give exactly one of alpha and epsilon")
    if cfg.alpha is not None and not 0.0 < cfg.alpha <= 1.0 / 3.0:
        problems.append("alpha must lie in (0, 1/3]")
    if cfg.epsilon is not None and not 0.0 <= cfg.epsilon < 1.0 / 3.0:
        problems.append("epsilon must lie in [0, 1/3)")
    if cfg.command in ("profile1d", "evolve1d") and cfg.epsilon_value() == 0.0:
        problems.append("the profile solver needs epsilon > 0")
    rescaled = cfg.command == "evolve1d" or (cfg.command == "evolve2d" and cfg.mode == "rescaled")
    eps = cfg.epsilon_value()
    if rescaled and eps == 0.0:
        problems.append("rescaled evolution needs epsilon > 0")
    if rescaled and cfg.dt is not None and eps is not None and cfg.dt > 0.1 * eps:
        problems.append(f"rescaled dt must not exceed 0.1 epsilon = {0.1 * eps:g}")
    if cfg.level not in LEVELS:
        problems.append(f"level must be one of {', '.join(LEVELS)}")
    if cfg.mode not in MODES_2D:
        problems.append(f"mode must be one of {', '.join(MODES_2D)}")
    for name in ("grid_nr", "grid_nz"):
        if getattr(cfg, name) < 8:
            problems.append(f"{name} must be at least 8")
    if cfg.grid_n1d is not None and cfg.grid_n1d < 16:
        problems.append("grid_n1d must be at least 16")
    if cfg.grid_box <= 10:
        problems.append("grid_box must exceed 10")
    if cfg.tol <= 0:
        problems.append("tol must be positive")
    if cfg.max_iter < 1:
        problems.append("max_iter must be positive")
    if not 0 < cfg.relax <= 1:
        problems.append("relax must lie in (0, 1]")
    if cfg.dt is not None and cfg.dt <= 0:
        problems.append("dt must be positive")
    if cfg.steps is not None and cfg.steps < 1:
        problems.append("steps must be positive")
    if cfg.output_every < 1:
        problems.append("output_every must be positive")
    if cfg.seed is not None and cfg.seed < 0:
        problems.append("seed must be non-negative")
    if not cfg.epsilons or any(not 0 < e < 1.0 / 3.0 for e in cfg.epsilons):
        problems.append("report epsilons must lie in (0, 1/3)")
    return problems
