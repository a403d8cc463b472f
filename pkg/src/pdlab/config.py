"""Run configuration: desk-scale defaults, a flat text format, validation.

The file format is one `key = value` per line, `#` starts a comment,
blank lines ignored. Keys mirror the RunConfig fields exactly, so a config
written by format_config parses back to an equal config.

Defaults are scaled for minutes of CPU: 5000 train / 1000 test examples,
batch 100, 300 steps, clamped-linear decay hitting its floor at the last
step. AdaGrad and Adam default to a constant gamma because they carry
their own per-entry decay; an explicit `schedule =` line overrides that.
"""

from dataclasses import dataclass, fields, replace

from .optim import Schedule, UpdateRule


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    optimizer: str = "percent_delta"
    eta: float = 0.03
    schedule: str = "clamped_linear"
    decay_m: float = 1.0 / 300.0
    decay_beta: float = 0.01
    momentum: float = 0.9
    eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 100
    steps: int = 300
    eval_every: int = 5
    seed: int = 0
    train_limit: int = 5000
    test_limit: int = 1000
    data_dir: str = "data"
    out_dir: str = "out"
    synthetic: bool = False


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def parse_optional_int(s):
    return None if s.lower() == "none" else int(s)


_PARSERS = {
    "optimizer": str,
    "eta": float,
    "schedule": str,
    "decay_m": float,
    "decay_beta": float,
    "momentum": float,
    "eps": float,
    "beta1": float,
    "beta2": float,
    "batch_size": int,
    "steps": int,
    "eval_every": int,
    "seed": int,
    "train_limit": parse_optional_int,
    "test_limit": parse_optional_int,
    "data_dir": str,
    "out_dir": str,
    "synthetic": _parse_bool,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_config_file(path):
    """Read overrides from a config file into a key -> typed-value dict."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw.strip()!r}")
            key, value = key.strip(), value.strip()
            if key not in _PARSERS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                overrides[key] = _PARSERS[key](value)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    return overrides


def make_config(overrides):
    """Defaults + overrides, then the optimizer-dependent schedule default."""
    unknown = set(overrides) - set(_PARSERS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**overrides)
    if "schedule" not in overrides and cfg.optimizer in ("adagrad", "adam"):
        cfg = replace(cfg, schedule="constant")
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.steps < 1:
        raise ConfigError(f"steps must be >= 1, got {cfg.steps}")
    if cfg.eval_every < 1:
        raise ConfigError(f"eval_every must be >= 1, got {cfg.eval_every}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {cfg.batch_size}")
    for name in ("train_limit", "test_limit"):
        v = getattr(cfg, name)
        if v is not None and v < 1:
            raise ConfigError(f"{name} must be >= 1 or none, got {v}")
    try:
        build_rule(cfg)
        build_schedule(cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_rule(cfg):
    return UpdateRule.from_name(cfg.optimizer, mu=cfg.momentum, eps=cfg.eps,
                                beta1=cfg.beta1, beta2=cfg.beta2)


def build_schedule(cfg):
    if cfg.schedule == "constant":
        return Schedule.constant(cfg.eta)
    if cfg.schedule == "linear":
        return Schedule.linear(cfg.eta, cfg.decay_m)
    if cfg.schedule == "clamped_linear":
        return Schedule.clamped_linear(cfg.eta, cfg.decay_m, cfg.decay_beta)
    raise ConfigError(f"unknown schedule kind {cfg.schedule!r}")


def format_config(cfg):
    """Render a config in the file format; parse_config_file inverts this."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            text = "none"
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = f"{v:.17g}"
        else:
            text = str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
