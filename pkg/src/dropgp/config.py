"""Run configuration: a flat ``key = value`` text file.

Keys (defaults in brackets)::

    task              regression | classification      [regression]
    hidden            comma-separated hidden widths    [50,50]
    nonlinearity      relu | tanh | identity           [relu]
    scale_features    true | false                     [false]
    output_bias       true | false                     [false]
    keep_prob         one value or one per weight layer [0.9]
    tau               model precision                  (exactly one of
    weight_decay      lambda for every weight/bias      tau, weight_decay)
    lengthscale       first-layer prior length-scale   [1.0]
    bias_lengthscale  bias prior length-scale          [1.0]
    base_lr           [0.01]
    gamma             [0.0001]
    power             [0.25]
    momentum          [0.9]
    iterations        [1000]
    batch_size        mini-batch size M; 'all' for N   [all]
    seed              [0]
    samples           MC samples T for prediction/calibration [100]
    calibrate         store a calibration table        [true]

Blank lines and ``#`` comments are ignored.
"""
from dataclasses import dataclass, fields

from dropgp.numerics import ContractError, DomainError


class ConfigError(ValueError):
    pass


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _floats(v):
    return tuple(float(x) for x in str(v).split(","))


def _ints(v):
    return tuple(int(x) for x in str(v).split(","))


@dataclass(frozen=True)
class RunConfig:
    task: str = "regression"
    hidden: tuple = (50, 50)
    nonlinearity: str = "relu"
    scale_features: bool = False
    output_bias: bool = False
    keep_prob: tuple = (0.9,)
    tau: float = None
    weight_decay: float = None
    lengthscale: float = 1.0
    bias_lengthscale: float = 1.0
    base_lr: float = 0.01
    gamma: float = 1e-4
    power: float = 0.25
    momentum: float = 0.9
    iterations: int = 1000
    batch_size: int = None
    seed: int = 0
    samples: int = 100
    calibrate: bool = True

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        if (self.tau is None) == (self.weight_decay is None):
            raise ConfigError("give exactly one of tau and weight_decay")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if self.weight_decay is not None and not self.weight_decay > 0:
            raise ConfigError("weight_decay must be > 0")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden widths must be positive")
        if self.iterations < 0 or self.samples < 1:
            raise ConfigError("iterations must be >= 0 and samples >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if any(not 0 <= p <= 1 for p in self.keep_prob):
            raise ConfigError("keep probabilities must lie in [0, 1]")
        if len(self.keep_prob) not in (1, len(self.hidden) + 1):
            raise ConfigError("keep_prob needs one value or one per weight layer")

    def keep_probs(self):
        n = len(self.hidden) + 1
        return self.keep_prob * n if len(self.keep_prob) == 1 else self.keep_prob


_PARSERS = {
    "task": str, "hidden": _ints, "nonlinearity": str, "scale_features": _bool,
    "output_bias": _bool, "keep_prob": _floats, "tau": float, "weight_decay": float,
    "lengthscale": float, "bias_lengthscale": float, "base_lr": float, "gamma": float,
    "power": float, "momentum": float, "iterations": int,
    "batch_size": lambda v: None if str(v).strip() == "all" else int(v),
    "seed": int, "samples": int, "calibrate": _bool,
}


def parse(text):
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    try:
        return RunConfig(**values)
    except (ContractError, DomainError) as exc:
        raise ConfigError(str(exc)) from None


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(cfg):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            if f.name == "batch_size":
                lines.append("batch_size = all")
            continue
        lines.append(f"{f.name} = {_render(v)}")
    return "\n".join(lines) + "\n"


def load(path):
    with open(path) as fh:
        return parse(fh.read())
